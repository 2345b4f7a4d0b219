// Synthetic multimodal classification data with per-sample, per-modality
// effectiveness.
//
// Each modality m has its own class prototypes: random unit vectors scaled by
// `separation`. A clean cell is prototype(m, y) + N(0, noise_sigma[m]^2). A
// corrupted cell is drawn the same way around the prototype of a uniformly
// chosen wrong class, so that modality is confidently wrong for the sample.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "unismmc/batch.hpp"
#include "unismmc/io.hpp"
#include "unismmc/json_schema.hpp"

namespace unismmc {

enum class CorruptionOverlap {
  independent,  // each modality picks its corrupted samples on its own
  disjoint,     // no sample is corrupted in more than one modality
};

struct SynthSpec {
  std::size_t num_classes = 10;
  std::size_t modalities = 2;
  std::vector<std::size_t> feature_dims{64, 64};
  std::size_t train = 6000;
  std::size_t valid = 1000;
  std::size_t test = 1000;
  double separation = 4.0;
  std::vector<double> noise_sigma{2.0, 2.0};
  std::vector<double> corruption_rate{0.3, 0.3};
  CorruptionOverlap overlap = CorruptionOverlap::disjoint;
  std::uint64_t seed = 0;

  /// Number of corrupted cells of modality m in a split of n samples.
  std::size_t corrupted_count(std::size_t m, std::size_t n) const {
    // Nudge so that e.g. 0.3 * 1000 lands on 300 rather than 299.
    return static_cast<std::size_t>(std::floor(corruption_rate[m] * static_cast<double>(n) + 1e-9));
  }

  void validate() const {
    if (num_classes < 2) throw ConfigError("synth spec: num_classes must be >= 2");
    if (modalities < 1) throw ConfigError("synth spec: modalities must be >= 1");
    if (feature_dims.size() != modalities || noise_sigma.size() != modalities || corruption_rate.size() != modalities)
      throw ConfigError("synth spec: feature_dims, noise_sigma and corruption_rate need one entry per modality");
    for (auto d : feature_dims)
      if (d == 0) throw ConfigError("synth spec: feature dims must be >= 1");
    if (!(separation > 0.0)) throw ConfigError("synth spec: separation must be > 0");
    for (auto s : noise_sigma)
      if (!(s >= 0.0)) throw ConfigError("synth spec: noise_sigma must be >= 0");
    for (auto r : corruption_rate)
      if (!(r >= 0.0 && r < 1.0)) throw ConfigError("synth spec: corruption_rate must lie in [0, 1)");
    if (train == 0) throw ConfigError("synth spec: train split must be non-empty");
    if (overlap == CorruptionOverlap::disjoint) {
      double total = 0.0;
      for (auto r : corruption_rate) total += r;
      if (total > 1.0)
        throw ConfigError("synth spec: disjoint corruption needs rates summing to <= 1, got " + std::to_string(total));
      for (std::size_t n : {train, valid, test}) {
        std::size_t cells = 0;
        for (std::size_t m = 0; m < modalities; ++m) cells += corrupted_count(m, n);
        if (cells > n) throw ConfigError("synth spec: disjoint corruption sets do not fit in a split");
      }
    }
  }

  bool operator==(const SynthSpec&) const = default;
};

/// The benchmark spec: 10 classes, two 64-d modalities, each corrupted on a
/// disjoint 30% of samples.
inline SynthSpec semi70_spec(std::uint64_t seed = 0) {
  SynthSpec s;
  s.seed = seed;
  return s;
}

inline schema::json to_json(const SynthSpec& s) {
  return {{"num_classes", s.num_classes},
          {"modalities", s.modalities},
          {"feature_dims", s.feature_dims},
          {"train", s.train},
          {"valid", s.valid},
          {"test", s.test},
          {"separation", s.separation},
          {"noise_sigma", s.noise_sigma},
          {"corruption_rate", s.corruption_rate},
          {"overlap", s.overlap == CorruptionOverlap::disjoint ? "disjoint" : "independent"},
          {"seed", s.seed}};
}

/// Missing keys take the semi70 defaults; per-modality lists default to the
/// semi70 value repeated for every modality.
inline SynthSpec synth_spec_from_json(const schema::json& j, const std::string& where = "synth") {
  schema::Object o(j, where);
  o.only({"num_classes", "modalities", "feature_dims", "train", "valid", "test", "separation", "noise_sigma",
          "corruption_rate", "overlap", "seed"});
  SynthSpec s;
  s.num_classes = o.get_or<std::size_t>("num_classes", s.num_classes);
  s.modalities = o.get_or<std::size_t>("modalities", s.modalities);
  s.feature_dims = o.get_or("feature_dims", std::vector<std::size_t>(s.modalities, 64));
  s.train = o.get_or<std::size_t>("train", s.train);
  s.valid = o.get_or<std::size_t>("valid", s.valid);
  s.test = o.get_or<std::size_t>("test", s.test);
  s.separation = o.get_or<double>("separation", s.separation);
  s.noise_sigma = o.get_or("noise_sigma", std::vector<double>(s.modalities, 2.0));
  s.corruption_rate = o.get_or("corruption_rate", std::vector<double>(s.modalities, 0.3));
  const auto overlap = o.get_or<std::string>("overlap", "disjoint");
  if (overlap == "disjoint")
    s.overlap = CorruptionOverlap::disjoint;
  else if (overlap == "independent")
    s.overlap = CorruptionOverlap::independent;
  else
    throw ConfigError(o.path("overlap") + ": expected \"disjoint\" or \"independent\", got \"" + overlap + "\"");
  s.seed = o.get_or<std::uint64_t>("seed", s.seed);
  s.validate();
  return s;
}

struct Dataset {
  SynthSpec spec;
  MultimodalBatch train;
  MultimodalBatch valid;
  MultimodalBatch test;

  const MultimodalBatch& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "' (expected train, valid or test)");
  }

  bool operator==(const Dataset&) const = default;
};

inline Dataset generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t K = spec.num_classes, M = spec.modalities;

  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<Tensor>> prototypes(M);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t d = spec.feature_dims[m];
      Tensor p(1, d);
      double norm = 0.0;
      // Redraw in the (practically impossible) zero-vector case.
      while (!(norm > 0.0)) {
        norm = 0.0;
        for (auto& v : p.data()) {
          v = unit(rng);
          norm += v * v;
        }
        norm = std::sqrt(norm);
      }
      for (auto& v : p.data()) v *= spec.separation / norm;
      prototypes[m].push_back(std::move(p));
    }
  }

  std::uint64_t next_id = 0;
  auto make_split = [&](std::size_t n) {
    MultimodalBatch b;
    b.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.labels[i] = static_cast<int>(i % K);
    std::shuffle(b.labels.begin(), b.labels.end(), rng);
    b.ids.resize(n);
    std::iota(b.ids.begin(), b.ids.end(), next_id);
    next_id += n;

    b.corrupted.assign(M, std::vector<std::uint8_t>(n, 0));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (spec.overlap == CorruptionOverlap::disjoint) {
      std::shuffle(order.begin(), order.end(), rng);
      std::size_t cursor = 0;
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t c = spec.corrupted_count(m, n); c > 0; --c) b.corrupted[m][order[cursor++]] = 1;
    } else {
      for (std::size_t m = 0; m < M; ++m) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t c = 0; c < spec.corrupted_count(m, n); ++c) b.corrupted[m][order[c]] = 1;
      }
    }

    for (std::size_t m = 0; m < M; ++m) b.features.emplace_back(n, spec.feature_dims[m]);
    std::uniform_int_distribution<std::size_t> other(0, K - 2);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t m = 0; m < M; ++m) {
        auto cls = static_cast<std::size_t>(b.labels[i]);
        if (b.corrupted[m][i]) {
          const std::size_t r = other(rng);
          cls = r >= cls ? r + 1 : r;
        }
        const Tensor& proto = prototypes[m][cls];
        const double sigma = spec.noise_sigma[m];
        auto row = b.features[m].row_span(i);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = proto[c] + sigma * unit(rng);
      }
    }
    return b;
  };

  Dataset ds;
  ds.spec = spec;
  ds.train = make_split(spec.train);
  ds.valid = make_split(spec.valid);
  ds.test = make_split(spec.test);
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset file
//
//   "UMMCDATA"  u32 version
//   string      spec echo (JSON text, includes the seed)
//   u32         crc32 of the payload
//   u64         payload length
//   payload, for each of train / valid / test:
//     u64 n, u32 M, u32 d_m (M times)
//     u64 sample ids[n]
//     i32 labels[n]
//     f64 features[n * d_m] for each modality, row-major
//     corruption bitmap ceil(n/8) bytes for each modality, LSB = lowest index
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kDatasetMagic[8] = {'U', 'M', 'M', 'C', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void write_split(io::Writer& w, const MultimodalBatch& b) {
  const std::size_t n = b.size();
  w.put<std::uint64_t>(n);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.modalities()));
  for (const auto& f : b.features) w.put<std::uint32_t>(static_cast<std::uint32_t>(f.cols()));
  w.put_array<std::uint64_t>(b.ids);
  std::vector<std::int32_t> labels(b.labels.begin(), b.labels.end());
  w.put_array<std::int32_t>(labels);
  for (const auto& f : b.features) w.put_array<double>(f.data());
  for (const auto& c : b.corrupted) {
    std::vector<std::uint8_t> bits((n + 7) / 8, 0);
    for (std::size_t i = 0; i < n; ++i)
      if (c[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    w.put_array<std::uint8_t>(bits);
  }
}

inline MultimodalBatch read_split(io::Reader& r, const SynthSpec& spec, const std::string& ctx) {
  MultimodalBatch b;
  const auto n = r.get<std::uint64_t>();
  const auto M = r.get<std::uint32_t>();
  if (M != spec.modalities) throw FormatError(ctx + ": split modality count disagrees with header");
  std::vector<std::size_t> dims(M);
  for (std::size_t m = 0; m < M; ++m) {
    dims[m] = r.get<std::uint32_t>();
    if (dims[m] != spec.feature_dims[m]) throw FormatError(ctx + ": feature width disagrees with header");
  }
  // Guard allocations against corrupted sizes before trusting n.
  std::size_t row_bytes = 8 + 4;
  for (auto d : dims) row_bytes += 8 * d;
  if (n > r.remaining() / row_bytes) throw FormatError(ctx + ": truncated split");
  b.ids.resize(n);
  r.get_array<std::uint64_t>(b.ids);
  std::vector<std::int32_t> labels(n);
  r.get_array<std::int32_t>(labels);
  b.labels.assign(labels.begin(), labels.end());
  for (std::size_t m = 0; m < M; ++m) {
    Tensor f(n, dims[m]);
    r.get_array<double>(f.data());
    b.features.push_back(std::move(f));
  }
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<std::uint8_t> bits((n + 7) / 8);
    r.get_array<std::uint8_t>(bits);
    std::vector<std::uint8_t> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = (bits[i / 8] >> (i % 8)) & 1u;
    b.corrupted.push_back(std::move(c));
  }
  try {
    b.validate(spec.num_classes);
  } catch (const Error& e) {
    throw FormatError(ctx + ": " + e.what());
  }
  return b;
}

}  // namespace detail

inline std::string serialize_dataset(const Dataset& ds) {
  io::Writer payload;
  detail::write_split(payload, ds.train);
  detail::write_split(payload, ds.valid);
  detail::write_split(payload, ds.test);
  io::Writer w;
  w.put_bytes({kDatasetMagic, 8});
  w.put<std::uint32_t>(kDatasetVersion);
  w.put_string(to_json(ds.spec).dump());
  w.put<std::uint32_t>(io::crc32(payload.buffer()));
  w.put<std::uint64_t>(payload.buffer().size());
  w.put_bytes(payload.buffer());
  return w.buffer();
}

/// Checksum recorded in a serialized dataset's header.
inline std::uint32_t dataset_checksum(const Dataset& ds) {
  const auto bytes = serialize_dataset(ds);
  io::Reader r(bytes);
  r.get_bytes(12);
  r.get_string();
  return r.get<std::uint32_t>();
}

inline Dataset deserialize_dataset(std::string_view bytes, const std::string& ctx = "dataset") {
  io::Reader r(bytes, ctx);
  if (r.remaining() < 8 || r.get_bytes(8) != std::string_view(kDatasetMagic, 8))
    throw FormatError(ctx + ": not a dataset file (bad magic)");
  if (auto v = r.get<std::uint32_t>(); v != kDatasetVersion)
    throw FormatError(ctx + ": unsupported version " + std::to_string(v));
  Dataset ds;
  try {
    ds.spec = synth_spec_from_json(schema::parse(r.get_string(), ctx), "header");
  } catch (const ConfigError& e) {
    throw FormatError(ctx + ": bad header: " + e.what());
  }
  const auto crc = r.get<std::uint32_t>();
  const auto len = r.get<std::uint64_t>();
  if (len != r.remaining())
    throw FormatError(ctx + ": payload length " + std::to_string(len) + " but " + std::to_string(r.remaining()) +
                      " bytes follow");
  const auto payload = r.get_bytes(len);
  if (io::crc32(payload) != crc) throw FormatError(ctx + ": checksum mismatch");
  io::Reader p(payload, ctx);
  ds.train = detail::read_split(p, ds.spec, ctx);
  ds.valid = detail::read_split(p, ds.spec, ctx);
  ds.test = detail::read_split(p, ds.spec, ctx);
  if (p.remaining() != 0) throw FormatError(ctx + ": trailing bytes in payload");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_dataset(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(io::read_file(path), path.string());
}

}  // namespace unismmc
