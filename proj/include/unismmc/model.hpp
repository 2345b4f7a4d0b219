// Modality encoders, unimodal classifiers and the concatenation-fusion
// classifier, all small perceptrons on top of the autodiff core.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "unismmc/autodiff.hpp"
#include "unismmc/batch.hpp"
#include "unismmc/io.hpp"

namespace unismmc {

struct EncoderSpec {
  std::size_t input_dim = 64;
  std::vector<std::size_t> hidden_dims{64, 64};
  std::size_t output_dim = 32;  // d_r, shared by every modality

  bool operator==(const EncoderSpec&) const = default;
};

/// Three affine maps with a rectifier after the first two.
struct ClassifierSpec {
  std::size_t input_dim = 32;
  std::array<std::size_t, 2> hidden_dims{64, 64};
  std::size_t num_classes = 10;

  bool operator==(const ClassifierSpec&) const = default;
};

struct ModelSpec {
  std::vector<EncoderSpec> encoders;
  std::array<std::size_t, 2> classifier_hidden{64, 64};
  std::size_t num_classes = 10;

  std::size_t modalities() const { return encoders.size(); }
  std::size_t representation_dim() const { return encoders.empty() ? 0 : encoders.front().output_dim; }

  ClassifierSpec unimodal_classifier() const {
    return {representation_dim(), classifier_hidden, num_classes};
  }
  ClassifierSpec fusion_classifier() const {
    return {representation_dim() * modalities(), classifier_hidden, num_classes};
  }

  void validate() const {
    if (encoders.empty()) throw ConfigError("model needs at least one modality encoder");
    if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
    for (auto h : classifier_hidden)
      if (h == 0) throw ConfigError("classifier hidden widths must be >= 1");
    const auto dr = encoders.front().output_dim;
    for (std::size_t m = 0; m < encoders.size(); ++m) {
      const auto& e = encoders[m];
      if (e.input_dim == 0 || e.output_dim == 0)
        throw ConfigError("encoder " + std::to_string(m) + ": dimensions must be >= 1");
      for (auto h : e.hidden_dims)
        if (h == 0) throw ConfigError("encoder " + std::to_string(m) + ": hidden widths must be >= 1");
      if (e.output_dim != dr)
        throw ConfigError("encoder " + std::to_string(m) + " outputs width " + std::to_string(e.output_dim) +
                          " but encoder 0 outputs " + std::to_string(dr) +
                          "; representation widths must match");
    }
  }

  bool operator==(const ModelSpec&) const = default;
};

/// Affine map x W + b with W stored fan_in x fan_out.
struct Linear {
  Parameter weight;
  Parameter bias;

  Var forward(Graph& g, const Var& x) {
    return add(matmul(x, g.parameter(weight)), g.parameter(bias));
  }
};

struct Mlp {
  std::vector<Linear> layers;

  /// Affine layers with a rectifier between consecutive layers; the last
  /// layer stays linear.
  Var forward(Graph& g, Var x) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].forward(g, x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }

  std::size_t input_dim() const { return layers.front().weight.value.rows(); }
  std::size_t output_dim() const { return layers.back().weight.value.cols(); }
};

struct ModelState {
  ModelSpec spec;
  std::vector<Mlp> encoders;
  std::vector<Mlp> unimodal_classifiers;
  Mlp fusion_classifier;

  /// Every trainable tensor in a fixed order: encoders, unimodal
  /// classifiers, fusion classifier; weight before bias.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    auto collect = [&](Mlp& m) {
      for (auto& l : m.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      }
    };
    for (auto& e : encoders) collect(e);
    for (auto& c : unimodal_classifiers) collect(c);
    collect(fusion_classifier);
    return out;
  }
  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<ModelState*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  bool operator==(const ModelState& o) const {
    if (!(spec == o.spec)) return false;
    auto a = parameters(), b = o.parameters();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i]->name != b[i]->name || !(a[i]->value == b[i]->value)) return false;
    return true;
  }
};

namespace detail {

inline Mlp make_mlp(const std::string& prefix, const std::vector<std::size_t>& widths, std::mt19937_64& rng) {
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t fan_in = widths[i], fan_out = widths[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w(fan_in, fan_out);
    for (auto& v : w.data()) v = dist(rng);
    const std::string name = prefix + ".layer" + std::to_string(i);
    m.layers.push_back({Parameter(name + ".weight", std::move(w)), Parameter(name + ".bias", Tensor(1, fan_out))});
  }
  return m;
}

inline std::vector<std::size_t> widths_of(const EncoderSpec& e) {
  std::vector<std::size_t> w{e.input_dim};
  w.insert(w.end(), e.hidden_dims.begin(), e.hidden_dims.end());
  w.push_back(e.output_dim);
  return w;
}

inline std::vector<std::size_t> widths_of(const ClassifierSpec& c) {
  return {c.input_dim, c.hidden_dims[0], c.hidden_dims[1], c.num_classes};
}

inline Mlp shape_only_mlp(const std::string& prefix, const std::vector<std::size_t>& widths) {
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::string name = prefix + ".layer" + std::to_string(i);
    m.layers.push_back({Parameter(name + ".weight", Tensor(widths[i], widths[i + 1])),
                        Parameter(name + ".bias", Tensor(1, widths[i + 1]))});
  }
  return m;
}

}  // namespace detail

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. Deterministic per seed.
inline ModelState init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ModelState s;
  s.spec = spec;
  for (std::size_t m = 0; m < spec.modalities(); ++m)
    s.encoders.push_back(detail::make_mlp("encoder" + std::to_string(m), detail::widths_of(spec.encoders[m]), rng));
  for (std::size_t m = 0; m < spec.modalities(); ++m)
    s.unimodal_classifiers.push_back(
        detail::make_mlp("classifier" + std::to_string(m), detail::widths_of(spec.unimodal_classifier()), rng));
  s.fusion_classifier = detail::make_mlp("fusion", detail::widths_of(spec.fusion_classifier()), rng);
  return s;
}

/// One n x d_r representation per modality, rows aligned with the batch.
inline std::vector<Var> encode(Graph& g, ModelState& state, const MultimodalBatch& batch) {
  if (batch.modalities() != state.encoders.size())
    throw DimensionError("batch has " + std::to_string(batch.modalities()) + " modalities, model has " +
                         std::to_string(state.encoders.size()));
  std::vector<Var> reps;
  for (std::size_t m = 0; m < batch.modalities(); ++m) {
    const Tensor& x = batch.features[m];
    if (x.cols() != state.spec.encoders[m].input_dim)
      throw DimensionError("modality " + std::to_string(m) + ": feature width " + std::to_string(x.cols()) +
                           " but encoder expects " + std::to_string(state.spec.encoders[m].input_dim));
    reps.push_back(state.encoders[m].forward(g, g.constant(x)));
  }
  return reps;
}

/// Raw logits of modality m's classifier.
inline Var predict_unimodal(Graph& g, ModelState& state, std::size_t modality, const Var& rep) {
  if (modality >= state.unimodal_classifiers.size())
    throw DimensionError("no unimodal classifier for modality " + std::to_string(modality));
  auto& clf = state.unimodal_classifiers[modality];
  if (rep.value().cols() != clf.input_dim())
    throw DimensionError("modality " + std::to_string(modality) + ": representation width " +
                         std::to_string(rep.value().cols()) + " but classifier expects " +
                         std::to_string(clf.input_dim()));
  return clf.forward(g, rep);
}

struct FusionOutput {
  Var fused;   // r_1 (+) r_2 (+) ... in modality order
  Var logits;
};

inline FusionOutput fuse_and_predict(Graph& g, ModelState& state, const std::vector<Var>& reps) {
  if (reps.empty()) throw AlignmentError("fusion needs at least one representation");
  for (std::size_t m = 1; m < reps.size(); ++m)
    if (reps[m].value().rows() != reps[0].value().rows())
      throw AlignmentError("representation " + std::to_string(m) + " has " +
                           std::to_string(reps[m].value().rows()) + " rows, representation 0 has " +
                           std::to_string(reps[0].value().rows()));
  Var fused = concat(reps, 1);
  if (fused.value().cols() != state.fusion_classifier.input_dim())
    throw DimensionError("fused width " + std::to_string(fused.value().cols()) + " but fusion classifier expects " +
                         std::to_string(state.fusion_classifier.input_dim()));
  return {fused, state.fusion_classifier.forward(g, fused)};
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "UMMCCKPT"  u32 version
//   u32 M, per encoder: u32 input_dim, u32 #hidden, u32 hidden..., u32 output_dim
//   u32 classifier_hidden[2], u32 num_classes
//   u32 #params, per param: string name, u32 rows, u32 cols, f64 values[rows*cols]
//   u32 crc32 of everything above
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'U', 'M', 'M', 'C', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const ModelState& state) {
  io::Writer w;
  w.put_bytes({kCheckpointMagic, 8});
  w.put<std::uint32_t>(kCheckpointVersion);
  const auto& spec = state.spec;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.encoders.size()));
  for (const auto& e : spec.encoders) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.input_dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.hidden_dims.size()));
    for (auto h : e.hidden_dims) w.put<std::uint32_t>(static_cast<std::uint32_t>(h));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.output_dim));
  }
  for (auto h : spec.classifier_hidden) w.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.num_classes));
  const auto params = state.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.put_string(p->name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->value.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->value.cols()));
    w.put_array<double>(p->value.data());
  }
  w.put<std::uint32_t>(io::crc32(w.buffer()));
  return w.buffer();
}

inline ModelState deserialize_checkpoint(std::string_view bytes, const std::string& context = "checkpoint") {
  if (bytes.size() < 12 || bytes.substr(0, 8) != std::string_view(kCheckpointMagic, 8))
    throw FormatError(context + ": not a checkpoint file (bad magic)");
  const auto body = bytes.substr(0, bytes.size() - 4);
  io::Reader tail(bytes.substr(bytes.size() - 4), context);
  if (tail.get<std::uint32_t>() != io::crc32(body)) throw FormatError(context + ": checksum mismatch");
  io::Reader r(body, context);
  r.get_bytes(8);
  if (auto v = r.get<std::uint32_t>(); v != kCheckpointVersion)
    throw FormatError(context + ": unsupported version " + std::to_string(v));
  ModelSpec spec;
  const auto m = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < m; ++i) {
    EncoderSpec e;
    e.input_dim = r.get<std::uint32_t>();
    e.hidden_dims.resize(r.get<std::uint32_t>());
    for (auto& h : e.hidden_dims) h = r.get<std::uint32_t>();
    e.output_dim = r.get<std::uint32_t>();
    spec.encoders.push_back(e);
  }
  for (auto& h : spec.classifier_hidden) h = r.get<std::uint32_t>();
  spec.num_classes = r.get<std::uint32_t>();
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw FormatError(context + ": invalid model spec: " + e.what());
  }

  ModelState s;
  s.spec = spec;
  for (std::size_t i = 0; i < spec.modalities(); ++i)
    s.encoders.push_back(detail::shape_only_mlp("encoder" + std::to_string(i), detail::widths_of(spec.encoders[i])));
  for (std::size_t i = 0; i < spec.modalities(); ++i)
    s.unimodal_classifiers.push_back(
        detail::shape_only_mlp("classifier" + std::to_string(i), detail::widths_of(spec.unimodal_classifier())));
  s.fusion_classifier = detail::shape_only_mlp("fusion", detail::widths_of(spec.fusion_classifier()));

  auto params = s.parameters();
  if (r.get<std::uint32_t>() != params.size()) throw FormatError(context + ": parameter count does not match spec");
  for (auto* p : params) {
    const auto name = r.get_string();
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
      throw FormatError(context + ": parameter '" + name + "' does not match expected '" + p->name + "' " +
                        to_string(p->value.shape()));
    r.get_array<double>(p->value.data());
  }
  if (r.remaining() != 0) throw FormatError(context + ": trailing bytes");
  return s;
}

inline void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_checkpoint(state));
}

inline ModelState load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path), path.string());
}

}  // namespace unismmc
