#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unismmc/errors.hpp"
#include "unismmc/tensor.hpp"

namespace unismmc {

/// Row-aligned per-modality features with labels. `corrupted[m][i]` is the
/// generator's ground truth for whether modality m of sample i was drawn
/// from a wrong class; training code never reads it.
struct MultimodalBatch {
  std::vector<Tensor> features;
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;
  std::vector<std::vector<std::uint8_t>> corrupted;

  std::size_t size() const { return labels.size(); }
  std::size_t modalities() const { return features.size(); }

  /// Throws unless every modality has one row per label and labels are in [0, K).
  void validate(std::size_t num_classes) const {
    for (std::size_t m = 0; m < features.size(); ++m)
      if (features[m].rows() != labels.size())
        throw AlignmentError("modality " + std::to_string(m) + " has " +
                             std::to_string(features[m].rows()) + " rows but batch has " +
                             std::to_string(labels.size()) + " labels");
    if (!ids.empty() && ids.size() != labels.size()) throw AlignmentError("sample id count differs from label count");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
        throw DataError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                        " outside [0, " + std::to_string(num_classes) + ")");
  }

  MultimodalBatch subset(std::span<const std::size_t> rows) const {
    MultimodalBatch out;
    out.features.reserve(features.size());
    for (const auto& f : features) {
      Tensor t(rows.size(), f.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = f.row_span(rows[i]);
        std::copy(src.begin(), src.end(), t.row_span(i).begin());
      }
      out.features.push_back(std::move(t));
    }
    out.labels.reserve(rows.size());
    for (auto r : rows) out.labels.push_back(labels[r]);
    if (!ids.empty())
      for (auto r : rows) out.ids.push_back(ids[r]);
    for (const auto& c : corrupted) {
      std::vector<std::uint8_t> sel;
      sel.reserve(rows.size());
      for (auto r : rows) sel.push_back(c[r]);
      out.corrupted.push_back(std::move(sel));
    }
    return out;
  }

  bool operator==(const MultimodalBatch&) const = default;
};

}  // namespace unismmc
