#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphfcn/errors.hpp"
#include "graphfcn/labels.hpp"

namespace gfcn {

/// counts(i, j) = pixels of true class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes)
      : ncl_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const noexcept { return ncl_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * ncl_ + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * ncl_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }

  /// Adds one image; pixels with IGNORE truth are skipped.
  void accumulate(const LabelMap& predicted, const LabelMap& truth) {
    if (predicted.height != truth.height || predicted.width != truth.width) {
      throw DimensionError("accumulate: prediction " + std::to_string(predicted.height) + "x" +
                           std::to_string(predicted.width) + " vs truth " + std::to_string(truth.height) +
                           "x" + std::to_string(truth.width));
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const Label t = truth.data[i], p = predicted.data[i];
      if (t == kIgnoreLabel) continue;
      if (t >= ncl_ || p >= ncl_) {
        throw ValidationError("accumulate: label out of range at pixel " + std::to_string(i));
      }
      ++at(t, p);
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.ncl_ != ncl_) throw DimensionError("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

  /// Row sum t_i.
  std::uint64_t truth_count(std::size_t i) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < ncl_; ++j) s += at(i, j);
    return s;
  }

  /// Column sum Σ_j n_ji.
  std::uint64_t predicted_count(std::size_t i) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < ncl_; ++j) s += at(j, i);
    return s;
  }

  /// n_ii / (t_i + Σ_j n_ji − n_ii); empty when the class is absent from both.
  std::optional<double> class_iou(std::size_t i) const {
    const std::uint64_t uni = truth_count(i) + predicted_count(i) - at(i, i);
    if (uni == 0) return std::nullopt;
    return static_cast<double>(at(i, i)) / static_cast<double>(uni);
  }

 private:
  std::size_t ncl_;
  std::vector<std::uint64_t> counts_;
};

namespace detail {
inline void require_counts(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw UndefinedMetricError("metric undefined on an empty confusion matrix");
}
}  // namespace detail

inline double pixel_accuracy(const ConfusionMatrix& cm) {
  detail::require_counts(cm);
  std::uint64_t diag = 0;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) diag += cm.at(i, i);
  return static_cast<double>(diag) / static_cast<double>(cm.total());
}

/// Mean IoU over classes present in truth or prediction.
inline double mean_iou(const ConfusionMatrix& cm) {
  detail::require_counts(cm);
  double s = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    if (auto iou = cm.class_iou(i)) {
      s += *iou;
      ++present;
    }
  }
  return s / static_cast<double>(present);
}

inline double freq_weighted_iou(const ConfusionMatrix& cm) {
  detail::require_counts(cm);
  double s = 0.0;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    if (auto iou = cm.class_iou(i)) s += static_cast<double>(cm.truth_count(i)) * *iou;
  }
  return s / static_cast<double>(cm.total());
}

struct SegmentationMetrics {
  double miou = 0.0;
  double acc = 0.0;
  double fwiu = 0.0;
  std::vector<std::optional<double>> per_class_iou;
};

inline SegmentationMetrics compute_metrics(const ConfusionMatrix& cm) {
  SegmentationMetrics m;
  m.miou = mean_iou(cm);
  m.acc = pixel_accuracy(cm);
  m.fwiu = freq_weighted_iou(cm);
  for (std::size_t i = 0; i < cm.num_classes(); ++i) m.per_class_iou.push_back(cm.class_iou(i));
  return m;
}

/// {"miou":…, "acc":…, "fwiu":…, "per_class_iou":[…]}; absent classes are null.
inline nlohmann::ordered_json metrics_to_json(const SegmentationMetrics& m) {
  nlohmann::ordered_json j;
  j["miou"] = m.miou;
  j["acc"] = m.acc;
  j["fwiu"] = m.fwiu;
  j["per_class_iou"] = nlohmann::ordered_json::array();
  for (const auto& v : m.per_class_iou) {
    if (v) j["per_class_iou"].push_back(*v);
    else j["per_class_iou"].push_back(nullptr);
  }
  return j;
}

}  // namespace gfcn
