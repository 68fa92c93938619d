#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rangedam/core_io.hpp"
#include "rangedam/tensor.hpp"

namespace rangedam::metrics {

/// K x K tally, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes, std::uint16_t ignore = kIgnoreLabel);

  std::size_t num_classes() const noexcept { return classes_; }
  std::uint16_t ignore_label() const noexcept { return ignore_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  std::uint64_t total() const noexcept;

  /// Adds one count per point whose ground truth is not the ignore label.
  /// Throws ShapeError on a length mismatch and PreconditionError when a
  /// scored id is outside [0, K).
  void accumulate(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred);
  void accumulate(const LabelArray& gt, const LabelArray& pred) { accumulate(gt.semantic, pred.semantic); }

  /// Element-wise sum; both matrices must agree on K and the ignore label.
  void merge(const ConfusionMatrix& other);

  /// TP / (TP + FP + FN); empty when the class is absent from both gt and pred.
  std::optional<double> iou(std::size_t k) const;
  /// Mean over classes with a defined IoU. Throws EvaluationError when none is.
  double miou() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::uint16_t ignore_;
  std::vector<std::uint64_t> counts_;
};

/// Per-class IoU (empty entries for undefined classes) and their mean.
struct IouReport {
  std::vector<std::optional<double>> per_class;
  double miou = 0.0;
};

IouReport evaluate(const ConfusionMatrix& cm);

/// CSV with header `class,name,iou` plus a final `mean` row; undefined
/// classes have an empty iou field.
std::string format_csv(const IouReport& report, std::span<const std::string> names = {});
/// Aligned text table, IoU in percent.
std::string format_table(const IouReport& report, std::span<const std::string> names = {});

/// Mean over all ordered channel pairs of (1 - cos) / 2, cosine taken over
/// the flattened H*W values; a pair with a zero-norm channel has cos = 0.
/// Input is C x H x W; throws PreconditionError when C = 0.
template <typename Real>
double channel_cosine_distance(const ad::Tensor<Real>& m);

}  // namespace rangedam::metrics
