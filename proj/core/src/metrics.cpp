#include "rangedam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "rangedam/error.hpp"

namespace rangedam::metrics {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::uint16_t ignore)
    : classes_(num_classes), ignore_(ignore), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw PreconditionError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::accumulate(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred) {
  if (gt.size() != pred.size())
    throw ShapeError("accumulate: " + std::to_string(gt.size()) + " ground-truth labels vs " +
                     std::to_string(pred.size()) + " predictions");
  // Validate first so a bad id leaves the matrix untouched.
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_) continue;
    if (gt[i] >= classes_ || pred[i] >= classes_)
      throw PreconditionError("accumulate: label outside [0, " + std::to_string(classes_) + ") at point " +
                              std::to_string(i));
  }
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i] != ignore_) ++counts_[gt[i] * classes_ + pred[i]];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_ || other.ignore_ != ignore_)
    throw ShapeError("merge: confusion matrices disagree on classes or ignore label");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::optional<double> ConfusionMatrix::iou(std::size_t k) const {
  if (k >= classes_) throw PreconditionError("iou: class " + std::to_string(k) + " out of range");
  const std::uint64_t tp = at(k, k);
  std::uint64_t fp = 0, fn = 0;
  for (std::size_t j = 0; j < classes_; ++j) {
    if (j == k) continue;
    fn += at(k, j);
    fp += at(j, k);
  }
  const std::uint64_t denom = tp + fp + fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

double ConfusionMatrix::miou() const {
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < classes_; ++k) {
    if (const auto v = iou(k)) {
      sum += *v;
      ++defined;
    }
  }
  if (defined == 0) throw EvaluationError("mIoU undefined: no class appears in ground truth or prediction");
  return sum / static_cast<double>(defined);
}

IouReport evaluate(const ConfusionMatrix& cm) {
  IouReport report;
  for (std::size_t k = 0; k < cm.num_classes(); ++k) report.per_class.push_back(cm.iou(k));
  report.miou = cm.miou();
  return report;
}

namespace {

std::string class_name(std::span<const std::string> names, std::size_t k) {
  return k < names.size() ? names[k] : "class_" + std::to_string(k);
}

}  // namespace

std::string format_csv(const IouReport& report, std::span<const std::string> names) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "class,name,iou\n";
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    os << k << ',' << class_name(names, k) << ',';
    if (report.per_class[k]) os << *report.per_class[k];
    os << '\n';
  }
  os << "mean,miou," << report.miou << '\n';
  return os.str();
}

std::string format_table(const IouReport& report, std::span<const std::string> names) {
  std::size_t width = 5;
  for (std::size_t k = 0; k < report.per_class.size(); ++k) width = std::max(width, class_name(names, k).size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "class" << "  " << std::right << std::setw(8) << "IoU(%)"
     << '\n';
  os << std::fixed << std::setprecision(2);
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    os << std::left << std::setw(static_cast<int>(width)) << class_name(names, k) << "  " << std::right
       << std::setw(8);
    if (report.per_class[k])
      os << 100.0 * *report.per_class[k];
    else
      os << "n/a";
    os << '\n';
  }
  os << std::left << std::setw(static_cast<int>(width)) << "mIoU" << "  " << std::right << std::setw(8)
     << 100.0 * report.miou << '\n';
  return os.str();
}

template <typename Real>
double channel_cosine_distance(const ad::Tensor<Real>& m) {
  if (m.shape.rank() != 3) throw ShapeError("channel_cosine_distance expects C x H x W, got " + m.shape.str());
  const std::size_t channels = m.shape[0], plane = m.shape[1] * m.shape[2];
  if (channels == 0) throw PreconditionError("channel_cosine_distance needs C >= 1");

  // Squared norms: sqrt(n_i * n_j) of identical channels reproduces their
  // dot product exactly, so identical channels give cos == 1 bit for bit.
  std::vector<double> sq(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) sq[c] += static_cast<double>(m[c * plane + p]) * m[c * plane + p];

  // Symmetric in (i, j) and zero on the diagonal for non-zero channels, so
  // sum the upper triangle twice and add the diagonal terms.
  double total = 0.0;
  for (std::size_t i = 0; i < channels; ++i) {
    total += sq[i] > 0.0 ? 0.0 : 0.5;
    for (std::size_t j = i + 1; j < channels; ++j) {
      double cos = 0.0;
      if (sq[i] > 0.0 && sq[j] > 0.0) {
        double dot = 0.0;
        for (std::size_t p = 0; p < plane; ++p) dot += static_cast<double>(m[i * plane + p]) * m[j * plane + p];
        cos = std::clamp(dot / std::sqrt(sq[i] * sq[j]), -1.0, 1.0);
      }
      total += 1.0 - cos;
    }
  }
  return total / (static_cast<double>(channels) * static_cast<double>(channels));
}

template double channel_cosine_distance(const ad::Tensor<float>&);
template double channel_cosine_distance(const ad::Tensor<double>&);

}  // namespace rangedam::metrics
