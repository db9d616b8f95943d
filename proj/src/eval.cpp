#include "retino/eval.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <numeric>

#include "retino/error.hpp"

namespace retino {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), std::uint64_t{0});
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  return std::accumulate(counts.at(c).begin(), counts.at(c).end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (const auto& row : counts) s += row.at(c);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) s += counts[c][c];
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const GradeLabel> true_labels,
                                 std::span<const GradeLabel> predicted_labels) {
  if (true_labels.size() != predicted_labels.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(true_labels.size()) + " vs " +
                                               std::to_string(predicted_labels.size()));
  }
  if (true_labels.empty()) throw Error(ErrorCode::Empty, "no samples");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    ++cm.counts[label_index(true_labels[i])][label_index(predicted_labels[i])];
  }
  return cm;
}

OneVsRestCounts one_vs_rest_counts(const ConfusionMatrix& cm, std::size_t class_index) {
  if (class_index >= kNumClasses) {
    throw Error(ErrorCode::IndexOutOfRange, "class " + std::to_string(class_index));
  }
  OneVsRestCounts r;
  r.tp = cm.counts[class_index][class_index];
  r.fn = cm.row_sum(class_index) - r.tp;
  r.fp = cm.column_sum(class_index) - r.tp;
  r.tn = cm.total() - r.tp - r.fp - r.fn;
  return r;
}

std::string_view metric_name(Metric m) {
  static constexpr std::array<std::string_view, 8> kNames = {
      "TPR", "TNR", "PPV", "NPV", "FPR", "FNR", "FDR", "ACC"};
  return kNames[static_cast<std::size_t>(m)];
}

bool lower_is_better(Metric m) {
  return m == Metric::FPR || m == Metric::FNR || m == Metric::FDR;
}

bool ClassMetricsRow::any_undefined() const {
  return std::any_of(undefined.begin(), undefined.end(), [](bool b) { return b; });
}

ClassMetricsRow class_metrics(const ConfusionMatrix& cm, std::size_t class_index) {
  const auto k = one_vs_rest_counts(cm, class_index);
  ClassMetricsRow row;
  const auto set = [&row](Metric m, std::uint64_t num, std::uint64_t den) {
    const auto i = static_cast<std::size_t>(m);
    if (den == 0) {
      row.values[i] = 0.0;
      row.undefined[i] = true;
    } else {
      row.values[i] = static_cast<double>(num) / static_cast<double>(den);
    }
  };
  set(Metric::TPR, k.tp, k.tp + k.fn);
  set(Metric::TNR, k.tn, k.tn + k.fp);
  set(Metric::PPV, k.tp, k.tp + k.fp);
  set(Metric::NPV, k.tn, k.tn + k.fn);
  set(Metric::FPR, k.fp, k.fp + k.tn);
  set(Metric::FNR, k.fn, k.fn + k.tp);
  set(Metric::FDR, k.fp, k.fp + k.tp);
  set(Metric::ACC, k.tp + k.tn, cm.total());
  return row;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw Error(ErrorCode::Empty, "empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

MetricsTable metrics_table(const ConfusionMatrix& cm) {
  MetricsTable t;
  t.overall_accuracy = overall_accuracy(cm);
  for (std::size_t c = 0; c < kNumClasses; ++c) t.rows[c] = class_metrics(cm, c);
  for (std::size_t m = 0; m < t.macro.size(); ++m) {
    double sum = 0.0;
    for (const auto& row : t.rows) sum += row.values[m];
    t.macro[m] = sum / static_cast<double>(kNumClasses);
  }
  return t;
}

RocCurve binary_roc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) {
    throw Error(ErrorCode::LengthMismatch, "scores vs labels");
  }
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t n_neg = positive.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw Error(ErrorCode::DegenerateClass,
                n_pos == 0 ? "no positive samples" : "no negative samples");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    // Everything tied at this score crosses the threshold together.
    while (i < order.size() && scores[order[i]] == threshold) {
      (positive[order[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.points.push_back({threshold, static_cast<double>(fp) / static_cast<double>(n_neg),
                            static_cast<double>(tp) / static_cast<double>(n_pos)});
  }

  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  curve.auc = area;
  return curve;
}

RocCurve roc_curve(const Matrix& probabilities, std::span<const GradeLabel> true_labels,
                   std::size_t class_index) {
  if (class_index >= kNumClasses) {
    throw Error(ErrorCode::IndexOutOfRange, "class " + std::to_string(class_index));
  }
  if (static_cast<std::size_t>(probabilities.rows()) != true_labels.size() ||
      static_cast<std::size_t>(probabilities.cols()) != kNumClasses) {
    throw Error(ErrorCode::LengthMismatch, "probabilities vs labels");
  }
  const std::size_t n = true_labels.size();
  std::vector<double> scores(n);
  // std::vector<bool> is not contiguous, hence the plain array.
  auto positive = std::make_unique<bool[]>(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = probabilities(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(class_index));
    positive[i] = label_index(true_labels[i]) == class_index;
  }
  return binary_roc(scores, std::span<const bool>(positive.get(), n));
}

std::array<RocCurve, kNumClasses> roc_curves(const Matrix& probabilities,
                                             std::span<const GradeLabel> true_labels) {
  std::array<RocCurve, kNumClasses> curves;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    try {
      curves[c] = roc_curve(probabilities, true_labels, c);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateClass) throw;
      curves[c] = RocCurve{};
    }
  }
  return curves;
}

}  // namespace retino
