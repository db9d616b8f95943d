#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "retino/dataset.hpp"
#include "retino/model.hpp"

namespace retino {

/// Rows are true classes, columns predicted classes, canonical order.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t column_sum(std::size_t c) const;
  std::uint64_t trace() const;

  bool operator==(const ConfusionMatrix&) const = default;
};

/// Throws LengthMismatch or Empty.
ConfusionMatrix confusion_matrix(std::span<const GradeLabel> true_labels,
                                 std::span<const GradeLabel> predicted_labels);

struct OneVsRestCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  bool operator==(const OneVsRestCounts&) const = default;
};

/// Throws IndexOutOfRange.
OneVsRestCounts one_vs_rest_counts(const ConfusionMatrix& cm, std::size_t class_index);

enum class Metric { TPR, TNR, PPV, NPV, FPR, FNR, FDR, ACC };
inline constexpr std::array<Metric, 8> kAllMetrics = {
    Metric::TPR, Metric::TNR, Metric::PPV, Metric::NPV,
    Metric::FPR, Metric::FNR, Metric::FDR, Metric::ACC};

std::string_view metric_name(Metric m);
/// Error rates (FPR, FNR, FDR) are better when lower.
bool lower_is_better(Metric m);

/// The eight one-vs-rest ratios. A 0/0 ratio is reported as 0 with its
/// `undefined` bit set.
struct ClassMetricsRow {
  std::array<double, 8> values{};
  std::array<bool, 8> undefined{};

  double operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }
  bool is_undefined(Metric m) const { return undefined[static_cast<std::size_t>(m)]; }
  bool any_undefined() const;
};

ClassMetricsRow class_metrics(const ConfusionMatrix& cm, std::size_t class_index);

/// Throws Empty.
double overall_accuracy(const ConfusionMatrix& cm);

struct MetricsTable {
  std::array<ClassMetricsRow, kNumClasses> rows{};
  /// Unweighted mean over the five classes (an addition beyond the
  /// per-class table).
  std::array<double, 8> macro{};
  double overall_accuracy = 0.0;
};

MetricsTable metrics_table(const ConfusionMatrix& cm);

struct RocPoint {
  double threshold;  // +inf for the (0,0) sentinel
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;
  std::optional<double> auc;  // absent for a degenerate class
};

/// Binary ROC from scores and positive flags: thresholds are the unique
/// scores in descending order behind a +inf sentinel, a sample is called
/// positive when score >= threshold, AUC is the trapezoidal area. Throws
/// DegenerateClass when there are no positives or no negatives.
RocCurve binary_roc(std::span<const double> scores, std::span<const bool> positive);

/// One-vs-rest ROC on column `class_index` of the probability rows.
RocCurve roc_curve(const Matrix& probabilities, std::span<const GradeLabel> true_labels,
                   std::size_t class_index);

/// Per-class curves; degenerate classes get an empty curve with no AUC.
std::array<RocCurve, kNumClasses> roc_curves(const Matrix& probabilities,
                                             std::span<const GradeLabel> true_labels);

}  // namespace retino
