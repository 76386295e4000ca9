#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sleepnet/common.hpp"

namespace sleepnet::metrics {

// Rows are true labels, columns are predictions.
struct ConfusionMatrix {
  int k = 0;
  std::vector<std::int64_t> counts;  // k*k row-major

  std::int64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth * k + pred)];
  }
  std::int64_t& at(int truth, int pred) {
    return counts[static_cast<std::size_t>(truth * k + pred)];
  }
  std::int64_t total() const;
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int pred) const;
  // Row-normalized percentages (0..100); rows with zero support yield zeros.
  std::vector<double> row_percent() const;
};

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels, int k);

// Metrics that are undefined on an empty class carry no value rather than 0.
struct ClassSummary {
  std::optional<double> precision;  // undefined when the class is never predicted
  std::optional<double> recall;     // undefined when the class has no support
  std::optional<double> f1;
  std::int64_t support = 0;
};

struct Summary {
  double accuracy = 0.0;
  std::optional<double> balanced_accuracy;  // mean recall over supported classes
  double kappa = 0.0;
  std::vector<ClassSummary> per_class;
  std::optional<double> macro_precision, macro_recall, macro_f1;
  std::optional<double> weighted_precision, weighted_recall, weighted_f1;
};

Summary summarize(const ConfusionMatrix& cm);

// Aligned text report in the style of a classification report; undefined
// metrics print as "n/a".
std::string format_report(const Summary& s, const std::vector<std::string>& class_names);

// Confusion matrix as CSV (header row/column with class names).
std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

// Wall-clock latency of fn() over `reps` repetitions after `warmup` calls.
struct LatencyStats {
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double mean_ms = 0.0;
};
LatencyStats latency_probe(const std::function<void()>& fn, int reps, int warmup = 3);

}  // namespace sleepnet::metrics
