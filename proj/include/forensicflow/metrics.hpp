#pragma once

// Segment-level metrics with fake (label 1) as the positive class, seeded
// percentile-bootstrap intervals, and the prediction/report file formats.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ff {

struct PredictionRecord {
  std::string id;
  int label = 0;  // 0 real, 1 fake
  double prob = 0.5;
};

/// Mann-Whitney statistic: (concordant + 0.5 * tied) / (n_fake * n_real).
/// Throws UndefinedMetricError unless both classes are present.
double auc(const std::vector<PredictionRecord>& records);
/// Predicted fake when prob >= threshold. 0 when precision + recall is 0.
double f1(const std::vector<PredictionRecord>& records, double threshold = 0.5);
double accuracy(const std::vector<PredictionRecord>& records, double threshold = 0.5);

enum class Metric { auc, f1, accuracy };
std::string to_string(Metric m);
Metric parse_metric(const std::string& name);
double compute_metric(Metric m, const std::vector<PredictionRecord>& records, double threshold = 0.5);

struct BootstrapConfig {
  std::size_t n = 1000;
  std::uint64_t seed = 42;
  double lo = 2.5, hi = 97.5;
  std::size_t max_retries = 100;
  double threshold = 0.5;
};

struct Interval {
  double lower = 0, upper = 0;
};

/// Percentile bootstrap. Resample indices come from Rng(cfg.seed).below(n);
/// a resample holding a single class is redrawn (at most max_retries times,
/// then UndefinedMetricError). Percentiles interpolate linearly between order
/// statistics at rank p/100 * (n - 1).
Interval bootstrap_ci(const std::vector<PredictionRecord>& records, Metric metric, const BootstrapConfig& cfg = {});

/// Linear-interpolated percentile of already sorted values.
double percentile_sorted(const std::vector<double>& sorted, double pct);

struct MetricReport {
  double accuracy = 0, auc = 0, f1 = 0;
  double threshold = 0.5;
  std::size_t n_real = 0, n_fake = 0;
  std::optional<Interval> auc_ci, f1_ci, accuracy_ci;

  std::string to_json() const;
  /// Aligned two-column table.
  std::string to_text() const;
};

/// Point metrics, plus bootstrap intervals when `ci` is given. Throws
/// DataError on duplicate ids or labels outside {0,1}.
MetricReport make_report(const std::vector<PredictionRecord>& records, double threshold = 0.5,
                         const std::optional<BootstrapConfig>& ci = std::nullopt);

/// JSON Lines, one {"id", "label", "prob"} per record.
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace ff
