#include "forensicflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "forensicflow/error.hpp"
#include "forensicflow/rng.hpp"

namespace ff {

using nlohmann::json;

namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

Counts confusion(const std::vector<PredictionRecord>& records, double threshold) {
  Counts c;
  for (const auto& r : records) {
    const bool predicted_fake = r.prob >= threshold;
    if (r.label == 1) (predicted_fake ? c.tp : c.fn)++;
    else (predicted_fake ? c.fp : c.tn)++;
  }
  return c;
}

bool both_classes(const std::vector<PredictionRecord>& records) {
  bool real = false, fake = false;
  for (const auto& r : records) (r.label == 1 ? fake : real) = true;
  return real && fake;
}

}  // namespace

double auc(const std::vector<PredictionRecord>& records) {
  // Rank-sum form: sort by score, give tied runs their average rank, then
  // U = sum of fake ranks - n_fake (n_fake + 1) / 2.
  std::vector<std::pair<double, int>> scored;
  scored.reserve(records.size());
  std::size_t n_fake = 0;
  for (const auto& r : records) {
    scored.emplace_back(r.prob, r.label);
    n_fake += r.label == 1;
  }
  const std::size_t n_real = records.size() - n_fake;
  if (n_fake == 0 || n_real == 0) throw UndefinedMetricError("AUC needs at least one real and one fake record");
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < scored.size();) {
    std::size_t j = i;
    while (j < scored.size() && scored[j].first == scored[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (scored[t].second == 1) rank_sum += avg_rank;
    i = j;
  }
  const double nf = static_cast<double>(n_fake), nr = static_cast<double>(n_real);
  return (rank_sum - nf * (nf + 1.0) / 2.0) / (nf * nr);
}

double f1(const std::vector<PredictionRecord>& records, double threshold) {
  const auto c = confusion(records, threshold);
  const double denom = 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp + c.fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / denom;
}

double accuracy(const std::vector<PredictionRecord>& records, double threshold) {
  if (records.empty()) throw UndefinedMetricError("accuracy of an empty record set");
  const auto c = confusion(records, threshold);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(records.size());
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::auc: return "auc";
    case Metric::f1: return "f1";
    case Metric::accuracy: return "accuracy";
  }
  return "?";
}

Metric parse_metric(const std::string& name) {
  if (name == "auc") return Metric::auc;
  if (name == "f1") return Metric::f1;
  if (name == "accuracy" || name == "acc") return Metric::accuracy;
  throw ConfigError("unknown metric '" + name + "' (expected auc, f1, accuracy)");
}

double compute_metric(Metric m, const std::vector<PredictionRecord>& records, double threshold) {
  switch (m) {
    case Metric::auc: return auc(records);
    case Metric::f1: return f1(records, threshold);
    case Metric::accuracy: return accuracy(records, threshold);
  }
  throw UsageError("bad metric");
}

double percentile_sorted(const std::vector<double>& sorted, double pct) {
  if (sorted.empty()) throw UndefinedMetricError("percentile of an empty sample");
  const double pos = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(const std::vector<PredictionRecord>& records, Metric metric, const BootstrapConfig& cfg) {
  if (!both_classes(records)) throw UndefinedMetricError("bootstrap needs both classes in the record set");
  if (cfg.n == 0) throw ConfigError("bootstrap sample count must be positive");
  Rng rng(cfg.seed);
  const std::size_t m = records.size();
  std::vector<double> values;
  values.reserve(cfg.n);
  std::vector<PredictionRecord> resample(m);
  for (std::size_t b = 0; b < cfg.n; ++b) {
    std::size_t attempt = 0;
    while (true) {
      for (auto& r : resample) r = records[rng.below(m)];
      if (both_classes(resample)) break;
      if (++attempt > cfg.max_retries) {
        throw UndefinedMetricError("bootstrap resample " + std::to_string(b) + " stayed single-class after " +
                                   std::to_string(cfg.max_retries) + " redraws");
      }
    }
    values.push_back(compute_metric(metric, resample, cfg.threshold));
  }
  std::sort(values.begin(), values.end());
  return {percentile_sorted(values, cfg.lo), percentile_sorted(values, cfg.hi)};
}

MetricReport make_report(const std::vector<PredictionRecord>& records, double threshold,
                         const std::optional<BootstrapConfig>& ci) {
  std::set<std::string> ids;
  MetricReport rep;
  for (const auto& r : records) {
    if (r.label != 0 && r.label != 1) throw DataError("record '" + r.id + "' has label outside {0,1}");
    if (!ids.insert(r.id).second) throw DataError("duplicate prediction id '" + r.id + "'");
    (r.label == 1 ? rep.n_fake : rep.n_real)++;
  }
  rep.threshold = threshold;
  rep.auc = auc(records);
  rep.f1 = f1(records, threshold);
  rep.accuracy = accuracy(records, threshold);
  if (ci) {
    auto cfg = *ci;
    cfg.threshold = threshold;
    rep.auc_ci = bootstrap_ci(records, Metric::auc, cfg);
    rep.f1_ci = bootstrap_ci(records, Metric::f1, cfg);
    rep.accuracy_ci = bootstrap_ci(records, Metric::accuracy, cfg);
  }
  return rep;
}

std::string MetricReport::to_json() const {
  json j{{"accuracy", accuracy}, {"auc", auc}, {"f1", f1}, {"threshold", threshold},
         {"n_real", n_real}, {"n_fake", n_fake}};
  auto put = [&](const char* key, const std::optional<Interval>& iv) {
    if (iv) j[std::string(key) + "_ci"] = {iv->lower, iv->upper};
  };
  put("auc", auc_ci);
  put("f1", f1_ci);
  put("accuracy", accuracy_ci);
  return j.dump(2);
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto row = [&](const char* name, double v, const std::optional<Interval>& iv) {
    os << std::left << std::setw(10) << name << std::right << std::setw(8) << v;
    if (iv) os << "  [" << iv->lower << ", " << iv->upper << "]";
    os << "\n";
  };
  row("AUC", auc, auc_ci);
  row("F1", f1, f1_ci);
  row("Accuracy", accuracy, accuracy_ci);
  os << std::left << std::setw(10) << "n_real" << std::right << std::setw(8) << n_real << "\n";
  os << std::left << std::setw(10) << "n_fake" << std::right << std::setw(8) << n_fake << "\n";
  return os.str();
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << json{{"id", r.id}, {"label", r.label}, {"prob", r.prob}}.dump() << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      PredictionRecord r{j.at("id").get<std::string>(), j.at("label").get<int>(), j.at("prob").get<double>()};
      if (r.label != 0 && r.label != 1) throw DataError("label must be 0 or 1");
      if (!(r.prob >= 0.0 && r.prob <= 1.0)) throw DataError("prob must lie in [0,1]");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ff
