#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pns/bounds.hpp"

namespace pns {

/// Winkler score (u - l) + (2/alpha)(l - y)_+ + (2/alpha)(y - u)_+ on the
/// stored (clipped) endpoints. Throws unless alpha is in (0,1).
double interval_score(const PnsInterval& interval, double y, double alpha = 0.05);

/// A metric with its replicate confidence interval (equal to the value for a
/// single replicate).
struct MetricValue {
  double value = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct MetricsReport {
  MetricValue pct_valid;        // fraction of points with feasible atoms
  MetricValue point_coverage;   // PNS in [l, u]
  MetricValue id_set_coverage;  // [L, U] inside [l, u]
  MetricValue mean_width;       // max(u - l, 0): a crossed interval is empty
  MetricValue interval_score;
  MetricValue crossed_rate;
  MetricValue lower_bias;       // mean of l - L
  MetricValue upper_bias;       // mean of u - U
  std::size_t n_test = 0;
  std::size_t n_replicates = 1;
};

/// Metric names in serialisation order.
const std::vector<std::string>& metric_names();
MetricValue& metric_by_name(MetricsReport& r, const std::string& name);
const MetricValue& metric_by_name(const MetricsReport& r, const std::string& name);

inline constexpr double kCoverageTolerance = 1e-9;

/// Per-point arrays must share one length. `atoms_valid[i]` is the
/// feasibility audit of point i. Crossed intervals never cover.
MetricsReport evaluate(std::span<const PnsInterval> intervals, std::span<const double> oracle_pns,
                       std::span<const PnsInterval> oracle_bounds, const std::vector<bool>& atoms_valid,
                       double alpha = 0.05);

/// Mean and mean +- 1.96 sd / sqrt(K) per metric. Throws for K < 2.
MetricsReport aggregate_replicates(std::span<const MetricsReport> reports);

nlohmann::ordered_json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
std::string csv_header();
std::string to_csv_row(const MetricsReport& r);

}  // namespace pns
