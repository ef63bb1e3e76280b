#include "pns/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pns/error.hpp"

namespace pns {

double interval_score(const PnsInterval& interval, double y, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("interval score: alpha must lie in (0,1)");
  const double l = interval.lower;
  const double u = interval.upper;
  return (u - l) + (2.0 / alpha) * std::max(l - y, 0.0) + (2.0 / alpha) * std::max(y - u, 0.0);
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"pct_valid",      "point_coverage", "id_set_coverage",
                                              "mean_width",     "interval_score", "crossed_rate",
                                              "lower_bias",     "upper_bias"};
  return names;
}

MetricValue& metric_by_name(MetricsReport& r, const std::string& name) {
  if (name == "pct_valid") return r.pct_valid;
  if (name == "point_coverage") return r.point_coverage;
  if (name == "id_set_coverage") return r.id_set_coverage;
  if (name == "mean_width") return r.mean_width;
  if (name == "interval_score") return r.interval_score;
  if (name == "crossed_rate") return r.crossed_rate;
  if (name == "lower_bias") return r.lower_bias;
  if (name == "upper_bias") return r.upper_bias;
  throw std::invalid_argument("unknown metric '" + name + "'");
}

const MetricValue& metric_by_name(const MetricsReport& r, const std::string& name) {
  return metric_by_name(const_cast<MetricsReport&>(r), name);
}

MetricsReport evaluate(std::span<const PnsInterval> intervals, std::span<const double> oracle_pns,
                       std::span<const PnsInterval> oracle_bounds, const std::vector<bool>& atoms_valid,
                       double alpha) {
  const std::size_t n = intervals.size();
  if (oracle_pns.size() != n || oracle_bounds.size() != n || atoms_valid.size() != n) {
    throw DimensionError("evaluate: per-point arrays differ in length");
  }
  if (n == 0) throw std::invalid_argument("evaluate: no test points");
  double valid = 0, point = 0, id = 0, width = 0, score = 0, crossed = 0, lbias = 0, ubias = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const PnsInterval& r = intervals[i];
    const PnsInterval& b = oracle_bounds[i];
    valid += atoms_valid[i];
    crossed += r.crossed;
    if (!r.crossed) {
      point += r.lower <= oracle_pns[i] && oracle_pns[i] <= r.upper;
      id += r.lower <= b.lower + kCoverageTolerance && b.upper - kCoverageTolerance <= r.upper;
    }
    width += std::max(r.upper - r.lower, 0.0);
    score += interval_score(r, oracle_pns[i], alpha);
    lbias += r.lower - b.lower;
    ubias += r.upper - b.upper;
  }
  const double nd = static_cast<double>(n);
  auto mv = [&](double total) {
    const double v = total / nd;
    return MetricValue{v, v, v};
  };
  MetricsReport rep;
  rep.pct_valid = mv(valid);
  rep.point_coverage = mv(point);
  rep.id_set_coverage = mv(id);
  rep.mean_width = mv(width);
  rep.interval_score = mv(score);
  rep.crossed_rate = mv(crossed);
  rep.lower_bias = mv(lbias);
  rep.upper_bias = mv(ubias);
  rep.n_test = n;
  return rep;
}

MetricsReport aggregate_replicates(std::span<const MetricsReport> reports) {
  const std::size_t k = reports.size();
  if (k < 2) throw std::invalid_argument("aggregate_replicates needs at least two reports");
  MetricsReport out;
  out.n_test = reports.front().n_test;
  out.n_replicates = k;
  for (const std::string& name : metric_names()) {
    double mean = 0.0;
    for (const MetricsReport& r : reports) mean += metric_by_name(r, name).value;
    mean /= static_cast<double>(k);
    double ss = 0.0;
    for (const MetricsReport& r : reports) ss += std::pow(metric_by_name(r, name).value - mean, 2);
    const double half = 1.96 * std::sqrt(ss / static_cast<double>(k - 1)) / std::sqrt(static_cast<double>(k));
    metric_by_name(out, name) = {mean, mean - half, mean + half};
  }
  return out;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  for (const std::string& name : metric_names()) {
    const MetricValue& v = metric_by_name(r, name);
    j[name] = v.value;
    j[name + "_ci_lo"] = v.ci_lo;
    j[name + "_ci_hi"] = v.ci_hi;
  }
  j["n_test"] = r.n_test;
  j["n_replicates"] = r.n_replicates;
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  for (const std::string& name : metric_names()) {
    metric_by_name(r, name) = {j.at(name).get<double>(), j.at(name + "_ci_lo").get<double>(),
                               j.at(name + "_ci_hi").get<double>()};
  }
  r.n_test = j.at("n_test").get<std::size_t>();
  r.n_replicates = j.at("n_replicates").get<std::size_t>();
  return r;
}

std::string csv_header() {
  std::ostringstream s;
  for (const std::string& name : metric_names()) s << name << ',' << name << "_ci_lo," << name << "_ci_hi,";
  s << "n_test,n_replicates";
  return s.str();
}

std::string to_csv_row(const MetricsReport& r) {
  std::ostringstream s;
  s.precision(17);
  for (const std::string& name : metric_names()) {
    const MetricValue& v = metric_by_name(r, name);
    s << v.value << ',' << v.ci_lo << ',' << v.ci_hi << ',';
  }
  s << r.n_test << ',' << r.n_replicates;
  return s.str();
}

}  // namespace pns
