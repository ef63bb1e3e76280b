#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pns/checkpoint.hpp"
#include "pns/config.hpp"
#include "pns/eval.hpp"
#include "pns/scm_highdim.hpp"
#include "pns/scm_lowdim.hpp"

namespace pns {

/// Exact per-point quantities of the data-generating process.
struct OracleTable {
  std::vector<AtomVector> atoms;
  std::vector<PnsInterval> bounds;
  std::vector<double> pns;

  std::size_t size() const { return pns.size(); }
};

/// The configured data-generating process, built once per experiment.
class DataSource {
 public:
  static DataSource from_config(const ExperimentConfig& cfg);

  Dgp dgp() const { return dgp_; }
  std::size_t input_dim() const;
  Dataset sample(std::size_t n, Regime regime, std::uint64_t seed) const;
  /// Raw covariate rows (n x d) -> oracle atoms, sharp bounds and PNS.
  OracleTable oracle(const Eigen::MatrixXd& rows) const;
  /// Sum of the hidden-state weights (1 up to rounding).
  double weight_total() const;

 private:
  Dgp dgp_ = Dgp::lowdim;
  LowDimScm low_;
  HighDimScm high_;
  CovariateSource covariates_;
};

inline std::uint64_t replicate_seed(const ExperimentConfig& cfg, std::size_t replicate) {
  return cfg.experiment.seed + replicate;
}

struct ReplicateData {
  Dataset obs;
  Dataset exp;
  Dataset test;
  OracleTable oracle;
};

/// Data for one replicate. Draws for a larger n extend those for a smaller
/// n under the same seed, and the test set does not depend on n.
ReplicateData replicate_data(const DataSource& source, std::size_t n_obs, std::size_t n_exp,
                             std::size_t n_test, std::uint64_t seed);

/// Per-point output of one method.
struct MethodOutput {
  Method method = Method::anchored;
  std::vector<PnsInterval> intervals;
  /// Plug-in interval of the point estimate (equal to `intervals` for
  /// uncorrected methods).
  std::vector<PnsInterval> uncorrected;
  std::vector<AtomVector> atoms;
  /// Feasibility audit of `atoms` at the audit tolerance.
  std::vector<bool> valid;
};

/// Fits reused across methods within a replicate: the joint model shared by
/// the plug-in learners and the anchored fit shared by the bootstrap modes.
struct FitCache {
  std::optional<Classifier> joint;
  std::optional<TrainedAnchored> anchored;
};

/// Trains `method` on one replicate's data. Seeds derive from `seed`.
Checkpoint train_method(const ExperimentConfig& cfg, Method method, const Dataset& obs, const Dataset& exp,
                        std::uint64_t seed, FitCache* cache = nullptr, bool parallel = true);

/// Intervals at raw test rows. Bootstrap methods rebuild the influence model
/// from the training data, so `obs` and `exp` must be the training sets.
MethodOutput infer_method(const ExperimentConfig& cfg, const Checkpoint& model, const Eigen::MatrixXd& test_rows,
                          const Dataset* obs, const Dataset* exp, std::uint64_t seed, bool parallel = true);

struct ReplicateOutcome {
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  std::size_t n_obs = 0;
  std::size_t n_exp = 0;
  std::vector<MethodOutput> outputs;  // config method order
  std::vector<MetricsReport> reports;
  OracleTable oracle;  // test points
};

ReplicateOutcome run_replicate(const ExperimentConfig& cfg, const DataSource& source, std::size_t n_obs,
                               std::size_t n_exp, std::size_t replicate, bool parallel = true);

/// Aggregated metrics for one (n_obs, n_exp) cell.
struct CellResult {
  std::size_t n_obs = 0;
  std::size_t n_exp = 0;
  std::vector<Method> methods;
  /// reports[m][r]: method m, replicate r.
  std::vector<std::vector<MetricsReport>> reports;
  std::vector<MetricsReport> aggregated;
};

struct ExperimentResult {
  std::vector<CellResult> cells;
};

struct RunHooks {
  /// Progress lines.
  std::function<void(const std::string&)> log;
  /// Stop after this many newly computed replicates (simulated interruption).
  std::optional<std::size_t> stop_after;
  /// Called with every freshly computed replicate.
  std::function<void(const ReplicateOutcome&)> on_replicate;
};

/// Replicate seeds are seed + r. Output directory layout:
///   config.ini          resolved configuration
///   shards/<cell>/rep_NNNNN.json (+ _points.csv)   one per replicate
///   replicates.csv      per-replicate metrics
///   aggregate.json      per-cell means and Monte Carlo intervals
///   plot_data.csv       long-format table of aggregate.json
/// Existing shards with a matching fingerprint are reused, so an interrupted
/// run resumes where it stopped. Throws PnsError("interrupted") when
/// `stop_after` ends the run early.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                const RunHooks& hooks = {});

/// Stable hash of the settings a replicate shard depends on.
std::string shard_fingerprint(const ExperimentConfig& cfg);

nlohmann::ordered_json aggregate_json(const ExperimentConfig& cfg, const ExperimentResult& result);

/// Writes plot_data.csv next to aggregate.json with columns
/// method,n_obs,n_exp,metric,value,ci_lo,ci_hi.
void emit_plot_data(const std::filesystem::path& results_dir);

/// Per-point oracle table as CSV with an audit footer of '#' lines.
/// Throws PnsError("budget") when enumeration would exceed the latent limit.
void oracle_dump(const DataSource& source, const Eigen::MatrixXd& rows, std::ostream& out);

/// CSV files shared by the CLI subcommands.
void write_oracle_csv(const OracleTable& table, const std::filesystem::path& path);
OracleTable read_oracle_csv(const std::filesystem::path& path);
void write_intervals_csv(const MethodOutput& out, const std::filesystem::path& path);
MethodOutput read_intervals_csv(const std::filesystem::path& path);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace pns
