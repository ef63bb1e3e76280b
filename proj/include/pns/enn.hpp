#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pns/bounds.hpp"
#include "pns/dataset.hpp"
#include "pns/network.hpp"
#include "pns/neural.hpp"

namespace pns {

struct HyperSpec {
  std::size_t index_dim = 20;
  std::vector<std::size_t> generator_hidden{64, 64};
  std::vector<std::size_t> prior_hidden{32, 32};
  double prior_scale = 1.0;
};

/// Maps an epistemic index zeta to a full anchored parameter vector:
///
///   theta(zeta) = base + s * (g(zeta) + prior_scale * prior(zeta))
///
/// `base` and the generator g are trained; the prior is frozen at
/// construction. s is the per-coordinate fan-in scale of the base network,
/// so a unit-scale perturbation moves each weight by its init scale.
struct HyperModel {
  ArchSpec arch;
  NetworkLayout base_layout;
  ParamVector base;
  ParamVector scales;

  std::size_t index_dim = 0;
  double prior_scale = 1.0;
  NetworkLayout generator_layout;
  ParamVector generator;
  NetworkLayout prior_layout;
  ParamVector prior;

  static HyperModel create(const ArchSpec& arch, const HyperSpec& spec, std::uint64_t seed);

  std::size_t parameter_count() const { return base.size(); }

  /// Throws DimensionError when zeta has the wrong length.
  AnchoredParams sample_params(std::span<const double> zeta) const;
  /// Columns of `zetas` (index_dim x K) -> parameter columns (P x K).
  Eigen::MatrixXd sample_param_columns(const Eigen::MatrixXd& zetas) const;
};

/// Index m of a draw sequence: a pure function of (seed, m), shared by every
/// test point that uses the same seed.
ParamVector draw_index(std::uint64_t seed, std::size_t m, std::size_t index_dim);

struct EnnTrainConfig {
  TrainConfig base;
  std::size_t index_samples = 8;  // zeta draws averaged per step
};

struct TrainedEnn {
  HyperModel hyper;
  Standardizer standardizer;
  TrainingLog log;
};

/// Adam on the split loss averaged over fresh zeta draws per step. Gradients
/// reach `base` and the generator only.
TrainedEnn train_enn(const ArchSpec& arch, const HyperSpec& spec, std::uint64_t init_seed,
                     const Dataset& obs, const Dataset& exp, const EnnTrainConfig& cfg);

/// Raw term values per draw. Row m holds the 4 lower then 4 upper terms.
struct BoundTermStats {
  BoundTerms means;
  BoundTerms stds;  // sample sd, M-1 denominator
  Eigen::MatrixXd draws;  // M x 8
};

/// Means and sample standard deviations of the columns of an M x 8 draw
/// matrix (two-pass).
BoundTermStats summarize_draws(Eigen::MatrixXd draws);

struct CriticalValues {
  double kappa_l = 0.0;
  double kappa_u = 0.0;
  double quantile_level = 0.975;
};

inline constexpr double kStudentizeEps = 1e-10;

/// Nearest-rank quantile: the ceil(level * n)-th order statistic.
double nearest_rank_quantile(std::vector<double> values, double level);

/// Per draw: W_L = max over stochastic lower terms of (l - mean) / (sd + eps),
/// W_U = -min over upper terms of (u - mean) / (sd + eps). Terms with zero
/// sd are left out. kappa = nearest-rank level-quantile, floored at 0.
CriticalValues critical_values(const BoundTermStats& stats, double level);

/// Standardised rows (d) -> per-draw terms at one point.
BoundTermStats bound_statistics(const HyperModel& hyper, std::span<const double> z_std,
                                std::size_t draws, std::uint64_t seed);

struct EnnInference {
  PnsInterval interval;
  BoundTerms means;
  BoundTerms stds;
  AtomVector mean_atoms;
};

/// Full pipeline at one standardised point.
EnnInference infer_interval(const HyperModel& hyper, std::span<const double> z_std,
                            std::size_t draws, double level, std::uint64_t seed);

/// Same result as calling infer_interval per row of `rows_raw` (after
/// standardisation), computed with the draws shared across points. OpenMP
/// over point blocks when `parallel` is set.
std::vector<EnnInference> infer_intervals(const TrainedEnn& model, const Eigen::MatrixXd& rows_raw,
                                          std::size_t draws, double level, std::uint64_t seed,
                                          bool parallel = true);

}  // namespace pns
