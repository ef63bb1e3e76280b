#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pns/bounds.hpp"
#include "pns/dataset.hpp"
#include "pns/enn.hpp"
#include "pns/network.hpp"
#include "pns/neural.hpp"

namespace pns {

enum class InfluenceMode {
  /// Parameters of the three head layers only.
  last_layer,
  full_network,
};

std::string_view influence_mode_name(InfluenceMode m);
InfluenceMode parse_influence_mode(std::string_view name);

enum class HessianSolver { cg, direct };

struct InfluenceConfig {
  InfluenceMode mode = InfluenceMode::last_layer;
  double damping = 1e-4;
  std::size_t cg_iters = 50;
  HessianSolver solver = HessianSolver::cg;
  /// Form the Hessian as a dense matrix up to this many parameters,
  /// otherwise use Hessian-vector products.
  std::size_t explicit_max_params = 2000;
  /// Full-network mode refuses larger networks.
  std::size_t full_network_max_params = 20000;

  void validate() const;
};

struct CgResult {
  Eigen::MatrixXd solution;
  /// ||b - A x|| / ||b|| per column (0 for a zero right-hand side).
  Eigen::VectorXd relative_residual;
  std::size_t iterations = 0;
};

using LinearOperator = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// Column-wise conjugate gradients for a symmetric positive-definite
/// operator, at most `max_iters` steps from x = 0. Columns stop once their
/// relative residual falls below `tol`.
CgResult conjugate_gradient(const LinearOperator& apply, const Eigen::MatrixXd& rhs,
                            std::size_t max_iters, double tol = 1e-14);

/// Curvature and per-sample scores of a trained anchored network over the
/// rows it was fitted on. The loss is the unblocked split loss
///   L = mean_obs(CE) + mean_exp(BCE);
/// the Hessian is its Gauss-Newton approximation (positive semidefinite).
/// Sample i's score is n times its contribution to dL, so scores average
/// to dL.
class InfluenceModel {
 public:
  /// `z` holds standardised training rows as columns.
  static InfluenceModel build(const AnchoredParams& params, const Eigen::MatrixXd& z,
                              const LabelView& labels, const InfluenceConfig& cfg);

  /// Uses the same train/validation split as train_anchored.
  static InfluenceModel from_training(const TrainedAnchored& model, const Dataset& obs,
                                      const Dataset& exp, const TrainConfig& train_cfg,
                                      const InfluenceConfig& cfg);

  const InfluenceConfig& config() const { return cfg_; }
  const AnchoredParams& params() const { return params_; }
  const LayerSubset& subset() const { return subset_; }
  std::size_t sample_count() const { return n_; }
  std::size_t parameter_count() const { return p_; }
  bool has_explicit_hessian() const { return hessian_.size() != 0; }
  /// Undamped Gauss-Newton matrix; empty in matrix-free mode.
  const Eigen::MatrixXd& hessian() const { return hessian_; }

  /// (H + damping I) V.
  Eigen::MatrixXd apply_damped(const Eigen::MatrixXd& v) const;
  /// (H + damping I)^{-1} B with the configured solver.
  CgResult solve(const Eigen::MatrixXd& rhs) const;
  /// Same system by a dense LDLT factorisation (needs the explicit Hessian).
  Eigen::MatrixXd direct_solve(const Eigen::MatrixXd& rhs) const;

  /// Rows [begin, end) of the n x p score matrix.
  Eigen::MatrixXd scores(std::size_t begin, std::size_t end) const;
  /// Mean score, i.e. the restricted gradient of L.
  Eigen::VectorXd mean_score() const;

  /// Gradients of the 8 bound terms at standardised points (columns of z),
  /// full Jacobian through both heads. Column 8*t + j is term j at point t
  /// (lower 0..3, then upper 0..3).
  Eigen::MatrixXd term_gradients(const Eigen::MatrixXd& z) const;

 private:
  InfluenceConfig cfg_;
  AnchoredParams params_;
  LayerSubset subset_;
  std::vector<std::size_t> flat_;
  std::size_t n_ = 0;
  std::size_t p_ = 0;
  Eigen::MatrixXd z_;
  Eigen::MatrixXd d_score_;  // 6 x n, output-space score (already times n)
  Eigen::MatrixXd curv_;     // 6 x n; obs: softmax probs, exp: d mu / d out
  Eigen::VectorXd weight_;   // per-sample curvature weight (regime mean and loss curvature)
  std::vector<Regime> regime_;
  ForwardCache cache_;
  Eigen::MatrixXd hessian_;

  Eigen::MatrixXd hessian_product(const Eigen::MatrixXd& v) const;
  void form_hessian();
};

/// Per-sample influence of the 8 bound terms at one query point.
struct InfluenceCache {
  Eigen::MatrixXd psi;  // n x 8
  BoundTerms terms;     // plug-in term values at the point
  InfluenceMode mode = InfluenceMode::last_layer;
  double damping = 0.0;
  std::size_t cg_iters = 0;
  Eigen::VectorXd cg_residual;  // per term
};

/// psi_j(W_i; z) = grad g_j(z)^T (H + damping I)^{-1} score_i.
InfluenceCache influence_functions(const InfluenceModel& model, std::span<const double> z_std);

/// Standard errors sqrt(sum_i psi_ij^2 / n) / sqrt(n).
BoundTerms influence_stds(const InfluenceCache& cache);

/// Gaussian multiplier draws xi_{b,i} = counter_normal(seed, b, i), shared by
/// every query point of a run.
double multiplier(std::uint64_t seed, std::size_t b, std::size_t i);

/// T_b = max_j |xi_b^T psi_j| / (sqrt(n) s_j) over the lower (upper) terms
/// with nonzero influence; kappa = nearest-rank (1 - alpha/2) quantile.
CriticalValues mb_critical_values(const InfluenceCache& cache, std::size_t replicates, double alpha,
                                  std::uint64_t seed);

PnsInterval mb_interval(const InfluenceCache& cache, const CriticalValues& cv);

struct MbResult {
  PnsInterval interval;
  BoundTerms terms;
  BoundTerms stds;
};

/// Intervals at many standardised points (columns of z). Equal to
/// influence_functions + mb_critical_values + mb_interval per point, but the
/// n-dimensional work is done once: with S the score matrix and Xi the
/// multipliers, only S^T S and Xi S are needed.
std::vector<MbResult> mb_intervals(const InfluenceModel& model, const Eigen::MatrixXd& z,
                                   std::size_t replicates, double alpha, std::uint64_t seed,
                                   bool parallel = true);

}  // namespace pns
