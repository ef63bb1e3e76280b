#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pns/bounds.hpp"
#include "pns/dataset.hpp"
#include "pns/network.hpp"
#include "pns/random.hpp"

namespace pns {

/// Backbone shape: `depth` ReLU layers of width `hidden`, then a linear
/// layer of width `hidden` feeding the heads.
struct ArchSpec {
  std::size_t input_dim = 0;
  std::size_t hidden = 128;
  std::size_t depth = 3;
};

/// Output heads: 4 joint logits (p00, p01, p10, p11), then delta0, delta1.
NetworkLayout anchored_layout(const ArchSpec& arch);

inline constexpr std::size_t kJointHead = 0;
inline constexpr std::size_t kDelta0Head = 1;
inline constexpr std::size_t kDelta1Head = 2;

struct AnchoredParams {
  NetworkLayout layout;
  ParamVector values;

  static AnchoredParams initialise(const ArchSpec& arch, std::uint64_t seed);
};

struct ForwardOutput {
  AtomVector atoms;
  std::array<double, 4> logits{};
  std::array<double, 2> deltas{};
};

/// Softmax joint probabilities plus sigmoid convex combinations
///   mu0 = p01 + (1 - p00 - p01) * sigmoid(delta0)
///   mu1 = p11 + (1 - p10 - p11) * sigmoid(delta1).
/// Feasible for any finite logits.
AtomVector anchor_atoms(const std::array<double, 4>& logits, const std::array<double, 2>& deltas);

double sigmoid(double v);

/// d(atoms)/d(outputs) at one output column (4 logits, delta0, delta1).
/// Rows follow AtomVector order (mu1, mu0, p11, p10, p01, p00).
Eigen::Matrix<double, 6, 6> atom_jacobian(const double* out);

/// Single standardised covariate row.
ForwardOutput forward(const AnchoredParams& params, std::span<const double> z);

/// Columns of `z` are standardised rows.
std::vector<ForwardOutput> forward_batch(const NetworkLayout& layout, std::span<const double> params,
                                         const Eigen::MatrixXd& z);

/// Regime-tagged rows referenced by a batch.
struct LabelView {
  std::span<const std::uint8_t> x;
  std::span<const std::uint8_t> y;
  std::span<const Regime> regime;
};

enum class GradientMode {
  /// Experimental loss treats the joint probabilities as constants.
  blocked,
  /// Full Jacobian through both heads.
  full,
};

inline constexpr double kProbClip = 1e-10;

struct LossValue {
  double total = 0.0;
  double obs = 0.0;
  double exp = 0.0;
};

/// Split loss on network outputs (6 x batch). Writes dLoss/doutputs into
/// `d_out`. L_obs is the mean 4-class cross-entropy over observational
/// columns; L_exp the mean binary cross-entropy of mu_X over experimental
/// columns. Probabilities are clipped to [1e-10, 1 - 1e-10].
LossValue anchored_head_loss(const Eigen::MatrixXd& out, const LabelView& labels,
                             GradientMode mode, Eigen::MatrixXd& d_out);

struct LossAndGradient {
  LossValue loss;
  ParamVector grad;
};

/// Loss and parameter gradient on a batch (columns of z standardised).
LossAndGradient anchored_loss(const AnchoredParams& params, const Eigen::MatrixXd& z,
                              const LabelView& labels, GradientMode mode = GradientMode::blocked);

struct TrainConfig {
  double learning_rate = 3e-4;
  std::size_t batch_size = 8192;
  std::size_t epochs = 800;
  double validation_fraction = 0.2;
  std::size_t validation_every = 400;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Observational and experimental rows concatenated with regime masks,
/// standardised, split into train/validation by a seeded permutation.
struct TrainingSet {
  Standardizer standardizer;
  Eigen::MatrixXd z;  // d x N standardised
  std::vector<std::uint8_t> x;
  std::vector<std::uint8_t> y;
  std::vector<Regime> regime;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> validation_rows;

  static TrainingSet build(const Dataset& obs, const Dataset& exp, double validation_fraction,
                           std::uint64_t seed);
  std::size_t size() const { return x.size(); }

  /// Gathers the listed rows into a contiguous batch.
  void gather(std::span<const std::size_t> rows, Eigen::MatrixXd& z_out,
              std::vector<std::uint8_t>& x_out, std::vector<std::uint8_t>& y_out,
              std::vector<Regime>& regime_out) const;
};

struct TrainingLog {
  std::vector<double> epoch_loss;
  std::vector<std::pair<std::size_t, double>> validation_loss;
};

struct TrainedAnchored {
  AnchoredParams params;
  Standardizer standardizer;
  TrainingLog log;

  /// Raw covariate row -> atoms.
  ForwardOutput predict(std::span<const double> z_raw) const;
  std::vector<AtomVector> predict_atoms(const Eigen::MatrixXd& rows) const;
};

using EpochCallback = std::function<void(std::size_t epoch, const AnchoredParams&)>;

/// Adam on the split loss. Deterministic in (init_seed, cfg.seed); returns
/// final-epoch parameters. Throws NumericalError on a non-finite loss.
TrainedAnchored train_anchored(const ArchSpec& arch, std::uint64_t init_seed, const Dataset& obs,
                               const Dataset& exp, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {});

/// Mini-batch schedule shared by all trainers: a fresh seeded permutation of
/// `rows` per epoch, cut into batches.
class BatchSchedule {
 public:
  BatchSchedule(std::vector<std::size_t> rows, std::size_t batch_size, std::uint64_t seed);
  /// Batches for one epoch.
  std::vector<std::vector<std::size_t>> next_epoch();

 private:
  std::vector<std::size_t> rows_;
  std::size_t batch_size_;
  Rng rng_;
};

}  // namespace pns
