#include "pns/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "pns/error.hpp"

namespace pns {

NetworkLayout anchored_layout(const ArchSpec& arch) {
  if (arch.input_dim == 0 || arch.hidden == 0 || arch.depth == 0) {
    throw std::invalid_argument("architecture dimensions must be positive");
  }
  std::vector<std::size_t> trunk{arch.input_dim};
  for (std::size_t i = 0; i < arch.depth; ++i) trunk.push_back(arch.hidden);
  trunk.push_back(arch.hidden);
  return NetworkLayout(std::move(trunk), {4, 1, 1});
}

AnchoredParams AnchoredParams::initialise(const ArchSpec& arch, std::uint64_t seed) {
  AnchoredParams p;
  p.layout = anchored_layout(arch);
  p.values = init_parameters(p.layout, seed);
  return p;
}

double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

namespace {

std::array<double, 4> softmax4(const double* logits) {
  const double m = std::max({logits[0], logits[1], logits[2], logits[3]});
  std::array<double, 4> p{};
  double s = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    p[c] = std::exp(logits[c] - m);
    s += p[c];
  }
  for (double& v : p) v /= s;
  return p;
}

AtomVector anchor_from_probs(const std::array<double, 4>& p, double s0, double s1) {
  AtomVector a;
  a.p00 = p[0];
  a.p01 = p[1];
  a.p10 = p[2];
  a.p11 = p[3];
  a.mu0 = p[1] + (1.0 - p[0] - p[1]) * s0;
  a.mu1 = p[3] + (1.0 - p[2] - p[3]) * s1;
  return a;
}

double clip_prob(double p) { return std::clamp(p, kProbClip, 1.0 - kProbClip); }
bool inside_clip(double p) { return p > kProbClip && p < 1.0 - kProbClip; }

}  // namespace

AtomVector anchor_atoms(const std::array<double, 4>& logits, const std::array<double, 2>& deltas) {
  return anchor_from_probs(softmax4(logits.data()), sigmoid(deltas[0]), sigmoid(deltas[1]));
}

Eigen::Matrix<double, 6, 6> atom_jacobian(const double* out) {
  const std::array<double, 4> p = softmax4(out);
  const double s0 = sigmoid(out[4]);
  const double s1 = sigmoid(out[5]);
  // Softmax Jacobian, rows p00, p01, p10, p11.
  Eigen::Matrix4d dp;
  for (int k = 0; k < 4; ++k) {
    for (int m = 0; m < 4; ++m) dp(k, m) = p[k] * ((k == m ? 1.0 : 0.0) - p[m]);
  }
  Eigen::Matrix<double, 6, 6> j = Eigen::Matrix<double, 6, 6>::Zero();
  j.block<1, 4>(0, 0) = (1.0 - s1) * dp.row(3) - s1 * dp.row(2);
  j(0, 5) = (1.0 - p[2] - p[3]) * s1 * (1.0 - s1);
  j.block<1, 4>(1, 0) = (1.0 - s0) * dp.row(1) - s0 * dp.row(0);
  j(1, 4) = (1.0 - p[0] - p[1]) * s0 * (1.0 - s0);
  j.block<1, 4>(2, 0) = dp.row(3);
  j.block<1, 4>(3, 0) = dp.row(2);
  j.block<1, 4>(4, 0) = dp.row(1);
  j.block<1, 4>(5, 0) = dp.row(0);
  return j;
}

std::vector<ForwardOutput> forward_batch(const NetworkLayout& layout, std::span<const double> params,
                                         const Eigen::MatrixXd& z) {
  ForwardCache cache;
  forward(layout, params, z, cache);
  std::vector<ForwardOutput> out(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    ForwardOutput& o = out[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < 4; ++c) o.logits[static_cast<std::size_t>(c)] = cache.out(c, i);
    o.deltas = {cache.out(4, i), cache.out(5, i)};
    o.atoms = anchor_atoms(o.logits, o.deltas);
  }
  return out;
}

ForwardOutput forward(const AnchoredParams& params, std::span<const double> z) {
  Eigen::MatrixXd col = Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
  return forward_batch(params.layout, params.values, col).front();
}

LossValue anchored_head_loss(const Eigen::MatrixXd& out, const LabelView& labels,
                             GradientMode mode, Eigen::MatrixXd& d_out) {
  const Eigen::Index batch = out.cols();
  if (batch == 0) throw std::invalid_argument("loss: empty batch");
  d_out.setZero(out.rows(), batch);
  std::size_t n_obs = 0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    n_obs += labels.regime[static_cast<std::size_t>(i)] == Regime::observational;
  }
  const std::size_t n_exp = static_cast<std::size_t>(batch) - n_obs;
  const double w_obs = n_obs ? 1.0 / static_cast<double>(n_obs) : 0.0;
  const double w_exp = n_exp ? 1.0 / static_cast<double>(n_exp) : 0.0;

  LossValue loss;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto r = static_cast<std::size_t>(i);
    const std::array<double, 4> p = softmax4(&out(0, i));
    const int x = labels.x[r];
    const int y = labels.y[r];
    if (labels.regime[r] == Regime::observational) {
      const auto c = static_cast<std::size_t>(2 * x + y);
      loss.obs -= w_obs * std::log(clip_prob(p[c]));
      if (inside_clip(p[c])) {
        for (std::size_t k = 0; k < 4; ++k) {
          d_out(static_cast<Eigen::Index>(k), i) += w_obs * (p[k] - (k == c ? 1.0 : 0.0));
        }
      }
      continue;
    }
    const auto hi = static_cast<std::size_t>(2 * x + 1);  // p_{x1}
    const auto lo = static_cast<std::size_t>(2 * x);      // p_{x0}
    const Eigen::Index delta_row = 4 + x;
    const double s = sigmoid(out(delta_row, i));
    const double width = 1.0 - p[lo] - p[hi];
    const double mu = p[hi] + width * s;
    const double muc = clip_prob(mu);
    loss.exp -= w_exp * (y ? std::log(muc) : std::log(1.0 - muc));
    if (!inside_clip(mu)) continue;
    const double g = w_exp * (y ? -1.0 / mu : 1.0 / (1.0 - mu));
    d_out(delta_row, i) += g * width * s * (1.0 - s);
    if (mode == GradientMode::full) {
      std::array<double, 4> dmu_dp{};
      dmu_dp[hi] = 1.0 - s;
      dmu_dp[lo] = -s;
      double mean = 0.0;
      for (std::size_t k = 0; k < 4; ++k) mean += dmu_dp[k] * p[k];
      for (std::size_t k = 0; k < 4; ++k) {
        d_out(static_cast<Eigen::Index>(k), i) += g * p[k] * (dmu_dp[k] - mean);
      }
    }
  }
  loss.total = loss.obs + loss.exp;
  return loss;
}

LossAndGradient anchored_loss(const AnchoredParams& params, const Eigen::MatrixXd& z,
                              const LabelView& labels, GradientMode mode) {
  ForwardCache cache;
  forward(params.layout, params.values, z, cache);
  Eigen::MatrixXd d_out;
  LossAndGradient r;
  r.loss = anchored_head_loss(cache.out, labels, mode, d_out);
  r.grad.assign(params.layout.parameter_count(), 0.0);
  backward(params.layout, params.values, cache, d_out, r.grad);
  return r;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be > 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation_fraction must lie in [0,1)");
  }
}

TrainingSet TrainingSet::build(const Dataset& obs, const Dataset& exp, double validation_fraction,
                               std::uint64_t seed) {
  if (obs.size() == 0 && exp.size() == 0) throw std::invalid_argument("training data is empty");
  if (obs.size() && exp.size() && obs.dim() != exp.dim()) {
    throw DimensionError("observational and experimental covariate widths differ");
  }
  const Eigen::MatrixXd& a = obs.size() ? obs.z : exp.z;
  const Eigen::MatrixXd b = exp.size() && obs.size() ? exp.z : Eigen::MatrixXd(0, a.cols());
  TrainingSet ts;
  ts.standardizer = Standardizer::fit(a, b);
  const std::size_t n = obs.size() + exp.size();
  ts.z.resize(static_cast<Eigen::Index>(obs.size() ? obs.dim() : exp.dim()), static_cast<Eigen::Index>(n));
  if (obs.size()) ts.z.leftCols(static_cast<Eigen::Index>(obs.size())) = ts.standardizer.to_columns(obs.z);
  if (exp.size()) ts.z.rightCols(static_cast<Eigen::Index>(exp.size())) = ts.standardizer.to_columns(exp.z);
  ts.x = obs.x;
  ts.x.insert(ts.x.end(), exp.x.begin(), exp.x.end());
  ts.y = obs.y;
  ts.y.insert(ts.y.end(), exp.y.begin(), exp.y.end());
  ts.regime.assign(obs.size(), Regime::observational);
  ts.regime.insert(ts.regime.end(), exp.size(), Regime::experimental);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  shuffle_in_place(perm, rng);
  const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(n)));
  ts.validation_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  ts.train_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(ts.validation_rows.begin(), ts.validation_rows.end());
  std::sort(ts.train_rows.begin(), ts.train_rows.end());
  return ts;
}

void TrainingSet::gather(std::span<const std::size_t> rows, Eigen::MatrixXd& z_out,
                         std::vector<std::uint8_t>& x_out, std::vector<std::uint8_t>& y_out,
                         std::vector<Regime>& regime_out) const {
  z_out.resize(z.rows(), static_cast<Eigen::Index>(rows.size()));
  x_out.resize(rows.size());
  y_out.resize(rows.size());
  regime_out.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    z_out.col(static_cast<Eigen::Index>(i)) = z.col(static_cast<Eigen::Index>(rows[i]));
    x_out[i] = x[rows[i]];
    y_out[i] = y[rows[i]];
    regime_out[i] = regime[rows[i]];
  }
}

BatchSchedule::BatchSchedule(std::vector<std::size_t> rows, std::size_t batch_size, std::uint64_t seed)
    : rows_(std::move(rows)), batch_size_(batch_size), rng_(seed) {}

std::vector<std::vector<std::size_t>> BatchSchedule::next_epoch() {
  shuffle_in_place(rows_, rng_);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < rows_.size(); start += batch_size_) {
    const std::size_t end = std::min(rows_.size(), start + batch_size_);
    batches.emplace_back(rows_.begin() + static_cast<std::ptrdiff_t>(start),
                         rows_.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

ForwardOutput TrainedAnchored::predict(std::span<const double> z_raw) const {
  const Eigen::VectorXd z = standardizer.apply(z_raw);
  return forward(params, std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
}

std::vector<AtomVector> TrainedAnchored::predict_atoms(const Eigen::MatrixXd& rows) const {
  const auto outs = forward_batch(params.layout, params.values, standardizer.to_columns(rows));
  std::vector<AtomVector> atoms;
  atoms.reserve(outs.size());
  for (const auto& o : outs) atoms.push_back(o.atoms);
  return atoms;
}

namespace {

double validation_loss(const AnchoredParams& params, const TrainingSet& ts) {
  if (ts.validation_rows.empty()) return 0.0;
  Eigen::MatrixXd z;
  std::vector<std::uint8_t> x, y;
  std::vector<Regime> regime;
  ts.gather(ts.validation_rows, z, x, y, regime);
  ForwardCache cache;
  forward(params.layout, params.values, z, cache);
  Eigen::MatrixXd d_out;
  return anchored_head_loss(cache.out, {x, y, regime}, GradientMode::blocked, d_out).total;
}

}  // namespace

TrainedAnchored train_anchored(const ArchSpec& arch, std::uint64_t init_seed, const Dataset& obs,
                               const Dataset& exp, const TrainConfig& cfg,
                               const EpochCallback& on_epoch) {
  cfg.validate();
  if (obs.size() == 0 || exp.size() == 0) {
    throw std::invalid_argument("anchored training needs observational and experimental rows");
  }
  const TrainingSet ts = TrainingSet::build(obs, exp, cfg.validation_fraction, derive_seed(cfg.seed, 1));
  ArchSpec a = arch;
  a.input_dim = obs.dim();

  TrainedAnchored model;
  model.params = AnchoredParams::initialise(a, init_seed);
  model.standardizer = ts.standardizer;
  Adam adam(model.params.layout.parameter_count(), cfg.learning_rate);
  BatchSchedule schedule(ts.train_rows, cfg.batch_size, derive_seed(cfg.seed, 2));

  Eigen::MatrixXd z;
  std::vector<std::uint8_t> x, y;
  std::vector<Regime> regime;
  ForwardCache cache;
  Eigen::MatrixXd d_out;
  ParamVector grad(model.params.layout.parameter_count());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : schedule.next_epoch()) {
      ts.gather(batch, z, x, y, regime);
      forward(model.params.layout, model.params.values, z, cache);
      const LossValue loss = anchored_head_loss(cache.out, {x, y, regime}, GradientMode::blocked, d_out);
      if (!std::isfinite(loss.total)) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) +
                             " (loss " + std::to_string(loss.total) + ")");
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      backward(model.params.layout, model.params.values, cache, d_out, grad);
      adam.step(model.params.values, grad);
      total += loss.total * static_cast<double>(batch.size());
      seen += batch.size();
    }
    model.log.epoch_loss.push_back(seen ? total / static_cast<double>(seen) : 0.0);
    if (cfg.validation_every && (epoch % cfg.validation_every == 0 || epoch == cfg.epochs)) {
      model.log.validation_loss.emplace_back(epoch, validation_loss(model.params, ts));
    }
    if (on_epoch) on_epoch(epoch, model.params);
  }
  return model;
}

}  // namespace pns
