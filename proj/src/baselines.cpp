#include "pns/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "pns/error.hpp"
#include "pns/random.hpp"

namespace pns {

namespace {

NetworkLayout classifier_layout(const ArchSpec& arch, std::size_t outputs) {
  if (arch.input_dim == 0 || arch.hidden == 0 || arch.depth == 0) {
    throw std::invalid_argument("architecture dimensions must be positive");
  }
  if (outputs == 0) throw std::invalid_argument("classifier needs at least one output");
  std::vector<std::size_t> trunk{arch.input_dim};
  for (std::size_t i = 0; i < arch.depth; ++i) trunk.push_back(arch.hidden);
  trunk.push_back(arch.hidden);
  return NetworkLayout(std::move(trunk), {outputs});
}

double log_clip(double p) { return std::log(std::clamp(p, kProbClip, 1.0 - kProbClip)); }

// Mean cross-entropy over the columns of `out`; writes dLoss/dout.
double cross_entropy(const Eigen::MatrixXd& out, std::span<const std::uint8_t> labels,
                     Eigen::MatrixXd& d_out) {
  const Eigen::Index n = out.cols();
  const double w = 1.0 / static_cast<double>(n);
  d_out.resize(out.rows(), n);
  double loss = 0.0;
  if (out.rows() == 1) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = sigmoid(out(0, i));
      const int y = labels[static_cast<std::size_t>(i)];
      loss -= w * (y ? log_clip(p) : log_clip(1.0 - p));
      d_out(0, i) = w * (p - y);
    }
    return loss;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = out.col(i).maxCoeff();
    Eigen::VectorXd p = (out.col(i).array() - m).exp();
    p /= p.sum();
    const Eigen::Index c = labels[static_cast<std::size_t>(i)];
    loss -= w * log_clip(p[c]);
    d_out.col(i) = w * p;
    d_out(c, i) -= w;
  }
  return loss;
}

void gather(const Eigen::MatrixXd& z, std::span<const std::uint8_t> labels,
            const std::vector<std::size_t>& rows, Eigen::MatrixXd& z_out,
            std::vector<std::uint8_t>& labels_out) {
  z_out.resize(z.rows(), static_cast<Eigen::Index>(rows.size()));
  labels_out.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    z_out.col(static_cast<Eigen::Index>(i)) = z.col(static_cast<Eigen::Index>(rows[i]));
    labels_out[i] = labels[rows[i]];
  }
}

// Standardised covariates with the treatment appended as a final row.
Eigen::MatrixXd with_treatment(const Eigen::MatrixXd& z, double x) {
  Eigen::MatrixXd out(z.rows() + 1, z.cols());
  out.topRows(z.rows()) = z;
  out.row(z.rows()).setConstant(x);
  return out;
}

Eigen::MatrixXd with_treatment(const Eigen::MatrixXd& z, std::span<const std::uint8_t> x) {
  Eigen::MatrixXd out = with_treatment(z, 0.0);
  for (Eigen::Index i = 0; i < z.cols(); ++i) out(z.rows(), i) = x[static_cast<std::size_t>(i)];
  return out;
}

Standardizer joint_standardizer(const Dataset& obs, const Dataset& exp) {
  if (obs.size() == 0 || exp.size() == 0) {
    throw std::invalid_argument("plug-in learners need observational and experimental rows");
  }
  if (obs.dim() != exp.dim()) throw DimensionError("observational and experimental covariate widths differ");
  return Standardizer::fit(obs.z, exp.z);
}

std::vector<std::uint8_t> joint_labels(const Dataset& obs) {
  std::vector<std::uint8_t> c(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) c[i] = static_cast<std::uint8_t>(2 * obs.x[i] + obs.y[i]);
  return c;
}

ArchSpec with_input(ArchSpec a, std::size_t d) {
  a.input_dim = d;
  return a;
}

}  // namespace

Eigen::MatrixXd Classifier::probabilities(const Eigen::MatrixXd& z) const {
  ForwardCache cache;
  forward(layout, params, z, cache);
  Eigen::MatrixXd p(cache.out.rows(), cache.out.cols());
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    if (p.rows() == 1) {
      p(0, i) = sigmoid(cache.out(0, i));
    } else {
      p.col(i) = (cache.out.col(i).array() - cache.out.col(i).maxCoeff()).exp();
      p.col(i) /= p.col(i).sum();
    }
  }
  return p;
}

Classifier train_classifier(const ArchSpec& arch, std::size_t outputs, std::uint64_t init_seed,
                            const Eigen::MatrixXd& z, std::span<const std::uint8_t> labels,
                            const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(z.cols());
  if (n == 0) throw std::invalid_argument("classifier: no training rows");
  if (labels.size() != n) throw DimensionError("classifier: label count differs from row count");
  const std::size_t classes = outputs == 1 ? 2 : outputs;
  for (std::uint8_t c : labels) {
    if (c >= classes) throw std::invalid_argument("classifier: label out of range");
  }
  Classifier model;
  model.layout = classifier_layout(with_input(arch, static_cast<std::size_t>(z.rows())), outputs);
  model.params = init_parameters(model.layout, init_seed);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, 1));
  shuffle_in_place(perm, split_rng);
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
  std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  if (train.empty()) throw std::invalid_argument("classifier: validation split leaves no training rows");

  Adam adam(model.params.size(), cfg.learning_rate);
  BatchSchedule schedule(train, cfg.batch_size, derive_seed(cfg.seed, 2));
  Eigen::MatrixXd zb, d_out;
  std::vector<std::uint8_t> lb;
  ForwardCache cache;
  ParamVector grad(model.params.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& batch : schedule.next_epoch()) {
      gather(z, labels, batch, zb, lb);
      forward(model.layout, model.params, zb, cache);
      const double loss = cross_entropy(cache.out, lb, d_out);
      if (!std::isfinite(loss)) throw NumericalError("classifier training diverged at epoch " + std::to_string(epoch));
      std::fill(grad.begin(), grad.end(), 0.0);
      backward(model.layout, model.params, cache, d_out, grad);
      adam.step(model.params, grad);
      total += loss * static_cast<double>(batch.size());
    }
    model.log.epoch_loss.push_back(total / static_cast<double>(train.size()));
    if (cfg.validation_every && !val.empty() && (epoch % cfg.validation_every == 0 || epoch == cfg.epochs)) {
      gather(z, labels, val, zb, lb);
      forward(model.layout, model.params, zb, cache);
      model.log.validation_loss.emplace_back(epoch, cross_entropy(cache.out, lb, d_out));
    }
  }
  return model;
}

Classifier fit_joint_model(const ArchSpec& arch, std::uint64_t init_seed, const Dataset& obs,
                           const Dataset& exp, const TrainConfig& cfg) {
  const Standardizer s = joint_standardizer(obs, exp);
  TrainConfig c = cfg;
  c.seed = derive_seed(cfg.seed, 11);
  return train_classifier(arch, 4, derive_seed(init_seed, 1), s.to_columns(obs.z), joint_labels(obs), c);
}

PlugInModel fit_s_learner(const ArchSpec& arch, std::uint64_t init_seed, const Dataset& obs,
                          const Dataset& exp, const TrainConfig& cfg, const Classifier* shared_joint) {
  PlugInModel m;
  m.method = Method::s_learner;
  m.standardizer = joint_standardizer(obs, exp);
  m.joint = shared_joint ? *shared_joint : fit_joint_model(arch, init_seed, obs, exp, cfg);
  TrainConfig c = cfg;
  c.seed = derive_seed(cfg.seed, 12);
  m.outcome = train_classifier(arch, 1, derive_seed(init_seed, 2),
                               with_treatment(m.standardizer.to_columns(exp.z), exp.x), exp.y, c);
  return m;
}

PlugInModel fit_t_learner(const ArchSpec& arch, std::uint64_t init_seed, const Dataset& obs,
                          const Dataset& exp, const TrainConfig& cfg, const Classifier* shared_joint) {
  PlugInModel m;
  m.method = Method::t_learner;
  m.standardizer = joint_standardizer(obs, exp);
  m.joint = shared_joint ? *shared_joint : fit_joint_model(arch, init_seed, obs, exp, cfg);
  const Dataset control = exp.filter_treatment(0);
  const Dataset treated = exp.filter_treatment(1);
  if (control.size() == 0 || treated.size() == 0) {
    throw std::invalid_argument("T-learner needs experimental rows in both arms");
  }
  TrainConfig c = cfg;
  c.seed = derive_seed(cfg.seed, 13);
  m.outcome = train_classifier(arch, 1, derive_seed(init_seed, 3), m.standardizer.to_columns(control.z),
                               control.y, c);
  c.seed = derive_seed(cfg.seed, 14);
  m.outcome_treated = train_classifier(arch, 1, derive_seed(init_seed, 4),
                                       m.standardizer.to_columns(treated.z), treated.y, c);
  return m;
}

std::vector<AtomVector> PlugInModel::predict_atoms(const Eigen::MatrixXd& rows) const {
  const Eigen::MatrixXd z = standardizer.to_columns(rows);
  const Eigen::MatrixXd pj = joint.probabilities(z);
  Eigen::RowVectorXd mu1, mu0;
  if (method == Method::s_learner) {
    mu1 = outcome.probabilities(with_treatment(z, 1.0));
    mu0 = outcome.probabilities(with_treatment(z, 0.0));
  } else {
    mu1 = outcome_treated.probabilities(z);
    mu0 = outcome.probabilities(z);
  }
  std::vector<AtomVector> atoms(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    AtomVector& a = atoms[static_cast<std::size_t>(i)];
    a.mu1 = mu1[i];
    a.mu0 = mu0[i];
    a.p00 = pj(0, i);
    a.p01 = pj(1, i);
    a.p10 = pj(2, i);
    a.p11 = pj(3, i);
  }
  return atoms;
}

PlugInPrediction plug_in_predict(const AtomVector& atoms, Method method) {
  PlugInPrediction p;
  p.atoms = atoms;
  p.interval = plug_in_interval(atoms);
  p.interval.method = method;
  p.violation = !check_feasibility(atoms, kAuditTolerance);
  return p;
}

std::vector<PlugInPrediction> plug_in_predict(const PlugInModel& model, const Eigen::MatrixXd& rows) {
  std::vector<PlugInPrediction> out;
  for (const AtomVector& a : model.predict_atoms(rows)) out.push_back(plug_in_predict(a, model.method));
  return out;
}

}  // namespace pns
