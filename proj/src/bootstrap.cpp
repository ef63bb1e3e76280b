#include "pns/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pns/error.hpp"
#include "pns/random.hpp"

namespace pns {

namespace {

constexpr std::size_t kSampleBlock = 1024;

// d(term)/d(atom), rows lower 0..3 then upper 0..3, columns in AtomVector
// order (mu1, mu0, p11, p10, p01, p00).
Eigen::Matrix<double, 8, 6> term_coefficients() {
  Eigen::Matrix<double, 8, 6> c;
  c << 0, 0, 0, 0, 0, 0,     //
      1, -1, 0, 0, 0, 0,     //
      0, -1, 1, 0, 1, 0,     //
      1, 0, -1, 0, -1, 0,    //
      1, 0, 0, 0, 0, 0,      //
      0, -1, 0, 0, 0, 0,     //
      0, 0, 1, 0, 0, 1,      //
      1, -1, 0, 1, 1, 0;
  return c;
}

ForwardCache slice_cache(const ForwardCache& cache, std::size_t begin, std::size_t end) {
  ForwardCache s;
  const auto b = static_cast<Eigen::Index>(begin);
  const auto m = static_cast<Eigen::Index>(end - begin);
  s.act.reserve(cache.act.size());
  for (const Eigen::MatrixXd& a : cache.act) s.act.push_back(a.middleCols(b, m));
  s.out = cache.out.middleCols(b, m);
  return s;
}

double& term_ref(BoundTerms& t, std::size_t j) { return j < 4 ? t.lower[j] : t.upper[j - 4]; }

// Max of |stat| over the terms in [first, last) with positive norm.
double abs_max(const Eigen::Ref<const Eigen::RowVectorXd>& stat, const std::array<double, 8>& norm,
               std::size_t first, std::size_t last) {
  double m = 0.0;
  bool any = false;
  for (std::size_t j = first; j < last; ++j) {
    if (!(norm[j] > 0.0)) continue;
    const double v = std::abs(stat[static_cast<Eigen::Index>(j)]) / norm[j];
    m = any ? std::max(m, v) : v;
    any = true;
  }
  return m;
}

Method method_for(InfluenceMode m) {
  return m == InfluenceMode::last_layer ? Method::mb_last_layer : Method::mb_full;
}

}  // namespace

std::string_view influence_mode_name(InfluenceMode m) {
  return m == InfluenceMode::last_layer ? "last_layer" : "full_network";
}

InfluenceMode parse_influence_mode(std::string_view name) {
  if (name == "last_layer") return InfluenceMode::last_layer;
  if (name == "full_network") return InfluenceMode::full_network;
  throw std::invalid_argument("unknown influence mode '" + std::string(name) + "'");
}

void InfluenceConfig::validate() const {
  if (!(damping >= 0.0)) throw std::invalid_argument("bootstrap.damping must be >= 0");
  if (solver == HessianSolver::cg && cg_iters == 0) throw std::invalid_argument("bootstrap.cg_iters must be positive");
}

CgResult conjugate_gradient(const LinearOperator& apply, const Eigen::MatrixXd& rhs,
                            std::size_t max_iters, double tol) {
  const Eigen::Index k = rhs.cols();
  CgResult res;
  res.solution = Eigen::MatrixXd::Zero(rhs.rows(), k);
  res.relative_residual = Eigen::VectorXd::Zero(k);
  const Eigen::VectorXd b_norm = rhs.colwise().norm().transpose();
  Eigen::MatrixXd r = rhs;
  Eigen::MatrixXd p = rhs;
  Eigen::VectorXd rr = r.colwise().squaredNorm().transpose();
  std::vector<bool> active(static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) active[static_cast<std::size_t>(c)] = b_norm[c] > 0.0;

  for (std::size_t it = 0; it < max_iters; ++it) {
    bool any = false;
    for (Eigen::Index c = 0; c < k; ++c) {
      if (active[static_cast<std::size_t>(c)] && std::sqrt(rr[c]) <= tol * b_norm[c]) {
        active[static_cast<std::size_t>(c)] = false;
      }
      any = any || active[static_cast<std::size_t>(c)];
    }
    if (!any) break;
    res.iterations = it + 1;
    const Eigen::MatrixXd ap = apply(p);
    for (Eigen::Index c = 0; c < k; ++c) {
      if (!active[static_cast<std::size_t>(c)]) continue;
      const double pap = p.col(c).dot(ap.col(c));
      if (!(pap > 0.0)) {  // operator not positive definite along p
        active[static_cast<std::size_t>(c)] = false;
        continue;
      }
      const double alpha = rr[c] / pap;
      res.solution.col(c) += alpha * p.col(c);
      r.col(c) -= alpha * ap.col(c);
      const double rr_new = r.col(c).squaredNorm();
      p.col(c) = r.col(c) + (rr_new / rr[c]) * p.col(c);
      rr[c] = rr_new;
    }
  }
  // Report the true residual, not the recursively updated one.
  const Eigen::MatrixXd true_r = rhs - apply(res.solution);
  for (Eigen::Index c = 0; c < k; ++c) {
    res.relative_residual[c] = b_norm[c] > 0.0 ? true_r.col(c).norm() / b_norm[c] : 0.0;
  }
  return res;
}

InfluenceModel InfluenceModel::build(const AnchoredParams& params, const Eigen::MatrixXd& z,
                                     const LabelView& labels, const InfluenceConfig& cfg) {
  cfg.validate();
  InfluenceModel m;
  m.cfg_ = cfg;
  m.params_ = params;
  m.subset_ = cfg.mode == InfluenceMode::last_layer ? LayerSubset::heads(params.layout)
                                                    : LayerSubset::all(params.layout);
  m.flat_ = m.subset_.flat_indices(params.layout);
  m.p_ = m.flat_.size();
  m.n_ = static_cast<std::size_t>(z.cols());
  if (m.n_ == 0) throw std::invalid_argument("influence: no training rows");
  if (cfg.mode == InfluenceMode::full_network && m.p_ > cfg.full_network_max_params) {
    throw std::invalid_argument("influence: full-network mode with " + std::to_string(m.p_) +
                                " parameters exceeds the ceiling of " +
                                std::to_string(cfg.full_network_max_params));
  }
  m.z_ = z;
  m.regime_.assign(labels.regime.begin(), labels.regime.end());
  forward(params.layout, params.values, z, m.cache_);

  Eigen::MatrixXd d_out;
  anchored_head_loss(m.cache_.out, labels, GradientMode::full, d_out);
  m.d_score_ = static_cast<double>(m.n_) * d_out;

  std::size_t n_obs = 0;
  for (Regime r : m.regime_) n_obs += r == Regime::observational;
  const std::size_t n_exp = m.n_ - n_obs;
  m.curv_ = Eigen::MatrixXd::Zero(6, static_cast<Eigen::Index>(m.n_));
  m.weight_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.n_));
  for (std::size_t i = 0; i < m.n_; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const double* out = &m.cache_.out(0, c);
    const Eigen::Matrix<double, 6, 6> ja = atom_jacobian(out);
    if (m.regime_[i] == Regime::observational) {
      // Softmax cross-entropy: Hessian in the logits is diag(p) - p p^T.
      const double mx = std::max({out[0], out[1], out[2], out[3]});
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += std::exp(out[k] - mx);
      for (int k = 0; k < 4; ++k) m.curv_(k, c) = std::exp(out[k] - mx) / s;
      m.weight_[c] = 1.0 / static_cast<double>(n_obs);
    } else {
      const int x = labels.x[i];
      const int y = labels.y[i];
      const AtomVector a = anchor_atoms({out[0], out[1], out[2], out[3]}, {out[4], out[5]});
      const double mu = x ? a.mu1 : a.mu0;
      m.curv_.col(c) = ja.row(x ? 0 : 1).transpose();
      if (mu > kProbClip && mu < 1.0 - kProbClip) {
        const double h = y ? 1.0 / (mu * mu) : 1.0 / ((1.0 - mu) * (1.0 - mu));
        m.weight_[c] = h / static_cast<double>(n_exp);
      }
    }
  }
  if (m.p_ <= cfg.explicit_max_params) m.form_hessian();
  return m;
}

InfluenceModel InfluenceModel::from_training(const TrainedAnchored& model, const Dataset& obs,
                                             const Dataset& exp, const TrainConfig& train_cfg,
                                             const InfluenceConfig& cfg) {
  const TrainingSet ts =
      TrainingSet::build(obs, exp, train_cfg.validation_fraction, derive_seed(train_cfg.seed, 1));
  Eigen::MatrixXd z;
  std::vector<std::uint8_t> x, y;
  std::vector<Regime> regime;
  ts.gather(ts.train_rows, z, x, y, regime);
  return build(model.params, z, LabelView{x, y, regime}, cfg);
}

void InfluenceModel::form_hessian() {
  // Sum over samples of J^T A J with A = sum_k f_k f_k^T, built from
  // per-sample gradients of the factors f_k.
  hessian_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
  for (std::size_t b = 0; b < n_; b += kSampleBlock) {
    const std::size_t e = std::min(n_, b + kSampleBlock);
    const ForwardCache sub = slice_cache(cache_, b, e);
    const auto m = static_cast<Eigen::Index>(e - b);
    for (int k = 0; k < 4; ++k) {
      Eigen::MatrixXd f = Eigen::MatrixXd::Zero(6, m);
      bool any = false;
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto i = static_cast<std::size_t>(b) + static_cast<std::size_t>(j);
        const auto c = static_cast<Eigen::Index>(i);
        if (weight_[c] == 0.0) continue;
        if (regime_[i] == Regime::observational) {
          // diag(p) - p p^T = sum_k p_k (e_k - p)(e_k - p)^T
          const double scale = std::sqrt(weight_[c] * curv_(k, c));
          f.col(j).head<4>() = -scale * curv_.col(c).head<4>();
          f(k, j) += scale;
          any = true;
        } else if (k == 0) {
          f.col(j) = std::sqrt(weight_[c]) * curv_.col(c);
          any = true;
        }
      }
      if (!any) continue;
      const Eigen::MatrixXd r = per_sample_gradients(params_.layout, params_.values, sub, f, subset_);
      hessian_.selfadjointView<Eigen::Lower>().rankUpdate(r.transpose());
    }
  }
  hessian_ = hessian_.selfadjointView<Eigen::Lower>();
}

Eigen::MatrixXd InfluenceModel::hessian_product(const Eigen::MatrixXd& v) const {
  if (has_explicit_hessian()) return hessian_ * v;
  Eigen::MatrixXd res(v.rows(), v.cols());
  ParamVector dir(params_.layout.parameter_count());
  ParamVector grad(params_.layout.parameter_count());
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    std::fill(dir.begin(), dir.end(), 0.0);
    for (std::size_t j = 0; j < p_; ++j) dir[flat_[j]] = v(static_cast<Eigen::Index>(j), c);
    const Eigen::MatrixXd t = jvp(params_.layout, params_.values, cache_, dir);
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(6, static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i) {
      const auto s = static_cast<Eigen::Index>(i);
      if (weight_[s] == 0.0) continue;
      if (regime_[i] == Regime::observational) {
        const Eigen::Vector4d pr = curv_.col(s).head<4>();
        const Eigen::Vector4d tl = t.col(s).head<4>();
        u.col(s).head<4>() = weight_[s] * (pr.cwiseProduct(tl) - pr * pr.dot(tl));
      } else {
        u.col(s) = weight_[s] * curv_.col(s).dot(t.col(s)) * curv_.col(s);
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    backward(params_.layout, params_.values, cache_, u, grad);
    for (std::size_t j = 0; j < p_; ++j) res(static_cast<Eigen::Index>(j), c) = grad[flat_[j]];
  }
  return res;
}

Eigen::MatrixXd InfluenceModel::apply_damped(const Eigen::MatrixXd& v) const {
  return hessian_product(v) + cfg_.damping * v;
}

CgResult InfluenceModel::solve(const Eigen::MatrixXd& rhs) const {
  if (cfg_.solver == HessianSolver::direct) {
    CgResult r;
    r.solution = direct_solve(rhs);
    r.relative_residual = Eigen::VectorXd::Zero(rhs.cols());
    const Eigen::MatrixXd res = rhs - apply_damped(r.solution);
    for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
      const double b = rhs.col(c).norm();
      r.relative_residual[c] = b > 0.0 ? res.col(c).norm() / b : 0.0;
    }
    return r;
  }
  const auto k = static_cast<std::size_t>(rhs.cols());
  if (has_explicit_hessian() && 4 * k >= p_) {
    // CG is invariant under an orthogonal change of basis, so running it on
    // the eigenvalues gives the same iterates at O(p) per product.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hessian_);
    if (eig.info() != Eigen::Success) throw NumericalError("influence: eigendecomposition failed");
    const Eigen::VectorXd diag = eig.eigenvalues().array() + cfg_.damping;
    const Eigen::MatrixXd& q = eig.eigenvectors();
    CgResult r = conjugate_gradient([&diag](const Eigen::MatrixXd& v) -> Eigen::MatrixXd { return diag.asDiagonal() * v; },
                                    q.transpose() * rhs, cfg_.cg_iters);
    r.solution = q * r.solution;
    return r;
  }
  return conjugate_gradient([this](const Eigen::MatrixXd& v) { return apply_damped(v); }, rhs,
                            cfg_.cg_iters);
}

Eigen::MatrixXd InfluenceModel::direct_solve(const Eigen::MatrixXd& rhs) const {
  const auto p = static_cast<Eigen::Index>(p_);
  Eigen::MatrixXd a = has_explicit_hessian() ? hessian_ : hessian_product(Eigen::MatrixXd::Identity(p, p));
  a.diagonal().array() += cfg_.damping;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success) throw NumericalError("influence: LDLT factorisation failed");
  return ldlt.solve(rhs);
}

Eigen::MatrixXd InfluenceModel::scores(std::size_t begin, std::size_t end) const {
  if (begin > end || end > n_) throw std::out_of_range("influence: score rows out of range");
  const ForwardCache sub = slice_cache(cache_, begin, end);
  return per_sample_gradients(params_.layout, params_.values, sub,
                              d_score_.middleCols(static_cast<Eigen::Index>(begin),
                                                  static_cast<Eigen::Index>(end - begin)),
                              subset_);
}

Eigen::VectorXd InfluenceModel::mean_score() const {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p_));
  for (std::size_t b = 0; b < n_; b += kSampleBlock) {
    s += scores(b, std::min(n_, b + kSampleBlock)).colwise().sum().transpose();
  }
  return s / static_cast<double>(n_);
}

Eigen::MatrixXd InfluenceModel::term_gradients(const Eigen::MatrixXd& z) const {
  ForwardCache cache;
  forward(params_.layout, params_.values, z, cache);
  const Eigen::Index pts = z.cols();
  const Eigen::Matrix<double, 8, 6> coef = term_coefficients();
  std::vector<Eigen::Matrix<double, 8, 6>> dterm(static_cast<std::size_t>(pts));
  for (Eigen::Index t = 0; t < pts; ++t) dterm[static_cast<std::size_t>(t)] = coef * atom_jacobian(&cache.out(0, t));
  Eigen::MatrixXd g(static_cast<Eigen::Index>(p_), 8 * pts);
  Eigen::MatrixXd d_out(6, pts);
  for (Eigen::Index j = 0; j < 8; ++j) {
    for (Eigen::Index t = 0; t < pts; ++t) d_out.col(t) = dterm[static_cast<std::size_t>(t)].row(j).transpose();
    const Eigen::MatrixXd rows = per_sample_gradients(params_.layout, params_.values, cache, d_out, subset_);
    for (Eigen::Index t = 0; t < pts; ++t) g.col(8 * t + j) = rows.row(t).transpose();
  }
  return g;
}

InfluenceCache influence_functions(const InfluenceModel& model, std::span<const double> z_std) {
  const Eigen::MatrixXd z =
      Eigen::Map<const Eigen::VectorXd>(z_std.data(), static_cast<Eigen::Index>(z_std.size()));
  const CgResult sol = model.solve(model.term_gradients(z));
  InfluenceCache cache;
  const std::size_t n = model.sample_count();
  cache.psi.resize(static_cast<Eigen::Index>(n), 8);
  for (std::size_t b = 0; b < n; b += kSampleBlock) {
    const std::size_t e = std::min(n, b + kSampleBlock);
    cache.psi.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
        model.scores(b, e) * sol.solution;
  }
  cache.terms = bound_terms(forward(model.params(), z_std).atoms);
  cache.mode = model.config().mode;
  cache.damping = model.config().damping;
  cache.cg_iters = model.config().solver == HessianSolver::cg ? model.config().cg_iters : 0;
  cache.cg_residual = sol.relative_residual;
  return cache;
}

BoundTerms influence_stds(const InfluenceCache& cache) {
  const double n = static_cast<double>(cache.psi.rows());
  BoundTerms s;
  for (std::size_t j = 0; j < 8; ++j) {
    term_ref(s, j) = std::sqrt(cache.psi.col(static_cast<Eigen::Index>(j)).squaredNorm() / n) / std::sqrt(n);
  }
  return s;
}

double multiplier(std::uint64_t seed, std::size_t b, std::size_t i) {
  return counter_normal(seed, b, i);
}

CriticalValues mb_critical_values(const InfluenceCache& cache, std::size_t replicates, double alpha,
                                  std::uint64_t seed) {
  if (replicates < 100) throw std::invalid_argument("multiplier bootstrap needs at least 100 replicates");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
  const auto n = cache.psi.rows();
  std::array<double, 8> norm{};
  for (std::size_t j = 0; j < 8; ++j) norm[j] = cache.psi.col(static_cast<Eigen::Index>(j)).norm();
  std::vector<double> tl(replicates), tu(replicates);
  Eigen::RowVectorXd xi(n);
  for (std::size_t b = 0; b < replicates; ++b) {
    for (Eigen::Index i = 0; i < n; ++i) xi[i] = multiplier(seed, b, static_cast<std::size_t>(i));
    const Eigen::RowVectorXd stat = xi * cache.psi;
    tl[b] = abs_max(stat, norm, 1, 4);
    tu[b] = abs_max(stat, norm, 4, 8);
  }
  CriticalValues cv;
  cv.quantile_level = 1.0 - alpha / 2.0;
  cv.kappa_l = std::max(0.0, nearest_rank_quantile(std::move(tl), cv.quantile_level));
  cv.kappa_u = std::max(0.0, nearest_rank_quantile(std::move(tu), cv.quantile_level));
  return cv;
}

PnsInterval mb_interval(const InfluenceCache& cache, const CriticalValues& cv) {
  PnsInterval r = precision_corrected_interval(cache.terms, influence_stds(cache), cv.kappa_l, cv.kappa_u);
  r.method = method_for(cache.mode);
  return r;
}

std::vector<MbResult> mb_intervals(const InfluenceModel& model, const Eigen::MatrixXd& z,
                                   std::size_t replicates, double alpha, std::uint64_t seed,
                                   bool parallel) {
  if (replicates < 100) throw std::invalid_argument("multiplier bootstrap needs at least 100 replicates");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
  const std::size_t n = model.sample_count();
  const auto p = static_cast<Eigen::Index>(model.parameter_count());
  const auto b_count = static_cast<Eigen::Index>(replicates);

  // Score Gram matrix and multiplier-weighted score sums.
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd xi_s = Eigen::MatrixXd::Zero(b_count, p);
  for (std::size_t b = 0; b < n; b += kSampleBlock) {
    const std::size_t e = std::min(n, b + kSampleBlock);
    const Eigen::MatrixXd s = model.scores(b, e);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(s.transpose());
    Eigen::MatrixXd xi(b_count, static_cast<Eigen::Index>(e - b));
    for (Eigen::Index r = 0; r < b_count; ++r) {
      for (Eigen::Index i = 0; i < xi.cols(); ++i) {
        xi(r, i) = multiplier(seed, static_cast<std::size_t>(r), b + static_cast<std::size_t>(i));
      }
    }
    xi_s.noalias() += xi * s;
  }
  gram = gram.selfadjointView<Eigen::Lower>();

  const CgResult sol = model.solve(model.term_gradients(z));
  const Eigen::MatrixXd& x = sol.solution;
  const Eigen::VectorXd sumsq = (x.array() * (gram * x).array()).colwise().sum().transpose();
  const Eigen::MatrixXd stat = xi_s * x;  // B x 8P

  const std::vector<ForwardOutput> fwd = forward_batch(model.params().layout, model.params().values, z);
  const auto pts = static_cast<std::ptrdiff_t>(z.cols());
  const double nd = static_cast<double>(n);
  const double level = 1.0 - alpha / 2.0;
  std::vector<MbResult> out(static_cast<std::size_t>(pts));
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t t = 0; t < pts; ++t) {
    MbResult& r = out[static_cast<std::size_t>(t)];
    r.terms = bound_terms(fwd[static_cast<std::size_t>(t)].atoms);
    std::array<double, 8> norm{};
    for (std::size_t j = 0; j < 8; ++j) {
      const double ss = std::max(0.0, sumsq[8 * t + static_cast<Eigen::Index>(j)]);
      norm[j] = std::sqrt(ss);
      term_ref(r.stds, j) = std::sqrt(ss / nd) / std::sqrt(nd);
    }
    std::vector<double> tl(replicates), tu(replicates);
    for (Eigen::Index b = 0; b < b_count; ++b) {
      const auto row = stat.row(b).segment(8 * t, 8);
      tl[static_cast<std::size_t>(b)] = abs_max(row, norm, 1, 4);
      tu[static_cast<std::size_t>(b)] = abs_max(row, norm, 4, 8);
    }
    const double kl = std::max(0.0, nearest_rank_quantile(std::move(tl), level));
    const double ku = std::max(0.0, nearest_rank_quantile(std::move(tu), level));
    r.interval = precision_corrected_interval(r.terms, r.stds, kl, ku);
    r.interval.method = method_for(model.config().mode);
  }
  return out;
}

}  // namespace pns
