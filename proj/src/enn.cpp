#include "pns/enn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "pns/error.hpp"
#include "pns/random.hpp"

namespace pns {

namespace {

std::vector<std::size_t> mlp_widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

// He-style uniform init for the frozen prior so its outputs are roughly unit
// scale for standard normal indices: ReLU layers keep the second moment, the
// final linear layer maps it to unit variance. Biases start at zero.
ParamVector prior_init(const NetworkLayout& layout, std::uint64_t seed) {
  Rng rng(seed);
  ParamVector p(layout.parameter_count(), 0.0);
  const auto& layers = layout.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LinearShape& s = layers[l];
    const bool last = l + 1 == layers.size();
    const double bound = std::sqrt((last ? 3.0 : 6.0) / static_cast<double>(s.in));
    for (std::size_t i = s.offset; i < s.offset + s.weight_count(); ++i) {
      p[i] = bound * (2.0 * uniform01(rng) - 1.0);
    }
  }
  return p;
}

std::array<double, 8> flat_terms(const AtomVector& a) {
  const BoundTerms t = bound_terms(a);
  return {t.lower[0], t.lower[1], t.lower[2], t.lower[3],
          t.upper[0], t.upper[1], t.upper[2], t.upper[3]};
}

double enn_validation_loss(const HyperModel& hyper, const TrainingSet& ts, std::uint64_t seed) {
  if (ts.validation_rows.empty()) return 0.0;
  Eigen::MatrixXd z;
  std::vector<std::uint8_t> x, y;
  std::vector<Regime> regime;
  ts.gather(ts.validation_rows, z, x, y, regime);
  constexpr std::size_t kDraws = 8;
  double total = 0.0;
  ForwardCache cache;
  Eigen::MatrixXd d_out;
  for (std::size_t m = 0; m < kDraws; ++m) {
    const AnchoredParams p = hyper.sample_params(draw_index(seed, m, hyper.index_dim));
    forward(p.layout, p.values, z, cache);
    total += anchored_head_loss(cache.out, {x, y, regime}, GradientMode::blocked, d_out).total;
  }
  return total / kDraws;
}

}  // namespace

HyperModel HyperModel::create(const ArchSpec& arch, const HyperSpec& spec, std::uint64_t seed) {
  if (spec.index_dim == 0) throw std::invalid_argument("index_dim must be positive");
  if (spec.prior_scale < 0.0) throw std::invalid_argument("prior_scale must be nonnegative");
  HyperModel h;
  h.arch = arch;
  h.base_layout = anchored_layout(arch);
  h.base = init_parameters(h.base_layout, derive_seed(seed, 0));
  h.scales = coordinate_scales(h.base_layout);
  h.index_dim = spec.index_dim;
  h.prior_scale = spec.prior_scale;

  const std::size_t p = h.base.size();
  h.generator_layout = NetworkLayout(mlp_widths(spec.index_dim, spec.generator_hidden, p), {});
  h.generator = init_parameters(h.generator_layout, derive_seed(seed, 1));
  // The output layer starts at zero so early draws are base + prior only.
  const LinearShape& out = h.generator_layout.layers().back();
  std::fill(h.generator.begin() + static_cast<std::ptrdiff_t>(out.offset), h.generator.end(), 0.0);

  h.prior_layout = NetworkLayout(mlp_widths(spec.index_dim, spec.prior_hidden, p), {});
  h.prior = prior_init(h.prior_layout, derive_seed(seed, 2));
  return h;
}

Eigen::MatrixXd HyperModel::sample_param_columns(const Eigen::MatrixXd& zetas) const {
  if (static_cast<std::size_t>(zetas.rows()) != index_dim) {
    throw DimensionError("epistemic index has " + std::to_string(zetas.rows()) +
                         " entries, hypermodel expects " + std::to_string(index_dim));
  }
  ForwardCache g;
  forward(generator_layout, generator, zetas, g);
  Eigen::MatrixXd offset = std::move(g.out);
  if (prior_scale != 0.0) {
    ForwardCache pr;
    forward(prior_layout, prior, zetas, pr);
    offset += prior_scale * pr.out;
  }
  const Eigen::Map<const Eigen::VectorXd> b(base.data(), static_cast<Eigen::Index>(base.size()));
  const Eigen::Map<const Eigen::VectorXd> s(scales.data(), static_cast<Eigen::Index>(scales.size()));
  Eigen::MatrixXd theta = (offset.array().colwise() * s.array()).matrix();
  theta.colwise() += b;
  return theta;
}

AnchoredParams HyperModel::sample_params(std::span<const double> zeta) const {
  const Eigen::MatrixXd z = Eigen::Map<const Eigen::VectorXd>(zeta.data(), static_cast<Eigen::Index>(zeta.size()));
  const Eigen::MatrixXd theta = sample_param_columns(z);
  AnchoredParams p;
  p.layout = base_layout;
  p.values.assign(theta.data(), theta.data() + theta.size());
  return p;
}

ParamVector draw_index(std::uint64_t seed, std::size_t m, std::size_t index_dim) {
  ParamVector zeta(index_dim);
  for (std::size_t j = 0; j < index_dim; ++j) zeta[j] = counter_normal(seed, m, j);
  return zeta;
}

TrainedEnn train_enn(const ArchSpec& arch, const HyperSpec& spec, std::uint64_t init_seed,
                     const Dataset& obs, const Dataset& exp, const EnnTrainConfig& cfg) {
  cfg.base.validate();
  if (cfg.index_samples == 0) throw std::invalid_argument("index_samples must be positive");
  if (obs.size() == 0 || exp.size() == 0) {
    throw std::invalid_argument("ENN training needs observational and experimental rows");
  }
  const TrainingSet ts =
      TrainingSet::build(obs, exp, cfg.base.validation_fraction, derive_seed(cfg.base.seed, 1));
  ArchSpec a = arch;
  a.input_dim = obs.dim();

  TrainedEnn model;
  model.hyper = HyperModel::create(a, spec, init_seed);
  model.standardizer = ts.standardizer;
  HyperModel& h = model.hyper;
  Adam adam_base(h.base.size(), cfg.base.learning_rate);
  Adam adam_gen(h.generator.size(), cfg.base.learning_rate);
  BatchSchedule schedule(ts.train_rows, cfg.base.batch_size, derive_seed(cfg.base.seed, 2));
  Rng index_rng(derive_seed(cfg.base.seed, 3));
  const std::uint64_t validation_seed = derive_seed(cfg.base.seed, 4);

  const std::size_t k = cfg.index_samples;
  const std::size_t p = h.base.size();
  const double inv_k = 1.0 / static_cast<double>(k);
  Eigen::MatrixXd zetas(static_cast<Eigen::Index>(h.index_dim), static_cast<Eigen::Index>(k));
  Eigen::MatrixXd z;
  std::vector<std::uint8_t> x, y;
  std::vector<Regime> regime;
  ForwardCache base_cache, gen_cache;
  Eigen::MatrixXd d_out;
  Eigen::MatrixXd d_theta(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k));
  ParamVector grad_base(p), grad_gen(h.generator.size());
  const Eigen::Map<const Eigen::VectorXd> scales(h.scales.data(), static_cast<Eigen::Index>(p));

  for (std::size_t epoch = 1; epoch <= cfg.base.epochs; ++epoch) {
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : schedule.next_epoch()) {
      ts.gather(batch, z, x, y, regime);
      for (Eigen::Index i = 0; i < zetas.size(); ++i) zetas.data()[i] = standard_normal(index_rng);
      const Eigen::MatrixXd theta = h.sample_param_columns(zetas);
      double loss = 0.0;
      d_theta.setZero();
      for (std::size_t c = 0; c < k; ++c) {
        const auto col = static_cast<Eigen::Index>(c);
        const std::span<const double> tc(theta.col(col).data(), p);
        forward(h.base_layout, tc, z, base_cache);
        loss += anchored_head_loss(base_cache.out, {x, y, regime}, GradientMode::blocked, d_out).total;
        backward(h.base_layout, tc, base_cache, d_out, std::span<double>(d_theta.col(col).data(), p));
      }
      loss *= inv_k;
      if (!std::isfinite(loss)) {
        throw NumericalError("ENN training diverged at epoch " + std::to_string(epoch));
      }
      d_theta *= inv_k;
      const Eigen::VectorXd g_base = d_theta.rowwise().sum();
      std::copy(g_base.data(), g_base.data() + p, grad_base.begin());
      // theta = base + s * (g(zeta) + ...), so dL/dg = s * dL/dtheta.
      const Eigen::MatrixXd d_gen = (d_theta.array().colwise() * scales.array()).matrix();
      forward(h.generator_layout, h.generator, zetas, gen_cache);
      std::fill(grad_gen.begin(), grad_gen.end(), 0.0);
      backward(h.generator_layout, h.generator, gen_cache, d_gen, grad_gen);
      adam_base.step(h.base, grad_base);
      adam_gen.step(h.generator, grad_gen);
      total += loss * static_cast<double>(batch.size());
      seen += batch.size();
    }
    model.log.epoch_loss.push_back(seen ? total / static_cast<double>(seen) : 0.0);
    if (cfg.base.validation_every &&
        (epoch % cfg.base.validation_every == 0 || epoch == cfg.base.epochs)) {
      model.log.validation_loss.emplace_back(epoch, enn_validation_loss(h, ts, validation_seed));
    }
  }
  return model;
}

BoundTermStats summarize_draws(Eigen::MatrixXd draws) {
  const Eigen::Index m = draws.rows();
  if (m < 2) throw std::invalid_argument("need at least 2 epistemic draws");
  if (draws.cols() != 8) throw DimensionError("draw matrix must have 8 term columns");
  BoundTermStats s;
  for (Eigen::Index c = 0; c < 8; ++c) {
    const double mean = draws.col(c).mean();
    const double ss = (draws.col(c).array() - mean).square().sum();
    const double sd = std::sqrt(ss / static_cast<double>(m - 1));
    auto& mean_slot = c < 4 ? s.means.lower[static_cast<std::size_t>(c)] : s.means.upper[static_cast<std::size_t>(c - 4)];
    auto& sd_slot = c < 4 ? s.stds.lower[static_cast<std::size_t>(c)] : s.stds.upper[static_cast<std::size_t>(c - 4)];
    mean_slot = mean;
    sd_slot = sd;
  }
  // The constant lower term has no spread by definition.
  s.stds.lower[0] = 0.0;
  s.draws = std::move(draws);
  return s;
}

double nearest_rank_quantile(std::vector<double> values, double level) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(level > 0.0 && level <= 1.0)) throw std::invalid_argument("quantile level must lie in (0,1]");
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(level * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

CriticalValues critical_values(const BoundTermStats& stats, double level) {
  const Eigen::Index m = stats.draws.rows();
  if (m < 2 || stats.draws.cols() != 8) throw std::invalid_argument("critical values need M >= 2 draws of 8 terms");
  std::vector<double> wl(static_cast<std::size_t>(m), -std::numeric_limits<double>::infinity());
  std::vector<double> wu(static_cast<std::size_t>(m), -std::numeric_limits<double>::infinity());
  bool any_lower = false;
  bool any_upper = false;
  for (std::size_t j = 1; j < 4; ++j) {
    const double sd = stats.stds.lower[j];
    if (sd == 0.0) continue;
    any_lower = true;
    for (Eigen::Index r = 0; r < m; ++r) {
      const double w = (stats.draws(r, static_cast<Eigen::Index>(j)) - stats.means.lower[j]) / (sd + kStudentizeEps);
      wl[static_cast<std::size_t>(r)] = std::max(wl[static_cast<std::size_t>(r)], w);
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const double sd = stats.stds.upper[k];
    if (sd == 0.0) continue;
    any_upper = true;
    for (Eigen::Index r = 0; r < m; ++r) {
      const double w = (stats.draws(r, static_cast<Eigen::Index>(4 + k)) - stats.means.upper[k]) / (sd + kStudentizeEps);
      // -min over terms == max of the negated deviations.
      wu[static_cast<std::size_t>(r)] = std::max(wu[static_cast<std::size_t>(r)], -w);
    }
  }
  CriticalValues cv;
  cv.quantile_level = level;
  cv.kappa_l = any_lower ? std::max(0.0, nearest_rank_quantile(std::move(wl), level)) : 0.0;
  cv.kappa_u = any_upper ? std::max(0.0, nearest_rank_quantile(std::move(wu), level)) : 0.0;
  return cv;
}

namespace {

// Terms at a block of standardised points (columns) for one parameter draw.
void block_terms(const HyperModel& hyper, std::span<const double> theta, const Eigen::MatrixXd& z_block,
                 ForwardCache& cache, std::vector<AtomVector>& atoms_out) {
  forward(hyper.base_layout, theta, z_block, cache);
  atoms_out.resize(static_cast<std::size_t>(z_block.cols()));
  for (Eigen::Index i = 0; i < z_block.cols(); ++i) {
    std::array<double, 4> logits{cache.out(0, i), cache.out(1, i), cache.out(2, i), cache.out(3, i)};
    atoms_out[static_cast<std::size_t>(i)] = anchor_atoms(logits, {cache.out(4, i), cache.out(5, i)});
  }
}

EnnInference finish_point(Eigen::MatrixXd draws, const AtomVector& mean_atoms, double level) {
  const BoundTermStats stats = summarize_draws(std::move(draws));
  const CriticalValues cv = critical_values(stats, level);
  EnnInference out;
  out.interval = precision_corrected_interval(stats.means, stats.stds, cv.kappa_l, cv.kappa_u);
  out.interval.method = Method::enn;
  out.means = stats.means;
  out.stds = stats.stds;
  out.mean_atoms = mean_atoms;
  return out;
}

Eigen::MatrixXd index_columns(std::uint64_t seed, std::size_t first, std::size_t count, std::size_t dim) {
  Eigen::MatrixXd zetas(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
  for (std::size_t c = 0; c < count; ++c) {
    for (std::size_t j = 0; j < dim; ++j) {
      zetas(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = counter_normal(seed, first + c, j);
    }
  }
  return zetas;
}

// Parameter draws are cached when they fit in this many doubles.
constexpr std::size_t kParamCacheDoubles = std::size_t{32} << 20;
constexpr std::size_t kDrawChunk = 256;

}  // namespace

BoundTermStats bound_statistics(const HyperModel& hyper, std::span<const double> z_std,
                                std::size_t draws, std::uint64_t seed) {
  if (draws < 2) throw std::invalid_argument("bound_statistics needs M >= 2");
  const Eigen::MatrixXd z = Eigen::Map<const Eigen::VectorXd>(z_std.data(), static_cast<Eigen::Index>(z_std.size()));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(draws), 8);
  ForwardCache cache;
  std::vector<AtomVector> atoms;
  for (std::size_t first = 0; first < draws; first += kDrawChunk) {
    const std::size_t count = std::min(kDrawChunk, draws - first);
    const Eigen::MatrixXd theta = hyper.sample_param_columns(index_columns(seed, first, count, hyper.index_dim));
    for (std::size_t c = 0; c < count; ++c) {
      block_terms(hyper, std::span<const double>(theta.col(static_cast<Eigen::Index>(c)).data(), hyper.parameter_count()),
                  z, cache, atoms);
      const auto t = flat_terms(atoms[0]);
      for (Eigen::Index j = 0; j < 8; ++j) out(static_cast<Eigen::Index>(first + c), j) = t[static_cast<std::size_t>(j)];
    }
  }
  return summarize_draws(std::move(out));
}

EnnInference infer_interval(const HyperModel& hyper, std::span<const double> z_std,
                            std::size_t draws, double level, std::uint64_t seed) {
  const BoundTermStats stats = bound_statistics(hyper, z_std, draws, seed);
  const CriticalValues cv = critical_values(stats, level);
  EnnInference out;
  out.interval = precision_corrected_interval(stats.means, stats.stds, cv.kappa_l, cv.kappa_u);
  out.interval.method = Method::enn;
  out.means = stats.means;
  out.stds = stats.stds;
  // Mean atoms are a by-product of the batched path; recompute here.
  const Eigen::MatrixXd z = Eigen::Map<const Eigen::VectorXd>(z_std.data(), static_cast<Eigen::Index>(z_std.size()));
  ForwardCache cache;
  std::vector<AtomVector> atoms;
  AtomVector sum;
  for (std::size_t first = 0; first < draws; first += kDrawChunk) {
    const std::size_t count = std::min(kDrawChunk, draws - first);
    const Eigen::MatrixXd theta = hyper.sample_param_columns(index_columns(seed, first, count, hyper.index_dim));
    for (std::size_t c = 0; c < count; ++c) {
      block_terms(hyper, std::span<const double>(theta.col(static_cast<Eigen::Index>(c)).data(), hyper.parameter_count()),
                  z, cache, atoms);
      sum = sum + atoms[0];
    }
  }
  out.mean_atoms = (1.0 / static_cast<double>(draws)) * sum;
  return out;
}

std::vector<EnnInference> infer_intervals(const TrainedEnn& model, const Eigen::MatrixXd& rows_raw,
                                          std::size_t draws, double level, std::uint64_t seed,
                                          bool parallel) {
  if (draws < 2) throw std::invalid_argument("infer_intervals needs M >= 2");
  const HyperModel& hyper = model.hyper;
  const Eigen::MatrixXd z = model.standardizer.to_columns(rows_raw);
  const auto n = static_cast<std::size_t>(z.cols());
  const std::size_t p = hyper.parameter_count();

  const bool cache_params = draws * p <= kParamCacheDoubles;
  Eigen::MatrixXd bank;
  if (cache_params) bank = hyper.sample_param_columns(index_columns(seed, 0, draws, hyper.index_dim));

  const std::size_t block = cache_params ? 32 : 512;
  const auto n_blocks = static_cast<std::ptrdiff_t>((n + block - 1) / block);
  std::vector<EnnInference> result(n);

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t b = 0; b < n_blocks; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * block;
    const std::size_t cnt = std::min(block, n - lo);
    const Eigen::MatrixXd zb = z.middleCols(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(cnt));
    std::vector<Eigen::MatrixXd> terms(cnt, Eigen::MatrixXd(static_cast<Eigen::Index>(draws), 8));
    std::vector<AtomVector> sums(cnt);
    ForwardCache cache;
    std::vector<AtomVector> atoms;
    for (std::size_t first = 0; first < draws; first += kDrawChunk) {
      const std::size_t count = std::min(kDrawChunk, draws - first);
      Eigen::MatrixXd local;
      if (!cache_params) local = hyper.sample_param_columns(index_columns(seed, first, count, hyper.index_dim));
      for (std::size_t c = 0; c < count; ++c) {
        const double* theta = cache_params ? bank.col(static_cast<Eigen::Index>(first + c)).data()
                                           : local.col(static_cast<Eigen::Index>(c)).data();
        block_terms(hyper, std::span<const double>(theta, p), zb, cache, atoms);
        for (std::size_t i = 0; i < cnt; ++i) {
          const auto t = flat_terms(atoms[i]);
          for (Eigen::Index j = 0; j < 8; ++j) terms[i](static_cast<Eigen::Index>(first + c), j) = t[static_cast<std::size_t>(j)];
          sums[i] = sums[i] + atoms[i];
        }
      }
    }
    for (std::size_t i = 0; i < cnt; ++i) {
      result[lo + i] = finish_point(std::move(terms[i]), (1.0 / static_cast<double>(draws)) * sums[i], level);
    }
  }
  return result;
}

}  // namespace pns
