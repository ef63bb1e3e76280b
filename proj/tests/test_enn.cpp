#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "pns/enn.hpp"
#include "pns/error.hpp"
#include "pns/random.hpp"
#include "pns/scm_lowdim.hpp"

using namespace pns;

namespace {

HyperModel small_hyper(double prior_scale = 1.0, std::uint64_t seed = 3) {
  HyperSpec spec;
  spec.index_dim = 6;
  spec.generator_hidden = {8, 8};
  spec.prior_hidden = {4, 4};
  spec.prior_scale = prior_scale;
  return HyperModel::create({4, 8, 2}, spec, seed);
}

// Fills the generator's output layer so draws actually depend on zeta.
void randomise_generator(HyperModel& h, std::uint64_t seed) {
  Rng rng(seed);
  for (double& v : h.generator) v = 0.2 * standard_normal(rng);
}

// Welford running variance, an independent route to the sample sd.
double welford_sd(const Eigen::VectorXd& x) {
  double mean = 0.0, m2 = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (x[i] - mean);
  }
  return std::sqrt(m2 / static_cast<double>(x.size() - 1));
}

// Standardised-max sample built directly from i.i.d. normals.
Eigen::MatrixXd normal_draws(std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd d(static_cast<Eigen::Index>(m), 8);
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    d(r, 0) = 0.0;
    for (Eigen::Index c = 1; c < 8; ++c) d(r, c) = standard_normal(rng);
  }
  return d;
}

double brute_force_max_quantile(std::size_t terms, double level, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> maxima(n);
  for (double& v : maxima) {
    v = -1e300;
    for (std::size_t j = 0; j < terms; ++j) v = std::max(v, standard_normal(rng));
  }
  std::sort(maxima.begin(), maxima.end());
  return maxima[static_cast<std::size_t>(std::ceil(level * static_cast<double>(n))) - 1];
}

}  // namespace

TEST_CASE("hypermodel parameter generation") {
  HyperModel h = small_hyper();
  randomise_generator(h, 1);
  const auto za = draw_index(5, 0, 6);
  const auto zb = draw_index(5, 1, 6);
  const AnchoredParams a1 = h.sample_params(za);
  const AnchoredParams a2 = h.sample_params(za);
  const AnchoredParams b = h.sample_params(zb);
  CHECK(a1.values.size() == h.parameter_count());
  CHECK(a1.values == a2.values);
  CHECK(a1.values != b.values);

  SUBCASE("zero prior scale leaves the generator alone") {
    HyperModel g = h;
    g.prior_scale = 0.0;
    const Eigen::MatrixXd zeta = Eigen::Map<const Eigen::VectorXd>(za.data(), 6);
    ForwardCache cache;
    forward(g.generator_layout, g.generator, zeta, cache);
    const AnchoredParams p = g.sample_params(za);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      CHECK(p.values[i] == doctest::Approx(g.base[i] + g.scales[i] * cache.out(static_cast<Eigen::Index>(i), 0)).epsilon(1e-14));
    }
  }
  SUBCASE("wrong index width") {
    CHECK_THROWS_AS(h.sample_params(std::vector<double>(5, 0.0)), DimensionError);
  }
  SUBCASE("prior outputs are roughly unit scale") {
    const HyperModel big = HyperModel::create({15, 32, 3}, HyperSpec{}, 9);
    Eigen::MatrixXd zetas(20, 200);
    Rng rng(2);
    for (Eigen::Index i = 0; i < zetas.size(); ++i) zetas.data()[i] = standard_normal(rng);
    ForwardCache cache;
    forward(big.prior_layout, big.prior, zetas, cache);
    const double rms = std::sqrt(cache.out.squaredNorm() / static_cast<double>(cache.out.size()));
    CHECK(rms > 0.3);
    CHECK(rms < 3.0);
  }
}

TEST_CASE("draw summaries") {
  const Eigen::MatrixXd d = normal_draws(1000, 4);
  const BoundTermStats s = summarize_draws(d);
  for (std::size_t j = 1; j < 4; ++j) {
    CHECK(std::abs(s.stds.lower[j] - welford_sd(d.col(static_cast<Eigen::Index>(j)))) <= 1e-12);
    CHECK(s.means.lower[j] == doctest::Approx(d.col(static_cast<Eigen::Index>(j)).mean()).epsilon(1e-14));
  }
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(std::abs(s.stds.upper[k] - welford_sd(d.col(static_cast<Eigen::Index>(4 + k)))) <= 1e-12);
  }
  CHECK(s.stds.lower[0] == 0.0);
  CHECK_THROWS_AS(summarize_draws(Eigen::MatrixXd::Zero(1, 8)), std::invalid_argument);
}

TEST_CASE("sample sd converges at large M") {
  Rng rng(12);
  Eigen::MatrixXd d(100000, 8);
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    for (Eigen::Index c = 0; c < 8; ++c) d(r, c) = 0.5 + 0.03 * static_cast<double>(c + 1) * standard_normal(rng);
  }
  const BoundTermStats s = summarize_draws(d);
  for (std::size_t j = 1; j < 4; ++j) CHECK(std::abs(s.stds.lower[j] / (0.03 * (j + 1)) - 1.0) < 0.02);
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(s.stds.upper[k] / (0.03 * (k + 5)) - 1.0) < 0.02);
}

TEST_CASE("nearest-rank quantile") {
  const std::vector<double> v{5, 1, 4, 2, 3};
  CHECK(nearest_rank_quantile(v, 0.2) == 1);
  CHECK(nearest_rank_quantile(v, 0.5) == 3);
  CHECK(nearest_rank_quantile(v, 0.975) == 5);
  CHECK(nearest_rank_quantile(v, 1.0) == 5);
  CHECK_THROWS_AS(nearest_rank_quantile({}, 0.5), std::invalid_argument);
}

TEST_CASE("critical values") {
  SUBCASE("constant maxima") {
    // Terms 1 and 2 alternate between 0 and 1 out of phase, so each draw's
    // standardised max is the same positive value.
    const std::size_t m = 10;
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), 8);
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      d(r, 1) = r % 2;
      d(r, 2) = 1 - r % 2;
    }
    const BoundTermStats s = summarize_draws(d);
    const double c = 0.5 / (std::sqrt(0.25 * m / (m - 1.0)) + kStudentizeEps);
    const CriticalValues cv = critical_values(s, 0.975);
    CHECK(cv.kappa_l == doctest::Approx(c).epsilon(1e-12));
    CHECK(cv.kappa_u == 0.0);  // upper terms have no spread
  }
  SUBCASE("matches a brute-force quantile of the max of normals") {
    const BoundTermStats s = summarize_draws(normal_draws(100000, 21));
    const CriticalValues cv = critical_values(s, 0.975);
    const double lower_ref = brute_force_max_quantile(3, 0.975, 1000000, 22);
    const double upper_ref = brute_force_max_quantile(4, 0.975, 1000000, 23);
    CHECK(std::abs(cv.kappa_l / lower_ref - 1.0) < 0.05);
    CHECK(std::abs(cv.kappa_u / upper_ref - 1.0) < 0.05);
    MESSAGE("kappa_l " << cv.kappa_l << " vs " << lower_ref << ", kappa_u " << cv.kappa_u << " vs " << upper_ref);
  }
  SUBCASE("median level") {
    const BoundTermStats s = summarize_draws(normal_draws(100000, 31));
    const CriticalValues cv = critical_values(s, 0.5);
    const double ref = brute_force_max_quantile(3, 0.5, 1000000, 32);
    CHECK(std::abs(cv.kappa_l - ref) < 0.03);
  }
  SUBCASE("kappa floored at zero") {
    // All draws standardise to -1 or +1 on one term; the 0.3 quantile is negative.
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(10, 8);
    for (Eigen::Index r = 0; r < 10; ++r) d(r, 1) = r < 5 ? 0.0 : 1.0;
    const CriticalValues cv = critical_values(summarize_draws(d), 0.3);
    CHECK(cv.kappa_l == 0.0);
  }
}

TEST_CASE("interval from draws") {
  SUBCASE("no spread gives the plug-in interval of the mean network") {
    const HyperModel h = small_hyper(0.0);
    const std::vector<double> z{0.1, -0.3, 1.0, 0.5};
    const EnnInference r = infer_interval(h, z, 64, 0.975, 1);
    for (double s : r.stds.lower) CHECK(s <= 1e-15);
    for (double s : r.stds.upper) CHECK(s <= 1e-15);
    AnchoredParams base;
    base.layout = h.base_layout;
    base.values = h.base;
    const PnsInterval ref = plug_in_interval(forward(base, z).atoms);
    CHECK(r.interval.lower == doctest::Approx(ref.lower).epsilon(1e-12));
    CHECK(r.interval.upper == doctest::Approx(ref.upper).epsilon(1e-12));
  }
  SUBCASE("corrected interval contains the plug-in of means; draws feasible") {
    HyperModel h = small_hyper(1.0);
    randomise_generator(h, 4);
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
      std::vector<double> z(4);
      for (double& v : z) v = standard_normal(rng);
      const EnnInference r = infer_interval(h, z, 200, 0.975, 7);
      CHECK(interval_contains(r.interval, plug_in_interval(r.means)));
      CHECK(r.interval.kappa_lower >= 0.0);
      CHECK(r.interval.kappa_upper >= 0.0);
      const EnnInference again = infer_interval(h, z, 200, 0.975, 7);
      CHECK(again.interval.lower == r.interval.lower);
      CHECK(again.interval.upper == r.interval.upper);
      for (std::size_t m = 0; m < 20; ++m) {
        const AnchoredParams p = h.sample_params(draw_index(7, m, h.index_dim));
        CHECK(check_feasibility(forward(p, z).atoms, 1e-9));
      }
    }
  }
  SUBCASE("M < 2 rejected") {
    const HyperModel h = small_hyper();
    CHECK_THROWS_AS(bound_statistics(h, std::vector<double>(4, 0.0), 1, 1), std::invalid_argument);
  }
}

TEST_CASE("batched inference matches per-point inference; parallel matches serial") {
  TrainedEnn model;
  model.hyper = small_hyper(1.0, 8);
  randomise_generator(model.hyper, 9);
  model.standardizer = Standardizer::identity(4);
  Rng rng(10);
  Eigen::MatrixXd rows(70, 4);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = standard_normal(rng);
  const auto par = infer_intervals(model, rows, 300, 0.975, 11, true);
  const auto ser = infer_intervals(model, rows, 300, 0.975, 11, false);
  REQUIRE(par.size() == 70);
  for (std::size_t i = 0; i < par.size(); ++i) {
    CHECK(par[i].interval.lower == ser[i].interval.lower);
    CHECK(par[i].interval.upper == ser[i].interval.upper);
    std::vector<double> z(4);
    for (std::size_t j = 0; j < 4; ++j) z[j] = rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const EnnInference one = infer_interval(model.hyper, z, 300, 0.975, 11);
    CHECK(std::abs(one.interval.lower - par[i].interval.lower) <= 1e-12);
    CHECK(std::abs(one.interval.upper - par[i].interval.upper) <= 1e-12);
    CHECK(std::abs(one.mean_atoms.mu1 - par[i].mean_atoms.mu1) <= 1e-12);
  }
}

TEST_CASE("ENN training") {
  const LowDimScm scm = li_model_1();
  EnnTrainConfig cfg;
  cfg.base.learning_rate = 3e-3;
  cfg.base.batch_size = 256;
  cfg.base.epochs = 6;
  cfg.base.validation_every = 3;
  cfg.base.seed = 2;
  cfg.index_samples = 2;
  HyperSpec spec;
  spec.generator_hidden = {16, 16};
  spec.prior_hidden = {8, 8};
  spec.prior_scale = 0.5;
  const ArchSpec arch{0, 16, 2};

  const Dataset test = sample_dataset(scm, 300, Regime::observational, 99);
  auto mae = [&](const TrainedEnn& m) {
    const auto res = infer_intervals(m, test.z, 100, 0.975, 5);
    double err = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      std::vector<std::uint8_t> zb(15);
      for (std::size_t j = 0; j < 15; ++j) zb[j] = static_cast<std::uint8_t>(test.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      const AtomVector t = marginal_atoms(scm, zb);
      const AtomVector& a = res[i].mean_atoms;
      err += std::abs(a.mu1 - t.mu1) + std::abs(a.mu0 - t.mu0) + std::abs(a.p11 - t.p11) +
             std::abs(a.p10 - t.p10) + std::abs(a.p01 - t.p01) + std::abs(a.p00 - t.p00);
    }
    return err / (6.0 * static_cast<double>(test.size()));
  };

  const Dataset obs_s = sample_dataset(scm, 1000, Regime::observational, 1);
  const Dataset exp_s = sample_dataset(scm, 500, Regime::experimental, 2);
  const Dataset obs_l = sample_dataset(scm, 16000, Regime::observational, 1);
  const Dataset exp_l = sample_dataset(scm, 8000, Regime::experimental, 2);

  const TrainedEnn small = train_enn(arch, spec, 4, obs_s, exp_s, cfg);
  const TrainedEnn small2 = train_enn(arch, spec, 4, obs_s, exp_s, cfg);
  const TrainedEnn large = train_enn(arch, spec, 4, obs_l, exp_l, cfg);

  CHECK(small.hyper.base == small2.hyper.base);
  CHECK(small.hyper.generator == small2.hyper.generator);
  const HyperModel fresh = HyperModel::create({15, 16, 2}, spec, 4);
  CHECK(small.hyper.prior == fresh.prior);
  CHECK(large.hyper.prior == fresh.prior);
  CHECK(small.hyper.generator != fresh.generator);
  CHECK(small.log.validation_loss.size() == 2);

  const double e_small = mae(small);
  const double e_large = mae(large);
  MESSAGE("mean-atom error: small data " << e_small << ", large data " << e_large);
  CHECK(e_large < e_small);
}
