#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "pns/bounds.hpp"
#include "pns/error.hpp"
#include "pns/random.hpp"
#include "pns/scm_highdim.hpp"

using namespace pns;

namespace {

ArmOutcome zero_arm(std::size_t k, std::size_t d) {
  ArmOutcome a;
  a.beta.assign(d, 0.0);
  a.latent.assign(k, 0.0);
  a.pairwise = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  a.interaction.assign(k, 0.0);
  a.directions = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  return a;
}

HighDimScm blank_scm(std::size_t k, std::size_t d, double base = 0.5) {
  HighDimScm s;
  s.d_obs = d;
  s.k = k;
  s.pi.assign(k, 0.5);
  s.alpha_conf.assign(k, 0.0);
  s.base_propensity = [base](std::span<const double>) { return base; };
  s.arms = {zero_arm(k, d), zero_arm(k, d)};
  return s;
}

// Outcome logit written as one explicit expression per term group.
double outcome_alt(const HighDimScm& s, int x, const std::vector<double>& z,
                   const std::vector<std::uint8_t>& h) {
  const ArmOutcome& a = s.arms[static_cast<std::size_t>(x)];
  double lin = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) lin += a.beta[i] * z[i];
  double lat = 0.0, pair = 0.0, inter = 0.0;
  for (std::size_t j = 0; j < s.k; ++j) {
    const double cj = h[j] - s.pi[j];
    lat += a.latent[j] * cj;
    double vz = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) vz += a.directions(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) * z[i];
    inter += a.interaction[j] * cj * vz;
    for (std::size_t l = j + 1; l < s.k; ++l) {
      pair += a.pairwise(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) * cj * (h[l] - s.pi[l]);
    }
  }
  return 1.0 / (1.0 + std::exp(-(a.intercept + lin + lat + pair + inter)));
}

std::vector<double> row_of(const CovariateSource& src, Eigen::Index r) {
  std::vector<double> v(src.dim());
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = src.rows(r, static_cast<Eigen::Index>(j));
  return v;
}

}  // namespace

TEST_CASE("propensity formula") {
  HighDimScm s = blank_scm(1, 2);
  s.alpha_conf = {1.0};
  const std::vector<double> z{0.3, -0.2};
  const std::vector<std::uint8_t> h1{1}, h0{0};
  // 0.5 + 1 * (1 - 0.5) = 1.0, clipped to 0.95.
  CHECK(propensity(s, z, h1) == doctest::Approx(0.95));
  CHECK(propensity(s, z, h0) == doctest::Approx(0.05));

  s.gamma = 0.0;
  CHECK(propensity(s, z, h1) == doctest::Approx(0.5));

  HighDimScm m = blank_scm(3, 2, 0.45);
  m.gamma = 0.3;
  m.pi = {0.2, 0.5, 0.7};
  m.alpha_conf = {0.4, -0.3, 0.3};
  double avg = 0.0;
  for (int cfg = 0; cfg < 8; ++cfg) {
    std::vector<std::uint8_t> h{static_cast<std::uint8_t>(cfg & 1), static_cast<std::uint8_t>((cfg >> 1) & 1),
                                static_cast<std::uint8_t>((cfg >> 2) & 1)};
    avg += latent_weight(m, h) * propensity(m, z, h);
  }
  CHECK(avg == doctest::Approx(0.45).epsilon(1e-12));
}

TEST_CASE("outcome probability") {
  HighDimScm s = blank_scm(2, 3);
  const std::vector<double> z{1.0, 2.0, -1.0};
  const std::vector<std::uint8_t> h{1, 0};
  CHECK(outcome_prob(s, 1, z, h) == 0.5);
  s.arms[1].intercept = std::log(3.0);
  CHECK(outcome_prob(s, 1, z, h) == doctest::Approx(0.75).epsilon(1e-15));

  const HighDimScm r = default_highdim_scm(12, 99, {.k = 4});
  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> zz(12);
    for (double& v : zz) v = standard_normal(rng);
    std::vector<std::uint8_t> hh(4);
    for (auto& v : hh) v = static_cast<std::uint8_t>(bernoulli(rng, 0.5));
    for (int x = 0; x <= 1; ++x) {
      CHECK(std::abs(outcome_prob(r, x, zz, hh) - outcome_alt(r, x, zz, hh)) <= 1e-12);
    }
  }
}

TEST_CASE("marginal atoms and PNS") {
  SUBCASE("no latents reduces to the direct formula") {
    HighDimScm s = blank_scm(0, 2, 0.3);
    s.arms[1].intercept = 1.0;
    s.arms[0].beta = {0.5, -0.5};
    const std::vector<double> z{0.2, 0.6};
    const std::vector<std::uint8_t> none;
    const double y1 = outcome_prob(s, 1, z, none);
    const double y0 = outcome_prob(s, 0, z, none);
    const AtomVector a = marginal_atoms(s, z);
    CHECK(a.mu1 == doctest::Approx(y1));
    CHECK(a.mu0 == doctest::Approx(y0));
    CHECK(a.p11 == doctest::Approx(0.3 * y1));
    CHECK(a.p10 == doctest::Approx(0.3 * (1 - y1)));
    CHECK(a.p01 == doctest::Approx(0.7 * y0));
    CHECK(a.p00 == doctest::Approx(0.7 * (1 - y0)));
  }
  SUBCASE("single latent PNS by hand") {
    HighDimScm s = blank_scm(1, 1);
    s.pi = {0.3};
    s.arms[1].latent = {2.0};
    s.arms[0].latent = {-1.0};
    const std::vector<double> z{0.0};
    // h=1: logits 1.4 / -0.7; h=0: logits -0.6 / 0.3.
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double expect = 0.3 * std::max(sig(1.4) - sig(-0.7), 0.0) +
                          0.7 * std::max(sig(-0.6) - sig(0.3), 0.0);
    CHECK(true_pns_obs(s, z) == doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("identical arms give zero") {
    HighDimScm s = default_highdim_scm(8, 5);
    s.arms[1] = s.arms[0];
    const std::vector<double> z(8, 0.4);
    CHECK(true_pns_obs(s, z) == 0.0);
  }
  SUBCASE("no confounding and no latent outcome terms match k = 0") {
    HighDimScm s = default_highdim_scm(6, 17);
    s.gamma = 0.0;
    HighDimScm flat = s;
    flat.k = 0;
    flat.pi.clear();
    flat.alpha_conf.clear();
    for (int x = 0; x <= 1; ++x) {
      ArmOutcome& a = s.arms[static_cast<std::size_t>(x)];
      a.latent.assign(s.k, 0.0);
      a.interaction.assign(s.k, 0.0);
      a.pairwise.setZero();
      ArmOutcome& f = flat.arms[static_cast<std::size_t>(x)];
      f = zero_arm(0, 6);
      f.intercept = a.intercept;
      f.beta = a.beta;
    }
    const std::vector<double> z{0.1, -0.4, 1.2, 0.0, -2.0, 0.5};
    const AtomVector a = marginal_atoms(s, z);
    const AtomVector b = marginal_atoms(flat, z);
    CHECK(a.mu1 == doctest::Approx(b.mu1).epsilon(1e-14));
    CHECK(a.mu0 == doctest::Approx(b.mu0).epsilon(1e-14));
    CHECK(a.p11 == doctest::Approx(b.p11).epsilon(1e-14));
    CHECK(a.p00 == doctest::Approx(b.p00).epsilon(1e-14));
  }
  SUBCASE("feasibility and containment over covariate rows") {
    const CovariateSource src = synthetic_covariates(500, 30, 2);
    const HighDimScm s = default_highdim_scm(30, 3);
    for (Eigen::Index r = 0; r < 500; ++r) {
      const auto z = row_of(src, r);
      const AtomVector a = marginal_atoms(s, z);
      CHECK(std::abs(a.p00 + a.p01 + a.p10 + a.p11 - 1.0) <= 1e-12);
      CHECK(check_feasibility(a, 1e-12));
      const PnsInterval iv = plug_in_interval(a);
      const double pns = true_pns_obs(s, z);
      CHECK(pns >= iv.lower - 1e-12);
      CHECK(pns <= iv.upper + 1e-12);
    }
  }
  SUBCASE("enumeration budget") {
    HighDimScm s = blank_scm(21, 1);
    const std::vector<double> z{0.0};
    CHECK_THROWS_AS(marginal_atoms(s, z), PnsError);
  }
}

TEST_CASE("latent Monte Carlo matches marginal atoms") {
  const HighDimScm s = default_highdim_scm(10, 21);
  const CovariateSource src = synthetic_covariates(1, 10, 22);
  const auto z = row_of(src, 0);
  const AtomVector a = marginal_atoms(s, z);
  Rng rng(23);
  const std::size_t n = 200000;
  std::array<double, 4> cells{};
  std::vector<std::uint8_t> h(s.k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < s.k; ++j) h[j] = static_cast<std::uint8_t>(bernoulli(rng, s.pi[j]));
    const int x = bernoulli(rng, propensity(s, z, h));
    const int y = bernoulli(rng, outcome_prob(s, x, z, h));
    cells[static_cast<std::size_t>(2 * x + y)] += 1.0;
  }
  const std::array<double, 4> p{a.p00, a.p01, a.p10, a.p11};
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(std::abs(cells[c] / n - p[c]) <= 3 * std::sqrt(p[c] * (1 - p[c]) / n));
  }
}

TEST_CASE("high-dimensional sampling") {
  const HighDimScm s = default_highdim_scm(20, 1);
  const CovariateSource src = synthetic_covariates(300, 20, 2);
  const Dataset a = sample_highdim(s, src, 4000, Regime::observational, 9);
  const Dataset b = sample_highdim(s, src, 4000, Regime::observational, 9);
  CHECK(a.z == b.z);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);

  const Dataset e = sample_highdim(s, src, 1000000, Regime::experimental, 10);
  double t = 0.0;
  for (auto x : e.x) t += x;
  CHECK(std::abs(t / 1e6 - 0.5) <= 3 * std::sqrt(0.25 / 1e6));

  CovariateSource empty;
  empty.rows.resize(0, 20);
  CHECK_THROWS_AS(sample_highdim(s, empty, 10, Regime::experimental, 1), PnsError);
}

TEST_CASE("confounding changes the observational association") {
  // One latent drives both treatment and outcome; observed covariate unused.
  HighDimScm s = blank_scm(1, 1);
  s.gamma = 1.0;
  s.alpha_conf = {1.0};
  s.eps_clip = 0.05;
  s.arms[0].latent = {3.0};
  s.arms[1].latent = {3.0};
  CovariateSource src;
  src.rows = Eigen::MatrixXd::Zero(1, 1);
  auto contrast = [&](Regime r) {
    const Dataset d = sample_highdim(s, src, 100000, r, 77);
    double n1 = 0, y1 = 0, n0 = 0, y0 = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      (d.x[i] ? n1 : n0) += 1;
      (d.x[i] ? y1 : y0) += d.y[i];
    }
    return y1 / n1 - y0 / n0;
  };
  CHECK(std::abs(contrast(Regime::observational) - contrast(Regime::experimental)) > 0.1);
}

TEST_CASE("covariate file ingestion") {
  const auto dir = std::filesystem::temp_directory_path() / "pns_cov_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "ok.tsv");
    f << "a\tb\tc\n1\t2\t3\n4.5\t-1\t0\n";
  }
  const CovariateSource src = load_covariates(dir / "ok.tsv");
  CHECK(src.size() == 2);
  CHECK(src.dim() == 3);
  CHECK(src.rows(1, 0) == 4.5);
  CHECK(src.origin == CovariateSource::Origin::file);
  {
    std::ofstream f(dir / "ragged.csv");
    f << "a,b\n1,2\n3\n";
  }
  CHECK_THROWS_AS(load_covariates(dir / "ragged.csv"), PnsError);
  {
    std::ofstream f(dir / "text.csv");
    f << "a,b\n1,x\n";
  }
  CHECK_THROWS_AS(load_covariates(dir / "text.csv"), PnsError);
  std::filesystem::remove_all(dir);
}
