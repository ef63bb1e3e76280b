#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "pns/baselines.hpp"
#include "pns/random.hpp"
#include "pns/scm_lowdim.hpp"

using namespace pns;

namespace {

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.batch_size = 256;
  c.epochs = 8;
  c.validation_every = 4;
  c.seed = seed;
  return c;
}

std::vector<std::uint8_t> observed_row(const Dataset& d, std::size_t i) {
  std::vector<std::uint8_t> z(d.dim());
  for (std::size_t j = 0; j < d.dim(); ++j) {
    z[j] = static_cast<std::uint8_t>(d.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  }
  return z;
}

}  // namespace

TEST_CASE("plug-in prediction on given atoms") {
  SUBCASE("feasible atoms match the bounds module") {
    const AtomVector a{0.6, 0.3, 0.3, 0.2, 0.1, 0.4};
    const PlugInPrediction p = plug_in_predict(a, Method::t_learner);
    const PnsInterval ref = plug_in_interval(a);
    CHECK(p.interval.lower == ref.lower);
    CHECK(p.interval.upper == ref.upper);
    CHECK(p.interval.method == Method::t_learner);
    CHECK_FALSE(p.violation);
  }
  SUBCASE("infeasible atoms are flagged and can cross") {
    // mu1 far below p11 and mu0 far above 1 - p00.
    const AtomVector a{0.05, 0.9, 0.6, 0.1, 0.05, 0.25};
    const PlugInPrediction p = plug_in_predict(a, Method::s_learner);
    CHECK(p.violation);
    // Last upper term 0.05 - 0.9 + 0.1 + 0.05 is negative and clips to 0.
    CHECK(p.interval.lower == 0.0);
    CHECK(p.interval.upper == 0.0);
    const AtomVector b{0.7, 0.1, 0.6, 0.05, 0.3, 0.05};
    const PlugInPrediction q = plug_in_predict(b, Method::s_learner);
    CHECK(q.violation);  // p01 = 0.3 > mu0 = 0.1
    // lower term p11 + p01 - mu0 = 0.8 exceeds upper term mu1 = 0.7
    CHECK(q.interval.crossed);
  }
  SUBCASE("audit tolerance is 1e-6") {
    const AtomVector a{0.3 - 5e-7, 0.3, 0.3, 0.2, 0.1, 0.4};
    CHECK_FALSE(plug_in_predict(a, Method::s_learner).violation);
    const AtomVector b{0.3 - 2e-6, 0.3, 0.3, 0.2, 0.1, 0.4};
    CHECK(plug_in_predict(b, Method::s_learner).violation);
  }
  SUBCASE("oracle atoms give the sharp bounds with no violations") {
    const LowDimScm scm = li_model_1();
    const Dataset d = sample_dataset(scm, 300, Regime::observational, 3);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const AtomVector a = marginal_atoms(scm, observed_row(d, i));
      const PlugInPrediction p = plug_in_predict(a, Method::s_learner);
      CHECK_FALSE(p.violation);
      // Sharp bounds written out directly.
      const double lo = std::max({0.0, a.mu1 - a.mu0, a.p11 + a.p01 - a.mu0, a.mu1 - a.p11 - a.p01});
      const double hi = std::min({a.mu1, 1.0 - a.mu0, a.p11 + a.p00, a.mu1 - a.mu0 + a.p10 + a.p01});
      CHECK(p.interval.lower == lo);
      CHECK(p.interval.upper == hi);
      CHECK(marginal_pns(scm, observed_row(d, i)) >= lo - 1e-12);
    }
  }
}

TEST_CASE("classifier") {
  Rng rng(1);
  const Eigen::Index n = 4000;
  Eigen::MatrixXd z(2, n);
  std::vector<std::uint8_t> y(static_cast<std::size_t>(n)), c4(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    z(0, i) = standard_normal(rng);
    z(1, i) = standard_normal(rng);
    y[static_cast<std::size_t>(i)] = bernoulli(rng, sigmoid(2.0 * z(0, i) - z(1, i)));
    c4[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(2 * (z(0, i) > 0) + (z(1, i) > 0));
  }
  TrainConfig cfg = quick_config(2);
  cfg.epochs = 30;
  const Classifier logit = train_classifier({0, 16, 2}, 1, 3, z, y, cfg);
  CHECK(logit.classes() == 2);
  Eigen::MatrixXd probe(2, 3);
  probe << 2.0, -2.0, 0.0, -2.0, 2.0, 0.0;
  const Eigen::MatrixXd p = logit.probabilities(probe);
  CHECK(p(0, 0) > 0.9);
  CHECK(p(0, 1) < 0.1);
  CHECK(std::abs(p(0, 2) - 0.5) < 0.1);
  CHECK(logit.log.validation_loss.size() == 8);

  const Classifier multi = train_classifier({0, 16, 2}, 4, 3, z, c4, cfg);
  const Eigen::MatrixXd pm = multi.probabilities(probe);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(pm.col(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pm(2, 0) > 0.6);  // x > 0, y = 0 cell is class 2

  const Classifier again = train_classifier({0, 16, 2}, 1, 3, z, y, cfg);
  CHECK(again.params == logit.params);

  CHECK_THROWS_AS(train_classifier({0, 16, 2}, 1, 3, z, c4, cfg), std::invalid_argument);
  CHECK_THROWS_AS(train_classifier({0, 16, 2}, 1, 3, z, std::vector<std::uint8_t>(3), cfg), DimensionError);
}

TEST_CASE("S- and T-learners") {
  const LowDimScm scm = li_model_1();
  const Dataset obs = sample_dataset(scm, 4000, Regime::observational, 4);
  const Dataset exp = sample_dataset(scm, 2000, Regime::experimental, 5);
  const Dataset test = sample_dataset(scm, 500, Regime::observational, 6);
  const ArchSpec arch{0, 32, 3};
  const TrainConfig cfg = quick_config(7);

  const Classifier joint = fit_joint_model(arch, 8, obs, exp, cfg);
  const PlugInModel s = fit_s_learner(arch, 8, obs, exp, cfg, &joint);
  const PlugInModel s2 = fit_s_learner(arch, 8, obs, exp, cfg);
  const PlugInModel t = fit_t_learner(arch, 8, obs, exp, cfg, &joint);
  CHECK(s.outcome.params == s2.outcome.params);
  CHECK(s.joint.params == s2.joint.params);  // shared joint equals a fresh fit
  CHECK(s.outcome.layout.input_dim() == obs.dim() + 1);
  CHECK(t.outcome.layout.input_dim() == obs.dim());

  for (const PlugInModel* m : {&s, &t}) {
    const auto preds = plug_in_predict(*m, test.z);
    REQUIRE(preds.size() == test.size());
    std::size_t violations = 0;
    for (const auto& p : preds) {
      violations += p.violation;
      CHECK(p.violation == !check_feasibility(p.atoms, 1e-6));
      CHECK(is_valid_atoms(p.atoms, 1e-9));
    }
    MESSAGE(method_name(m->method) << " violation rate " << static_cast<double>(violations) / preds.size());
    CHECK(violations > 0);
  }

  SUBCASE("arms are fitted separately") {
    // Flipping treated-arm outcomes leaves the control model untouched.
    Dataset flipped = exp;
    for (std::size_t i = 0; i < flipped.size(); ++i) {
      if (flipped.x[i]) flipped.y[i] = static_cast<std::uint8_t>(1 - flipped.y[i]);
    }
    const PlugInModel t2 = fit_t_learner(arch, 8, obs, flipped, cfg, &joint);
    CHECK(t2.outcome.params == t.outcome.params);
    CHECK(t2.outcome_treated.params != t.outcome_treated.params);
  }
  SUBCASE("input errors") {
    Dataset control_only = exp.filter_treatment(0);
    CHECK_THROWS_AS(fit_t_learner(arch, 8, obs, control_only, cfg, &joint), std::invalid_argument);
    CHECK_THROWS_AS(fit_s_learner(arch, 8, obs, Dataset{}, cfg), std::invalid_argument);
  }
}
