#include <algorithm>
#include <array>
#include <numeric>
#include <random>

#include "doctest.h"
#include "pns/bounds.hpp"
#include "pns/random.hpp"

using namespace pns;

namespace {

AtomVector symmetric_atoms() {
  return {0.5, 0.5, 0.25, 0.25, 0.25, 0.25};
}

BoundTerms with_lower(std::array<double, 4> lower) {
  BoundTerms t;
  t.lower = lower;
  t.upper = {1.0, 1.0, 1.0, 1.0};
  return t;
}

}  // namespace

TEST_CASE("feasibility predicate on hand cases") {
  CHECK(check_feasibility(symmetric_atoms(), 0.0));
  AtomVector bad = symmetric_atoms();
  bad.mu1 = 0.2;
  bad.p11 = 0.3;
  bad.p10 = 0.2;
  CHECK_FALSE(check_feasibility(bad, 0.0));
  CHECK(check_feasibility(bad, 0.1 + 1e-12));
}

TEST_CASE("bound terms of the symmetric point") {
  const BoundTerms t = bound_terms(symmetric_atoms());
  for (double v : t.lower) CHECK(v == doctest::Approx(0.0));
  for (double v : t.upper) CHECK(v == doctest::Approx(0.5));
  const PnsInterval iv = plug_in_interval(symmetric_atoms());
  CHECK(iv.lower == 0.0);
  CHECK(iv.upper == doctest::Approx(0.5));
  CHECK_FALSE(iv.crossed);
  CHECK(iv.kappa_lower == 0.0);
  CHECK(iv.kappa_upper == 0.0);
}

TEST_CASE("bound terms follow the affine rows") {
  const AtomVector a{0.7, 0.2, 0.3, 0.1, 0.15, 0.45};
  const BoundTerms t = bound_terms(a);
  CHECK(t.lower[0] == 0.0);
  CHECK(t.lower[1] == doctest::Approx(0.5));
  CHECK(t.lower[2] == doctest::Approx(0.25));
  CHECK(t.lower[3] == doctest::Approx(0.25));
  CHECK(t.upper[0] == doctest::Approx(0.7));
  CHECK(t.upper[1] == doctest::Approx(0.8));
  CHECK(t.upper[2] == doctest::Approx(0.75));
  CHECK(t.upper[3] == doctest::Approx(0.75));
}

TEST_CASE("max of noisy lower terms picks the inflated one") {
  CHECK(plug_in_interval(with_lower({0.05, 0.40, 0.28, 0.30})).lower == doctest::Approx(0.40));
  CHECK(plug_in_interval(with_lower({0.02, 0.40, 0.68, 0.22})).lower == doctest::Approx(0.68));
}

TEST_CASE("crossing is flagged before clipping and not repaired") {
  BoundTerms t;
  t.lower = {0.0, 0.6, 0.1, 0.1};
  t.upper = {0.4, 0.9, 0.9, 0.9};
  const PnsInterval iv = plug_in_interval(t);
  CHECK(iv.crossed);
  CHECK(iv.lower == doctest::Approx(0.6));
  CHECK(iv.upper == doctest::Approx(0.4));

  t.lower = {0.0, 1.3, 0.1, 0.1};
  t.upper = {1.5, 1.6, 1.4, 1.7};
  const PnsInterval clipped = plug_in_interval(t);
  CHECK_FALSE(clipped.crossed);
  CHECK(clipped.lower == 1.0);
  CHECK(clipped.upper == 1.0);
}

TEST_CASE("active term ties go to the first index") {
  BoundTerms t;
  t.lower = {0.0, 0.3, 0.3, 0.1};
  t.upper = {0.5, 0.5, 0.7, 0.5};
  CHECK(active_lower(t) == 1);
  CHECK(active_upper(t) == 0);
}

TEST_CASE("precision correction") {
  BoundTerms means;
  means.lower = {0.0, 0.4, 0.3, 0.2};
  means.upper = {0.9, 0.8, 0.85, 0.95};
  BoundTerms stds;
  stds.lower = {0.0, 0.1, 0.01, 0.01};
  stds.upper = {0.05, 0.05, 0.05, 0.05};

  SUBCASE("zero kappa is the plug-in interval") {
    const PnsInterval a = precision_corrected_interval(means, stds, 0.0, 0.0);
    const PnsInterval b = plug_in_interval(means);
    CHECK(a.lower == b.lower);
    CHECK(a.upper == b.upper);
  }
  SUBCASE("penalised lower envelope") {
    const PnsInterval iv = precision_corrected_interval(means, stds, 2.0, 1.0);
    CHECK(iv.lower == doctest::Approx(0.28));
    CHECK(iv.upper == doctest::Approx(0.85));
    CHECK(iv.kappa_lower == 2.0);
    CHECK(iv.kappa_upper == 1.0);
  }
  SUBCASE("negative inputs rejected") {
    BoundTerms neg = stds;
    neg.upper[2] = -1e-3;
    CHECK_THROWS_AS(precision_corrected_interval(means, neg, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(precision_corrected_interval(means, stds, -1.0, 1.0), std::invalid_argument);
  }
}

TEST_CASE("feasible grid atoms never cross") {
  // Joint cells and interventional means on a 0.05 grid.
  const int steps = 20;
  std::size_t feasible = 0;
  std::size_t crossed = 0;
  for (int a = 0; a <= steps; ++a) {
    for (int b = 0; a + b <= steps; ++b) {
      for (int c = 0; a + b + c <= steps; ++c) {
        const int d = steps - a - b - c;
        for (int m1 = 0; m1 <= steps; ++m1) {
          for (int m0 = 0; m0 <= steps; ++m0) {
            const AtomVector atoms{m1 / 20.0, m0 / 20.0, a / 20.0, b / 20.0, c / 20.0, d / 20.0};
            if (!check_feasibility(atoms, 0.0)) continue;
            ++feasible;
            const BoundTerms t = bound_terms(atoms);
            const double lo = *std::max_element(t.lower.begin(), t.lower.end());
            const double hi = *std::min_element(t.upper.begin(), t.upper.end());
            crossed += lo > hi + 1e-12;
          }
        }
      }
    }
  }
  CHECK(feasible > 10000);
  CHECK(crossed == 0);
}

TEST_CASE("widening is monotone in kappa and always contains the plug-in") {
  Rng rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    BoundTerms means;
    BoundTerms stds;
    for (std::size_t j = 0; j < 4; ++j) {
      means.lower[j] = j == 0 ? 0.0 : uniform01(rng) * 0.6 - 0.1;
      means.upper[j] = 0.4 + uniform01(rng) * 0.7;
      stds.lower[j] = j == 0 ? 0.0 : uniform01(rng) * 0.1;
      stds.upper[j] = uniform01(rng) * 0.1;
    }
    const PnsInterval base = plug_in_interval(means);
    PnsInterval prev = base;
    for (double k : {0.5, 1.0, 2.0, 4.0}) {
      const PnsInterval cur = precision_corrected_interval(means, stds, k, k);
      CHECK(cur.lower <= prev.lower);
      CHECK(cur.upper >= prev.upper);
      CHECK(interval_contains(cur, base));
      prev = cur;
    }
  }
}

TEST_CASE("envelopes ignore term order") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    BoundTerms t;
    for (std::size_t j = 0; j < 4; ++j) {
      t.lower[j] = uniform01(rng);
      t.upper[j] = uniform01(rng);
    }
    const PnsInterval ref = plug_in_interval(t);
    std::array<std::size_t, 4> perm{0, 1, 2, 3};
    do {
      BoundTerms p;
      for (std::size_t j = 0; j < 4; ++j) {
        p.lower[j] = t.lower[perm[j]];
        p.upper[j] = t.upper[perm[(j + 1) % 4]];
      }
      const PnsInterval got = plug_in_interval(p);
      CHECK(got.lower == ref.lower);
      CHECK(got.upper == ref.upper);
      CHECK(got.crossed == ref.crossed);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

TEST_CASE("method names round trip") {
  for (Method m : {Method::plug_in, Method::s_learner, Method::t_learner, Method::anchored,
                   Method::mb_last_layer, Method::mb_full, Method::enn}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("nope"), std::invalid_argument);
}
