#include "pns/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pns {

namespace {

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

PnsInterval make_interval(double lo, double hi) {
  PnsInterval out;
  out.crossed = lo > hi;
  out.lower = clip01(lo);
  out.upper = clip01(hi);
  return out;
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::plug_in: return "plug_in";
    case Method::s_learner: return "s_learner";
    case Method::t_learner: return "t_learner";
    case Method::anchored: return "anchored";
    case Method::mb_last_layer: return "mb_last_layer";
    case Method::mb_full: return "mb_full";
    case Method::enn: return "enn";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::plug_in, Method::s_learner, Method::t_learner,
                   Method::anchored, Method::mb_last_layer, Method::mb_full,
                   Method::enn}) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

bool is_valid_atoms(const AtomVector& a, double tol) {
  for (double v : {a.mu1, a.mu0, a.p11, a.p10, a.p01, a.p00}) {
    if (!(v >= -tol && v <= 1.0 + tol)) return false;
  }
  const double s = a.p00 + a.p01 + a.p10 + a.p11;
  return std::abs(s - 1.0) <= std::max(tol, 1e-9);
}

bool check_feasibility(const AtomVector& a, double tol) {
  return a.p11 - tol <= a.mu1 && a.mu1 <= 1.0 - a.p10 + tol &&
         a.p01 - tol <= a.mu0 && a.mu0 <= 1.0 - a.p00 + tol;
}

BoundTerms bound_terms(const AtomVector& a) {
  BoundTerms t;
  t.lower = {0.0, a.mu1 - a.mu0, a.p11 + a.p01 - a.mu0, a.mu1 - a.p11 - a.p01};
  t.upper = {a.mu1, 1.0 - a.mu0, a.p11 + a.p00, a.mu1 - a.mu0 + a.p10 + a.p01};
  return t;
}

std::size_t active_lower(const BoundTerms& t) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < 4; ++j) {
    if (t.lower[j] > t.lower[best]) best = j;
  }
  return best;
}

std::size_t active_upper(const BoundTerms& t) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < 4; ++k) {
    if (t.upper[k] < t.upper[best]) best = k;
  }
  return best;
}

PnsInterval plug_in_interval(const BoundTerms& t) {
  return make_interval(t.lower[active_lower(t)], t.upper[active_upper(t)]);
}

PnsInterval plug_in_interval(const AtomVector& atoms) {
  return plug_in_interval(bound_terms(atoms));
}

PnsInterval precision_corrected_interval(const BoundTerms& means,
                                         const BoundTerms& stds,
                                         double kappa_l, double kappa_u) {
  if (kappa_l < 0.0 || kappa_u < 0.0) {
    throw std::invalid_argument("critical values must be nonnegative");
  }
  BoundTerms penalised;
  for (std::size_t j = 0; j < 4; ++j) {
    if (stds.lower[j] < 0.0 || stds.upper[j] < 0.0) {
      throw std::invalid_argument("term standard deviations must be nonnegative");
    }
    penalised.lower[j] = means.lower[j] - kappa_l * stds.lower[j];
    penalised.upper[j] = means.upper[j] + kappa_u * stds.upper[j];
  }
  PnsInterval out = plug_in_interval(penalised);
  out.kappa_lower = kappa_l;
  out.kappa_upper = kappa_u;
  return out;
}

bool interval_contains(const PnsInterval& outer, const PnsInterval& inner,
                       double tol) {
  return outer.lower <= inner.lower + tol && outer.upper >= inner.upper - tol;
}

AtomVector operator+(const AtomVector& a, const AtomVector& b) {
  return {a.mu1 + b.mu1, a.mu0 + b.mu0, a.p11 + b.p11,
          a.p10 + b.p10, a.p01 + b.p01, a.p00 + b.p00};
}

AtomVector operator*(double w, const AtomVector& a) {
  return {w * a.mu1, w * a.mu0, w * a.p11, w * a.p10, w * a.p01, w * a.p00};
}

}  // namespace pns
