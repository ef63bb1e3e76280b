#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace pns {

/// The six conditional probabilities at one covariate point.
///
/// mu1/mu0 are interventional success probabilities; pxy = P(X=x, Y=y | z)
/// are observational joint probabilities and sum to one.
struct AtomVector {
  double mu1 = 0.0;
  double mu0 = 0.0;
  double p11 = 0.0;
  double p10 = 0.0;
  double p01 = 0.0;
  double p00 = 0.0;

  friend bool operator==(const AtomVector&, const AtomVector&) = default;
};

/// Componentwise sum and scaling, used for mixtures over hidden states and
/// averages over draws.
AtomVector operator+(const AtomVector& a, const AtomVector& b);
AtomVector operator*(double w, const AtomVector& a);

/// Lower and upper envelope terms of the PNS bounds.
///
/// lower[0] is the constant 0. Ordering is fixed:
///   lower = (0, mu1-mu0, p11+p01-mu0, mu1-p11-p01)
///   upper = (mu1, 1-mu0, p11+p00, mu1-mu0+p10+p01)
struct BoundTerms {
  std::array<double, 4> lower{};
  std::array<double, 4> upper{};
};

enum class Method {
  plug_in,
  s_learner,
  t_learner,
  anchored,
  mb_last_layer,
  mb_full,
  enn,
};

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

/// An estimated PNS interval. `lower`/`upper` are clipped to [0,1];
/// `crossed` records lower > upper before clipping. Crossed intervals are
/// never repaired.
struct PnsInterval {
  double lower = 0.0;
  double upper = 1.0;
  bool crossed = false;
  Method method = Method::plug_in;
  double kappa_lower = 0.0;
  double kappa_upper = 0.0;
};

inline constexpr double kOracleTolerance = 1e-9;
inline constexpr double kAuditTolerance = 1e-6;

/// Simplex check: entries in [0,1] (within tol) and pxy summing to one.
bool is_valid_atoms(const AtomVector& atoms, double tol = 1e-9);

/// p11 <= mu1 <= 1-p10 and p01 <= mu0 <= 1-p00, each side relaxed by tol.
bool check_feasibility(const AtomVector& atoms, double tol);

BoundTerms bound_terms(const AtomVector& atoms);

/// Index of the maximal lower / minimal upper term. First index wins ties.
std::size_t active_lower(const BoundTerms& terms);
std::size_t active_upper(const BoundTerms& terms);

PnsInterval plug_in_interval(const BoundTerms& terms);
PnsInterval plug_in_interval(const AtomVector& atoms);

/// Envelope of penalised terms: max_j(mean_j - kl*std_j), min_k(mean_k + ku*std_k).
/// Throws std::invalid_argument on a negative std or negative kappa.
PnsInterval precision_corrected_interval(const BoundTerms& term_means,
                                         const BoundTerms& term_stds,
                                         double kappa_l, double kappa_u);

/// True when [outer.lower, outer.upper] contains [inner.lower, inner.upper].
bool interval_contains(const PnsInterval& outer, const PnsInterval& inner,
                       double tol = 0.0);

}  // namespace pns
