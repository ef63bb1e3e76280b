#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pns/bounds.hpp"
#include "pns/dataset.hpp"
#include "pns/error.hpp"

namespace pns {

using BinaryVector = std::vector<std::uint8_t>;

/// Binary-covariate SCM with threshold treatment and banded outcome:
///   Z_j = e_Zj,  X = 1{M_X(Z) + e_X > 0.5},  Y = f_Y(X, M_Y(Z), e_Y).
/// The trailing `n_hidden` covariates are never emitted.
struct LowDimScm {
  std::vector<double> pi_z;
  double pi_x = 0.5;
  double pi_y = 0.5;
  std::vector<double> alpha;
  std::vector<double> beta;
  double c_effect = 0.0;
  std::size_t n_hidden = 0;

  std::size_t dim() const { return pi_z.size(); }
  std::size_t observed_dim() const { return dim() - n_hidden; }
  /// Throws std::invalid_argument when a Bernoulli mean leaves (0,1) or
  /// shapes disagree.
  void validate() const;
};

/// Built-in preset "li-model-1".
LowDimScm li_model_1();

/// 1{0 < Cx+m+e < 1} + 1{1 < Cx+m+e < 2}. Boundaries return 0.
int outcome_fn(int x, double m, int e, double c_effect);

double treatment_index(const LowDimScm& scm, std::span<const std::uint8_t> z);
double outcome_index(const LowDimScm& scm, std::span<const std::uint8_t> z);

/// Exact atoms at a full covariate vector by enumerating (e_X, e_Y).
AtomVector enumerate_atoms(const LowDimScm& scm, std::span<const std::uint8_t> z);

/// Exact PNS at a full covariate vector.
double true_pns(const LowDimScm& scm, std::span<const std::uint8_t> z);

/// Weights of the 2^n_hidden hidden configurations, indexed by the bit
/// pattern (bit j = hidden covariate j).
std::vector<double> hidden_weights(const LowDimScm& scm);

/// Weighted sum of `query(full_z)` over hidden configurations.
template <class Query>
auto marginalize(const LowDimScm& scm, std::span<const std::uint8_t> z_obs, Query&& query);

AtomVector marginal_atoms(const LowDimScm& scm, std::span<const std::uint8_t> z_obs);
double marginal_pns(const LowDimScm& scm, std::span<const std::uint8_t> z_obs);
/// P(X=1 | z_obs) in the observational regime (positivity diagnostic).
double marginal_treatment_prob(const LowDimScm& scm, std::span<const std::uint8_t> z_obs);

/// n units of one regime, deterministic in `seed`. Emits only observed
/// covariates. Experimental treatment is Bernoulli(1/2).
Dataset sample_dataset(const LowDimScm& scm, std::size_t n, Regime regime,
                       std::uint64_t seed);

/// n draws of (X, Y) at a fixed full covariate vector; counts indexed
/// [2*x + y].
std::array<std::size_t, 4> sample_cells_at(const LowDimScm& scm,
                                           std::span<const std::uint8_t> z,
                                           std::size_t n, Regime regime,
                                           std::uint64_t seed);

BinaryVector to_binary(std::span<const double> row);


// ---------------------------------------------------------------------------

template <class Query>
auto marginalize(const LowDimScm& scm, std::span<const std::uint8_t> z_obs,
                 Query&& query) {
  if (z_obs.size() != scm.observed_dim()) {
    throw DimensionError("marginalize: expected " +
                         std::to_string(scm.observed_dim()) + " observed covariates");
  }
  BinaryVector full(scm.dim());
  std::copy(z_obs.begin(), z_obs.end(), full.begin());
  const std::vector<double> weights = hidden_weights(scm);
  using Result = decltype(query(std::span<const std::uint8_t>(full)));
  Result total{};
  bool first = true;
  for (std::size_t cfg = 0; cfg < weights.size(); ++cfg) {
    for (std::size_t j = 0; j < scm.n_hidden; ++j) {
      full[scm.observed_dim() + j] = static_cast<std::uint8_t>((cfg >> j) & 1U);
    }
    Result value = query(std::span<const std::uint8_t>(full));
    if (first) {
      total = weights[cfg] * value;
      first = false;
    } else {
      total = total + weights[cfg] * value;
    }
  }
  return total;
}

}  // namespace pns
