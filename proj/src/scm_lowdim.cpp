#include "pns/scm_lowdim.hpp"

#include <stdexcept>

#include "pns/random.hpp"

namespace pns {

void LowDimScm::validate() const {
  auto open_unit = [](double p) { return p > 0.0 && p < 1.0; };
  for (double p : pi_z) {
    if (!open_unit(p)) throw std::invalid_argument("pi_z entries must lie in (0,1)");
  }
  if (!open_unit(pi_x) || !open_unit(pi_y)) {
    throw std::invalid_argument("pi_x and pi_y must lie in (0,1)");
  }
  if (alpha.size() != dim() || beta.size() != dim()) {
    throw std::invalid_argument("alpha and beta must have one entry per covariate");
  }
  if (n_hidden >= dim()) throw std::invalid_argument("n_hidden must be < d");
  if (n_hidden > 20) throw std::invalid_argument("n_hidden enumeration budget is 2^20");
}

LowDimScm li_model_1() {
  LowDimScm scm;
  scm.pi_z = {0.3529, 0.4610, 0.3317, 0.8855, 0.0170, 0.3808, 0.0281,
              0.2208, 0.6177, 0.9820, 0.1420, 0.8336, 0.8829, 0.5421,
              0.0850, 0.6454, 0.8638, 0.4605, 0.3140, 0.6859};
  scm.pi_x = 0.6017;
  scm.pi_y = 0.4977;
  scm.c_effect = -0.7795;
  scm.alpha = {0.2592,  -0.6581, -0.7503, 0.1629,  0.6520,  -0.0893, 0.4215,
               -0.4431, 0.8026,  -0.2257, 0.7166,  0.0651,  -0.2207, 0.1564,
               -0.5069, -0.7071, 0.4188,  -0.0822, 0.7693,  -0.5116};
  scm.beta = {-0.7929, 0.7600,  0.5544,  0.5040,  -0.5272, 0.3786,  0.2693,
              0.6716,  0.3960,  0.3252,  0.6578,  0.8017,  0.0908,  -0.0714,
              -0.0691, -0.2226, -0.8484, -0.5843, -0.3249, 0.6256};
  scm.n_hidden = 5;
  return scm;
}

int outcome_fn(int x, double m, int e, double c_effect) {
  const double v = c_effect * x + m + e;
  return static_cast<int>(v > 0.0 && v < 1.0) + static_cast<int>(v > 1.0 && v < 2.0);
}

namespace {

double linear_index(std::span<const double> coef, std::span<const std::uint8_t> z) {
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) s += coef[j] * z[j];
  return s;
}

void check_full(const LowDimScm& scm, std::span<const std::uint8_t> z) {
  if (z.size() != scm.dim()) {
    throw DimensionError("expected full covariate vector of length " +
                         std::to_string(scm.dim()) + ", got " + std::to_string(z.size()));
  }
}

int realized_treatment(double mx, int e_x) { return mx + e_x > 0.5 ? 1 : 0; }

}  // namespace

double treatment_index(const LowDimScm& scm, std::span<const std::uint8_t> z) {
  check_full(scm, z);
  return linear_index(scm.alpha, z);
}

double outcome_index(const LowDimScm& scm, std::span<const std::uint8_t> z) {
  check_full(scm, z);
  return linear_index(scm.beta, z);
}

AtomVector enumerate_atoms(const LowDimScm& scm, std::span<const std::uint8_t> z) {
  const double mx = treatment_index(scm, z);
  const double my = outcome_index(scm, z);
  AtomVector a;
  for (int ey = 0; ey <= 1; ++ey) {
    const double py = ey ? scm.pi_y : 1.0 - scm.pi_y;
    a.mu1 += py * outcome_fn(1, my, ey, scm.c_effect);
    a.mu0 += py * outcome_fn(0, my, ey, scm.c_effect);
  }
  std::array<double, 4> cells{};  // [2x + y]
  for (int ex = 0; ex <= 1; ++ex) {
    const double px = ex ? scm.pi_x : 1.0 - scm.pi_x;
    const int x = realized_treatment(mx, ex);
    for (int ey = 0; ey <= 1; ++ey) {
      const double py = ey ? scm.pi_y : 1.0 - scm.pi_y;
      const int y = outcome_fn(x, my, ey, scm.c_effect);
      cells[static_cast<std::size_t>(2 * x + y)] += px * py;
    }
  }
  a.p00 = cells[0];
  a.p01 = cells[1];
  a.p10 = cells[2];
  a.p11 = cells[3];
  return a;
}

double true_pns(const LowDimScm& scm, std::span<const std::uint8_t> z) {
  const double my = outcome_index(scm, z);
  double pns = 0.0;
  for (int ey = 0; ey <= 1; ++ey) {
    const double py = ey ? scm.pi_y : 1.0 - scm.pi_y;
    if (outcome_fn(1, my, ey, scm.c_effect) == 1 && outcome_fn(0, my, ey, scm.c_effect) == 0) {
      pns += py;
    }
  }
  return pns;
}

std::vector<double> hidden_weights(const LowDimScm& scm) {
  const std::size_t count = std::size_t{1} << scm.n_hidden;
  std::vector<double> w(count, 1.0);
  for (std::size_t cfg = 0; cfg < count; ++cfg) {
    for (std::size_t j = 0; j < scm.n_hidden; ++j) {
      const double p = scm.pi_z[scm.observed_dim() + j];
      w[cfg] *= ((cfg >> j) & 1U) ? p : 1.0 - p;
    }
  }
  return w;
}

AtomVector marginal_atoms(const LowDimScm& scm, std::span<const std::uint8_t> z_obs) {
  return marginalize(scm, z_obs, [&](std::span<const std::uint8_t> z) {
    return enumerate_atoms(scm, z);
  });
}

double marginal_pns(const LowDimScm& scm, std::span<const std::uint8_t> z_obs) {
  return marginalize(scm, z_obs,
                     [&](std::span<const std::uint8_t> z) { return true_pns(scm, z); });
}

double marginal_treatment_prob(const LowDimScm& scm, std::span<const std::uint8_t> z_obs) {
  return marginalize(scm, z_obs, [&](std::span<const std::uint8_t> z) {
    const double mx = treatment_index(scm, z);
    return (1.0 - scm.pi_x) * realized_treatment(mx, 0) + scm.pi_x * realized_treatment(mx, 1);
  });
}

namespace {

// Draws e_X, e_Y (and the randomised treatment) for one unit at full z.
std::pair<int, int> draw_unit(const LowDimScm& scm, double mx, double my,
                              Regime regime, Rng& rng) {
  const int ex = bernoulli(rng, scm.pi_x);
  const int ey = bernoulli(rng, scm.pi_y);
  int x = 0;
  if (regime == Regime::observational) {
    x = realized_treatment(mx, ex);
  } else {
    x = bernoulli(rng, 0.5);
  }
  return {x, outcome_fn(x, my, ey, scm.c_effect)};
}

}  // namespace

Dataset sample_dataset(const LowDimScm& scm, std::size_t n, Regime regime,
                       std::uint64_t seed) {
  scm.validate();
  Rng rng(seed);
  Dataset data;
  data.regime = regime;
  const auto d_obs = static_cast<Eigen::Index>(scm.observed_dim());
  data.z.resize(static_cast<Eigen::Index>(n), d_obs);
  data.x.resize(n);
  data.y.resize(n);
  BinaryVector z(scm.dim());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < scm.dim(); ++j) {
      z[j] = static_cast<std::uint8_t>(bernoulli(rng, scm.pi_z[j]));
    }
    const auto [x, y] = draw_unit(scm, linear_index(scm.alpha, z),
                                  linear_index(scm.beta, z), regime, rng);
    for (Eigen::Index j = 0; j < d_obs; ++j) {
      data.z(static_cast<Eigen::Index>(i), j) = z[static_cast<std::size_t>(j)];
    }
    data.x[i] = static_cast<std::uint8_t>(x);
    data.y[i] = static_cast<std::uint8_t>(y);
  }
  return data;
}

std::array<std::size_t, 4> sample_cells_at(const LowDimScm& scm,
                                           std::span<const std::uint8_t> z,
                                           std::size_t n, Regime regime,
                                           std::uint64_t seed) {
  const double mx = treatment_index(scm, z);
  const double my = outcome_index(scm, z);
  Rng rng(seed);
  std::array<std::size_t, 4> counts{};
  for (std::size_t i = 0; i < n; ++i) {
    const auto [x, y] = draw_unit(scm, mx, my, regime, rng);
    ++counts[static_cast<std::size_t>(2 * x + y)];
  }
  return counts;
}

BinaryVector to_binary(std::span<const double> row) {
  BinaryVector out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] > 0.5 ? 1 : 0;
  return out;
}

}  // namespace pns
