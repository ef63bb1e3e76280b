#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pns/bounds.hpp"
#include "pns/dataset.hpp"

namespace pns {

/// Outcome logit coefficients for one treatment arm.
struct ArmOutcome {
  double intercept = 0.0;
  std::vector<double> beta;         // d_obs
  std::vector<double> latent;       // c_x, k
  Eigen::MatrixXd pairwise;         // d_x, k x k, strict upper triangle used
  std::vector<double> interaction;  // r_x, k
  Eigen::MatrixXd directions;       // v_x, k x d_obs
};

/// Real covariates plus k latent Bernoulli confounders with a clipped
/// linear treatment model and a logistic outcome model per arm.
struct HighDimScm {
  std::size_t d_obs = 0;
  std::size_t k = 0;
  std::vector<double> pi;
  double gamma = 1.0;
  std::vector<double> alpha_conf;
  double eps_clip = 0.05;
  std::function<double(std::span<const double>)> base_propensity;
  std::array<ArmOutcome, 2> arms;

  void validate() const;
};

inline constexpr std::size_t kMaxLatent = 20;

struct CovariateSource {
  enum class Origin { file, synthetic };
  Eigen::MatrixXd rows;
  Origin origin = Origin::synthetic;
  std::string description;

  std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }
};

/// Headered delimited numeric file (comma, tab or semicolon).
CovariateSource load_covariates(const std::filesystem::path& path);
/// Seeded standard normals, used when no covariate file is supplied.
CovariateSource synthetic_covariates(std::size_t rows, std::size_t cols, std::uint64_t seed);

struct HighDimDefaults {
  std::size_t k = 5;
  double gamma = 1.0;
  double eps_clip = 0.05;
  std::size_t propensity_support = 10;
};

/// Coefficients drawn once from a seeded uniform(-1,1), scaled so outcome
/// logits stay within a few units at standard-normal covariates.
HighDimScm default_highdim_scm(std::size_t d_obs, std::uint64_t seed,
                               const HighDimDefaults& defaults = {});

double propensity(const HighDimScm& scm, std::span<const double> z_obs,
                  std::span<const std::uint8_t> h);
double outcome_prob(const HighDimScm& scm, int x, std::span<const double> z_obs,
                    std::span<const std::uint8_t> h);
double latent_weight(const HighDimScm& scm, std::span<const std::uint8_t> h);

/// Exact atoms at observed covariates by summing over all 2^k latent states.
AtomVector marginal_atoms(const HighDimScm& scm, std::span<const double> z_obs);
/// PNS under the shared uniform-threshold coupling of the potential outcomes.
double true_pns_obs(const HighDimScm& scm, std::span<const double> z_obs);

Dataset sample_highdim(const HighDimScm& scm, const CovariateSource& source,
                       std::size_t n, Regime regime, std::uint64_t seed);

}  // namespace pns
