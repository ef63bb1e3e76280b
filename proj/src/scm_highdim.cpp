#include "pns/scm_highdim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pns/error.hpp"
#include "pns/random.hpp"

namespace pns {

namespace {

double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

void check_shapes(const HighDimScm& scm, std::span<const double> z_obs,
                  std::span<const std::uint8_t> h) {
  if (z_obs.size() != scm.d_obs) {
    throw DimensionError("expected " + std::to_string(scm.d_obs) +
                         " observed covariates, got " + std::to_string(z_obs.size()));
  }
  if (h.size() != scm.k) {
    throw DimensionError("expected " + std::to_string(scm.k) + " latent values, got " +
                         std::to_string(h.size()));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Latent-independent pieces of the outcome logit at one covariate row.
struct ArmProjection {
  double base = 0.0;            // a_x + <beta_x, z>
  std::vector<double> latent;   // c_j + r_j <v_j, z>
};

ArmProjection project(const HighDimScm& scm, int x, std::span<const double> z) {
  const ArmOutcome& arm = scm.arms[static_cast<std::size_t>(x)];
  ArmProjection p;
  p.base = arm.intercept + dot(arm.beta, z);
  p.latent.resize(scm.k);
  Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<Eigen::Index>(z.size()));
  for (std::size_t j = 0; j < scm.k; ++j) {
    const double vz = arm.directions.row(static_cast<Eigen::Index>(j)).dot(zv);
    p.latent[j] = arm.latent[j] + arm.interaction[j] * vz;
  }
  return p;
}

double arm_logit(const HighDimScm& scm, int x, const ArmProjection& p,
                 std::span<const double> centred) {
  const ArmOutcome& arm = scm.arms[static_cast<std::size_t>(x)];
  double v = p.base;
  for (std::size_t j = 0; j < scm.k; ++j) {
    v += p.latent[j] * centred[j];
    for (std::size_t l = j + 1; l < scm.k; ++l) {
      v += arm.pairwise(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) *
           centred[j] * centred[l];
    }
  }
  return v;
}

std::vector<double> centre(const HighDimScm& scm, std::span<const std::uint8_t> h) {
  std::vector<double> c(scm.k);
  for (std::size_t j = 0; j < scm.k; ++j) c[j] = h[j] - scm.pi[j];
  return c;
}

double clipped_propensity(const HighDimScm& scm, double base, std::span<const double> centred) {
  double shift = 0.0;
  for (std::size_t j = 0; j < scm.k; ++j) shift += scm.alpha_conf[j] * centred[j];
  return std::clamp(base + scm.gamma * shift, scm.eps_clip, 1.0 - scm.eps_clip);
}

template <class Visit>
void for_each_latent(const HighDimScm& scm, Visit&& visit) {
  if (scm.k > kMaxLatent) {
    throw PnsError("budget", "latent enumeration limited to k <= " + std::to_string(kMaxLatent));
  }
  std::vector<std::uint8_t> h(scm.k);
  const std::size_t count = std::size_t{1} << scm.k;
  for (std::size_t cfg = 0; cfg < count; ++cfg) {
    for (std::size_t j = 0; j < scm.k; ++j) h[j] = static_cast<std::uint8_t>((cfg >> j) & 1U);
    visit(std::span<const std::uint8_t>(h));
  }
}

}  // namespace

void HighDimScm::validate() const {
  if (pi.size() != k || alpha_conf.size() != k) {
    throw std::invalid_argument("pi and alpha_conf need k entries");
  }
  double l1 = 0.0;
  for (double a : alpha_conf) l1 += std::abs(a);
  if (l1 > 1.0 + 1e-12) throw std::invalid_argument("sum |alpha_conf| must be <= 1");
  for (double p : pi) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("latent means must lie in (0,1)");
  }
  if (!(eps_clip > 0.0 && eps_clip < 0.5)) throw std::invalid_argument("eps_clip must lie in (0,0.5)");
  if (gamma < 0.0) throw std::invalid_argument("gamma must be nonnegative");
  if (!base_propensity) throw std::invalid_argument("base_propensity is not set");
  for (const ArmOutcome& arm : arms) {
    if (arm.beta.size() != d_obs || arm.latent.size() != k || arm.interaction.size() != k ||
        static_cast<std::size_t>(arm.pairwise.rows()) != k ||
        static_cast<std::size_t>(arm.pairwise.cols()) != k ||
        static_cast<std::size_t>(arm.directions.rows()) != k ||
        static_cast<std::size_t>(arm.directions.cols()) != d_obs) {
      throw std::invalid_argument("outcome coefficient shapes disagree with (k, d_obs)");
    }
  }
}

CovariateSource load_covariates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PnsError("io", "cannot read covariates from " + path.string());
  std::string header;
  std::getline(in, header);
  char delim = ',';
  if (header.find('\t') != std::string::npos) delim = '\t';
  else if (header.find(';') != std::string::npos) delim = ';';
  std::size_t cols = 1 + static_cast<std::size_t>(std::count(header.begin(), header.end(), delim));
  std::vector<double> values;
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, delim)) {
      double v = 0.0;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw PnsError("format", path.string() + ": non-numeric cell at row " +
                                     std::to_string(rows + 1) + ", column " + std::to_string(c + 1));
      }
      if (!std::isfinite(v)) {
        throw PnsError("format", path.string() + ": non-finite value at row " + std::to_string(rows + 1));
      }
      values.push_back(v);
      ++c;
    }
    if (c != cols) {
      throw PnsError("format", path.string() + ": row " + std::to_string(rows + 1) + " has " +
                                   std::to_string(c) + " columns, header has " + std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) throw PnsError("format", path.string() + ": no covariate rows");
  CovariateSource src;
  src.rows = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  src.origin = CovariateSource::Origin::file;
  src.description = path.string();
  return src;
}

CovariateSource synthetic_covariates(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  CovariateSource src;
  src.rows.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < src.rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < src.rows.cols(); ++j) src.rows(i, j) = standard_normal(rng);
  }
  src.origin = CovariateSource::Origin::synthetic;
  src.description = "synthetic standard normal " + std::to_string(rows) + "x" + std::to_string(cols) +
                    " seed " + std::to_string(seed);
  return src;
}

HighDimScm default_highdim_scm(std::size_t d_obs, std::uint64_t seed,
                               const HighDimDefaults& defaults) {
  Rng rng(seed);
  auto unif = [&] { return 2.0 * uniform01(rng) - 1.0; };
  HighDimScm scm;
  scm.d_obs = d_obs;
  scm.k = defaults.k;
  scm.gamma = defaults.gamma;
  scm.eps_clip = defaults.eps_clip;
  scm.pi.resize(scm.k);
  for (double& p : scm.pi) p = 0.2 + 0.6 * uniform01(rng);
  scm.alpha_conf.resize(scm.k);
  double l1 = 0.0;
  for (double& a : scm.alpha_conf) {
    a = unif();
    l1 += std::abs(a);
  }
  for (double& a : scm.alpha_conf) a /= std::max(l1, 1.0);

  // Sparse logistic index for the observed-covariate propensity.
  const std::size_t support = std::min(defaults.propensity_support, d_obs);
  std::vector<std::size_t> cols(support);
  std::vector<double> weights(support);
  for (std::size_t s = 0; s < support; ++s) {
    cols[s] = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(d_obs));
    weights[s] = unif() * std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(support, 1)));
  }
  const double eps = scm.eps_clip;
  scm.base_propensity = [cols, weights, eps](std::span<const double> z) {
    double v = 0.0;
    for (std::size_t s = 0; s < cols.size(); ++s) v += weights[s] * z[cols[s]];
    return std::clamp(sigmoid(v), eps, 1.0 - eps);
  };

  const double dense_scale = std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(d_obs, 1)));
  for (ArmOutcome& arm : scm.arms) {
    arm.intercept = 0.5 * unif();
    arm.beta.resize(d_obs);
    for (double& b : arm.beta) b = dense_scale * unif();
    arm.latent.resize(scm.k);
    for (double& c : arm.latent) c = 1.5 * unif();
    arm.pairwise = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(scm.k), static_cast<Eigen::Index>(scm.k));
    for (std::size_t j = 0; j < scm.k; ++j) {
      for (std::size_t l = j + 1; l < scm.k; ++l) {
        arm.pairwise(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) = 0.5 * unif();
      }
    }
    arm.interaction.resize(scm.k);
    for (double& r : arm.interaction) r = 0.5 * unif();
    arm.directions.resize(static_cast<Eigen::Index>(scm.k), static_cast<Eigen::Index>(d_obs));
    for (Eigen::Index j = 0; j < arm.directions.rows(); ++j) {
      for (Eigen::Index c = 0; c < arm.directions.cols(); ++c) arm.directions(j, c) = dense_scale * unif();
    }
  }
  // Shift the treated arm so the average effect is positive.
  scm.arms[1].intercept += 1.0;
  scm.validate();
  return scm;
}

double propensity(const HighDimScm& scm, std::span<const double> z_obs,
                  std::span<const std::uint8_t> h) {
  check_shapes(scm, z_obs, h);
  return clipped_propensity(scm, scm.base_propensity(z_obs), centre(scm, h));
}

double outcome_prob(const HighDimScm& scm, int x, std::span<const double> z_obs,
                    std::span<const std::uint8_t> h) {
  check_shapes(scm, z_obs, h);
  return sigmoid(arm_logit(scm, x, project(scm, x, z_obs), centre(scm, h)));
}

double latent_weight(const HighDimScm& scm, std::span<const std::uint8_t> h) {
  double w = 1.0;
  for (std::size_t j = 0; j < scm.k; ++j) w *= h[j] ? scm.pi[j] : 1.0 - scm.pi[j];
  return w;
}

AtomVector marginal_atoms(const HighDimScm& scm, std::span<const double> z_obs) {
  if (z_obs.size() != scm.d_obs) throw DimensionError("marginal_atoms: covariate dimension mismatch");
  const ArmProjection p1 = project(scm, 1, z_obs);
  const ArmProjection p0 = project(scm, 0, z_obs);
  const double base = scm.base_propensity(z_obs);
  AtomVector a;
  for_each_latent(scm, [&](std::span<const std::uint8_t> h) {
    const std::vector<double> c = centre(scm, h);
    const double w = latent_weight(scm, h);
    const double px = clipped_propensity(scm, base, c);
    const double y1 = sigmoid(arm_logit(scm, 1, p1, c));
    const double y0 = sigmoid(arm_logit(scm, 0, p0, c));
    a.mu1 += w * y1;
    a.mu0 += w * y0;
    a.p11 += w * px * y1;
    a.p10 += w * px * (1.0 - y1);
    a.p01 += w * (1.0 - px) * y0;
    a.p00 += w * (1.0 - px) * (1.0 - y0);
  });
  return a;
}

double true_pns_obs(const HighDimScm& scm, std::span<const double> z_obs) {
  if (z_obs.size() != scm.d_obs) throw DimensionError("true_pns_obs: covariate dimension mismatch");
  const ArmProjection p1 = project(scm, 1, z_obs);
  const ArmProjection p0 = project(scm, 0, z_obs);
  double pns = 0.0;
  for_each_latent(scm, [&](std::span<const std::uint8_t> h) {
    const std::vector<double> c = centre(scm, h);
    const double gap = sigmoid(arm_logit(scm, 1, p1, c)) - sigmoid(arm_logit(scm, 0, p0, c));
    pns += latent_weight(scm, h) * std::max(gap, 0.0);
  });
  return pns;
}

Dataset sample_highdim(const HighDimScm& scm, const CovariateSource& source,
                       std::size_t n, Regime regime, std::uint64_t seed) {
  if (source.size() == 0) throw PnsError("input", "covariate source is empty");
  if (source.dim() != scm.d_obs) throw DimensionError("covariate source width differs from d_obs");
  Rng rng(seed);
  Dataset data;
  data.regime = regime;
  data.z.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(scm.d_obs));
  data.x.resize(n);
  data.y.resize(n);
  std::vector<std::uint8_t> h(scm.k);
  std::vector<double> row(scm.d_obs);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(
        std::min<std::size_t>(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(source.size())),
                              source.size() - 1));
    for (std::size_t j = 0; j < scm.d_obs; ++j) row[j] = source.rows(r, static_cast<Eigen::Index>(j));
    for (std::size_t j = 0; j < scm.k; ++j) h[j] = static_cast<std::uint8_t>(bernoulli(rng, scm.pi[j]));
    int x = 0;
    if (regime == Regime::observational) {
      x = bernoulli(rng, propensity(scm, row, h));
    } else {
      x = bernoulli(rng, 0.5);
    }
    const int y = bernoulli(rng, outcome_prob(scm, x, row, h));
    data.z.row(static_cast<Eigen::Index>(i)) = source.rows.row(r);
    data.x[i] = static_cast<std::uint8_t>(x);
    data.y[i] = static_cast<std::uint8_t>(y);
  }
  return data;
}

}  // namespace pns
