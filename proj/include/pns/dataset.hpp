#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pns {

enum class Regime : std::uint8_t { observational = 0, experimental = 1 };

std::string regime_name(Regime r);

/// One emitted unit: observed covariates, treatment, outcome.
struct RegimeSample {
  std::vector<double> z_obs;
  int x = 0;
  int y = 0;
  Regime regime = Regime::observational;
};

/// Columnar dataset from a single regime. Row i of `z` is unit i.
struct Dataset {
  Eigen::MatrixXd z;
  std::vector<std::uint8_t> x;
  std::vector<std::uint8_t> y;
  Regime regime = Regime::observational;

  std::size_t size() const { return x.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(z.cols()); }
  RegimeSample sample(std::size_t i) const;

  /// Rows matching the predicate on x (used for arm-separated fits).
  Dataset filter_treatment(int arm) const;
  Dataset head(std::size_t n) const;
};

/// Per-feature affine standardisation fitted on the joint training set.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
  static Standardizer identity(std::size_t dim);

  std::size_t dim() const { return mean.size(); }
  /// Rows (n x d) -> standardised columns (d x n).
  Eigen::MatrixXd to_columns(const Eigen::MatrixXd& rows) const;
  Eigen::VectorXd apply(std::span<const double> row) const;
};

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path, Regime regime);

}  // namespace pns
