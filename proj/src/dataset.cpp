#include "pns/dataset.hpp"

#include <fstream>
#include <sstream>

#include "pns/error.hpp"

namespace pns {

std::string regime_name(Regime r) {
  return r == Regime::observational ? "observational" : "experimental";
}

RegimeSample Dataset::sample(std::size_t i) const {
  RegimeSample s;
  s.z_obs.assign(z.row(static_cast<Eigen::Index>(i)).begin(),
                 z.row(static_cast<Eigen::Index>(i)).end());
  s.x = x[i];
  s.y = y[i];
  s.regime = regime;
  return s;
}

Dataset Dataset::filter_treatment(int arm) const {
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < size(); ++i) {
    if (x[i] == arm) keep.push_back(static_cast<Eigen::Index>(i));
  }
  Dataset out;
  out.regime = regime;
  out.z = z(keep, Eigen::all);
  for (auto i : keep) {
    out.x.push_back(x[static_cast<std::size_t>(i)]);
    out.y.push_back(y[static_cast<std::size_t>(i)]);
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  Dataset out;
  out.regime = regime;
  out.z = z.topRows(static_cast<Eigen::Index>(n));
  out.x.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n));
  out.y.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw DimensionError("standardizer: column mismatch");
  const auto d = a.cols();
  const double n = static_cast<double>(a.rows() + b.rows());
  Standardizer s;
  s.mean.resize(static_cast<std::size_t>(d));
  s.scale.resize(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    const double m = (a.col(j).sum() + b.col(j).sum()) / n;
    const double ss = (a.col(j).array() - m).square().sum() +
                      (b.col(j).array() - m).square().sum();
    const double sd = std::sqrt(ss / n);
    s.mean[static_cast<std::size_t>(j)] = m;
    s.scale[static_cast<std::size_t>(j)] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(std::size_t dim) {
  return Standardizer{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

Eigen::MatrixXd Standardizer::to_columns(const Eigen::MatrixXd& rows) const {
  if (static_cast<std::size_t>(rows.cols()) != dim()) {
    throw DimensionError("standardizer: expected " + std::to_string(dim()) +
                         " features, got " + std::to_string(rows.cols()));
  }
  Eigen::MatrixXd out = rows.transpose();
  for (Eigen::Index j = 0; j < out.rows(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    out.row(j) = (out.row(j).array() - mean[k]) / scale[k];
  }
  return out;
}

Eigen::VectorXd Standardizer::apply(std::span<const double> row) const {
  if (row.size() != dim()) throw DimensionError("standardizer: row dimension mismatch");
  Eigen::VectorXd v(static_cast<Eigen::Index>(row.size()));
  for (std::size_t j = 0; j < row.size(); ++j) {
    v[static_cast<Eigen::Index>(j)] = (row[j] - mean[j]) / scale[j];
  }
  return v;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PnsError("io", "cannot write " + path.string());
  out.precision(17);
  for (std::size_t j = 0; j < data.dim(); ++j) out << 'z' << j << ',';
  out << "x,y\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) {
      out << data.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << ',';
    }
    out << int(data.x[i]) << ',' << int(data.y[i]) << '\n';
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path, Regime regime) {
  std::ifstream in(path);
  if (!in) throw PnsError("io", "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::size_t cols = 1;
  for (char c : line) cols += c == ',';
  if (cols < 2) throw PnsError("format", path.string() + ": expected z..,x,y header");
  const std::size_t d = cols - 2;
  std::vector<double> values;
  Dataset data;
  data.regime = regime;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t k = 0;
    while (std::getline(ss, cell, ',')) {
      const double v = std::stod(cell);
      if (k < d) values.push_back(v);
      else if (k == d) data.x.push_back(static_cast<std::uint8_t>(v));
      else if (k == d + 1) data.y.push_back(static_cast<std::uint8_t>(v));
      ++k;
    }
    if (k != cols) {
      throw PnsError("format", path.string() + ":" + std::to_string(lineno) +
                                   ": wrong column count");
    }
  }
  data.z = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(data.x.size()), static_cast<Eigen::Index>(d));
  return data;
}

}  // namespace pns
