#include "pns/network.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pns/error.hpp"
#include "pns/random.hpp"

namespace pns {

namespace {

using ConstWeights = Eigen::Map<const RowMatrix>;
using Weights = Eigen::Map<RowMatrix>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using Vec = Eigen::Map<Eigen::VectorXd>;

ConstWeights weights_of(const LinearShape& s, std::span<const double> p) {
  return ConstWeights(p.data() + s.offset, static_cast<Eigen::Index>(s.out),
                      static_cast<Eigen::Index>(s.in));
}

ConstVec bias_of(const LinearShape& s, std::span<const double> p) {
  return ConstVec(p.data() + s.bias_offset(), static_cast<Eigen::Index>(s.out));
}

bool is_last_trunk(const NetworkLayout& layout, std::size_t l) {
  return l + 1 == layout.trunk_layer_count();
}

// Trunk layers are ReLU except the final one.
bool has_relu(const NetworkLayout& layout, std::size_t l) {
  return !is_last_trunk(layout, l);
}

// Backpropagates head deltas into the trunk output.
Eigen::MatrixXd trunk_output_delta(const NetworkLayout& layout, std::span<const double> params,
                                   const Eigen::MatrixXd& d_out) {
  if (layout.head_count() == 0) return d_out;
  const auto width = static_cast<Eigen::Index>(layout.trunk_widths().back());
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(width, d_out.cols());
  for (std::size_t h = 0; h < layout.head_count(); ++h) {
    const LinearShape& s = layout.head(h);
    delta.noalias() += weights_of(s, params).transpose() *
                       d_out.middleRows(static_cast<Eigen::Index>(layout.head_offset(h)),
                                        static_cast<Eigen::Index>(s.out));
  }
  return delta;
}

}  // namespace

NetworkLayout::NetworkLayout(std::vector<std::size_t> trunk_widths, std::vector<std::size_t> head_dims)
    : trunk_widths_(std::move(trunk_widths)), head_dims_(std::move(head_dims)) {
  if (trunk_widths_.size() < 2) throw std::invalid_argument("network needs at least one trunk layer");
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < trunk_widths_.size(); ++l) {
    layers_.push_back({trunk_widths_[l], trunk_widths_[l + 1], offset});
    offset += layers_.back().size();
  }
  std::size_t out = 0;
  for (std::size_t dim : head_dims_) {
    layers_.push_back({trunk_widths_.back(), dim, offset});
    offset += layers_.back().size();
    head_out_offset_.push_back(out);
    out += dim;
  }
  output_dim_ = head_dims_.empty() ? trunk_widths_.back() : out;
  parameter_count_ = offset;
}

ParamVector init_parameters(const NetworkLayout& layout, std::uint64_t seed) {
  Rng rng(seed);
  ParamVector p(layout.parameter_count());
  for (const LinearShape& s : layout.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    for (std::size_t i = s.offset; i < s.offset + s.size(); ++i) {
      p[i] = bound * (2.0 * uniform01(rng) - 1.0);
    }
  }
  return p;
}

ParamVector coordinate_scales(const NetworkLayout& layout) {
  ParamVector scale(layout.parameter_count());
  for (const LinearShape& s : layout.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    std::fill(scale.begin() + static_cast<std::ptrdiff_t>(s.offset),
              scale.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size()), bound);
  }
  return scale;
}

void forward(const NetworkLayout& layout, std::span<const double> params,
             const Eigen::MatrixXd& input, ForwardCache& cache) {
  if (params.size() != layout.parameter_count()) {
    throw DimensionError("forward: parameter vector has " + std::to_string(params.size()) +
                         " entries, layout expects " + std::to_string(layout.parameter_count()));
  }
  if (static_cast<std::size_t>(input.rows()) != layout.input_dim()) {
    throw DimensionError("forward: input has " + std::to_string(input.rows()) +
                         " features, network expects " + std::to_string(layout.input_dim()));
  }
  const std::size_t n_trunk = layout.trunk_layer_count();
  cache.act.resize(n_trunk + 1);
  cache.act[0] = input;
  for (std::size_t l = 0; l < n_trunk; ++l) {
    const LinearShape& s = layout.trunk(l);
    Eigen::MatrixXd& next = cache.act[l + 1];
    next.noalias() = weights_of(s, params) * cache.act[l];
    next.colwise() += bias_of(s, params);
    if (has_relu(layout, l)) next = next.cwiseMax(0.0);
  }
  if (layout.head_count() == 0) {
    cache.out = cache.act.back();
  } else {
    cache.out.resize(static_cast<Eigen::Index>(layout.output_dim()), input.cols());
    for (std::size_t h = 0; h < layout.head_count(); ++h) {
      const LinearShape& s = layout.head(h);
      auto block = cache.out.middleRows(static_cast<Eigen::Index>(layout.head_offset(h)),
                                        static_cast<Eigen::Index>(s.out));
      block.noalias() = weights_of(s, params) * cache.act.back();
      block.colwise() += bias_of(s, params);
    }
  }
  if (!cache.out.allFinite()) throw NumericalError("forward: non-finite network output");
}

void backward(const NetworkLayout& layout, std::span<const double> params,
              const ForwardCache& cache, const Eigen::MatrixXd& d_out, std::span<double> grad) {
  const Eigen::MatrixXd& top = cache.act.back();
  for (std::size_t h = 0; h < layout.head_count(); ++h) {
    const LinearShape& s = layout.head(h);
    const auto d = d_out.middleRows(static_cast<Eigen::Index>(layout.head_offset(h)),
                                    static_cast<Eigen::Index>(s.out));
    Weights(grad.data() + s.offset, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in))
        .noalias() += d * top.transpose();
    Vec(grad.data() + s.bias_offset(), static_cast<Eigen::Index>(s.out)) += d.rowwise().sum();
  }
  Eigen::MatrixXd delta = trunk_output_delta(layout, params, d_out);
  for (std::size_t l = layout.trunk_layer_count(); l-- > 0;) {
    const LinearShape& s = layout.trunk(l);
    if (has_relu(layout, l)) {
      delta = (cache.act[l + 1].array() > 0.0).select(delta, 0.0);
    }
    Weights(grad.data() + s.offset, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in))
        .noalias() += delta * cache.act[l].transpose();
    Vec(grad.data() + s.bias_offset(), static_cast<Eigen::Index>(s.out)) += delta.rowwise().sum();
    if (l > 0) delta = weights_of(s, params).transpose() * delta;
  }
}

Eigen::MatrixXd jvp(const NetworkLayout& layout, std::span<const double> params,
                    const ForwardCache& cache, std::span<const double> direction) {
  if (direction.size() != layout.parameter_count()) {
    throw DimensionError("jvp: direction has " + std::to_string(direction.size()) + " entries");
  }
  const Eigen::Index batch = cache.act.front().cols();
  auto nonzero = [&](const LinearShape& s) {
    for (std::size_t i = s.offset; i < s.offset + s.size(); ++i) {
      if (direction[i] != 0.0) return true;
    }
    return false;
  };
  // Tangent of the current trunk activation; stays empty until the first
  // layer with a nonzero direction.
  Eigen::MatrixXd t;
  for (std::size_t l = 0; l < layout.trunk_layer_count(); ++l) {
    const LinearShape& s = layout.trunk(l);
    const bool moves = nonzero(s);
    if (t.size() == 0 && !moves) continue;
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.out), batch);
    if (t.size() != 0) next.noalias() += weights_of(s, params) * t;
    if (moves) {
      next.noalias() += weights_of(s, direction) * cache.act[l];
      next.colwise() += bias_of(s, direction);
    }
    if (has_relu(layout, l)) next = (cache.act[l + 1].array() > 0.0).select(next, 0.0);
    t = std::move(next);
  }
  if (layout.head_count() == 0) {
    return t.size() ? t : Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(layout.output_dim()), batch);
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(layout.output_dim()), batch);
  for (std::size_t h = 0; h < layout.head_count(); ++h) {
    const LinearShape& s = layout.head(h);
    auto block = out.middleRows(static_cast<Eigen::Index>(layout.head_offset(h)), static_cast<Eigen::Index>(s.out));
    if (t.size() != 0) block.noalias() += weights_of(s, params) * t;
    if (nonzero(s)) {
      block.noalias() += weights_of(s, direction) * cache.act.back();
      block.colwise() += bias_of(s, direction);
    }
  }
  return out;
}

LayerSubset LayerSubset::all(const NetworkLayout& layout) {
  LayerSubset s;
  for (std::size_t l = 0; l < layout.layers().size(); ++l) s.layers.push_back(l);
  return s;
}

LayerSubset LayerSubset::heads(const NetworkLayout& layout) {
  LayerSubset s;
  for (std::size_t h = 0; h < layout.head_count(); ++h) s.layers.push_back(layout.head_layer_index(h));
  return s;
}

std::size_t LayerSubset::parameter_count(const NetworkLayout& layout) const {
  std::size_t n = 0;
  for (std::size_t l : layers) n += layout.layers()[l].size();
  return n;
}

std::vector<std::size_t> LayerSubset::flat_indices(const NetworkLayout& layout) const {
  std::vector<std::size_t> idx;
  for (std::size_t l : layers) {
    const LinearShape& s = layout.layers()[l];
    for (std::size_t i = 0; i < s.size(); ++i) idx.push_back(s.offset + i);
  }
  return idx;
}

Eigen::MatrixXd per_sample_gradients(const NetworkLayout& layout, std::span<const double> params,
                                     const ForwardCache& cache, const Eigen::MatrixXd& d_out,
                                     const LayerSubset& subset) {
  const Eigen::Index batch = d_out.cols();
  Eigen::MatrixXd rows(batch, static_cast<Eigen::Index>(subset.parameter_count(layout)));

  // Column offset of each selected layer inside `rows`.
  std::vector<std::ptrdiff_t> col_of(layout.layers().size(), -1);
  std::size_t col = 0;
  std::size_t deepest = layout.layers().size();
  for (std::size_t l : subset.layers) {
    col_of[l] = static_cast<std::ptrdiff_t>(col);
    col += layout.layers()[l].size();
    deepest = std::min(deepest, l);
  }

  auto emit = [&](std::size_t layer, const Eigen::MatrixXd& delta, const Eigen::MatrixXd& input) {
    const LinearShape& s = layout.layers()[layer];
    const auto c0 = static_cast<Eigen::Index>(col_of[layer]);
    const auto in = static_cast<Eigen::Index>(s.in);
    for (Eigen::Index o = 0; o < static_cast<Eigen::Index>(s.out); ++o) {
      rows.middleCols(c0 + o * in, in) = input.transpose().array().colwise() * delta.row(o).transpose().array();
    }
    rows.middleCols(c0 + static_cast<Eigen::Index>(s.weight_count()), static_cast<Eigen::Index>(s.out)) =
        delta.transpose();
  };

  const Eigen::MatrixXd& top = cache.act.back();
  for (std::size_t h = 0; h < layout.head_count(); ++h) {
    const std::size_t l = layout.head_layer_index(h);
    if (col_of[l] < 0) continue;
    const Eigen::MatrixXd d = d_out.middleRows(static_cast<Eigen::Index>(layout.head_offset(h)),
                                               static_cast<Eigen::Index>(layout.head(h).out));
    emit(l, d, top);
  }
  if (deepest >= layout.trunk_layer_count()) return rows;

  Eigen::MatrixXd delta = trunk_output_delta(layout, params, d_out);
  for (std::size_t l = layout.trunk_layer_count(); l-- > deepest;) {
    if (has_relu(layout, l)) delta = (cache.act[l + 1].array() > 0.0).select(delta, 0.0);
    if (col_of[l] >= 0) emit(l, delta, cache.act[l]);
    if (l > deepest) delta = weights_of(layout.trunk(l), params).transpose() * delta;
  }
  return rows;
}

Adam::Adam(std::size_t size, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace pns
