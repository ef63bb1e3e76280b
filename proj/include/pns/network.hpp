#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace pns {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat parameter storage. Eigen's vectorised kernels peel by address, so
/// parameters mapped from plain std::vector memory can round differently from
/// one allocation to the next. Over-aligned storage keeps training bitwise
/// reproducible.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

/// One affine map stored in a flat parameter vector: weights (out x in,
/// row-major) followed by the bias.
struct LinearShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t offset = 0;

  std::size_t weight_count() const { return in * out; }
  std::size_t size() const { return in * out + out; }
  std::size_t bias_offset() const { return offset + in * out; }
};

/// A ReLU trunk followed by optional linear heads reading the trunk output.
///
/// trunk widths {d, h1, ..., hL}: ReLU after every trunk layer except the
/// last. With heads, outputs are the concatenated head values; without
/// heads the last trunk layer is the output.
class NetworkLayout {
 public:
  NetworkLayout() = default;
  NetworkLayout(std::vector<std::size_t> trunk_widths, std::vector<std::size_t> head_dims);

  std::size_t input_dim() const { return trunk_widths_.front(); }
  std::size_t output_dim() const { return output_dim_; }
  std::size_t parameter_count() const { return parameter_count_; }
  std::size_t trunk_layer_count() const { return trunk_widths_.size() - 1; }
  std::size_t head_count() const { return head_dims_.size(); }
  std::size_t head_offset(std::size_t h) const { return head_out_offset_[h]; }

  const std::vector<std::size_t>& trunk_widths() const { return trunk_widths_; }
  const std::vector<std::size_t>& head_dims() const { return head_dims_; }

  /// All affine maps: trunk layers first, then heads.
  const std::vector<LinearShape>& layers() const { return layers_; }
  const LinearShape& trunk(std::size_t i) const { return layers_[i]; }
  const LinearShape& head(std::size_t h) const { return layers_[trunk_layer_count() + h]; }
  std::size_t head_layer_index(std::size_t h) const { return trunk_layer_count() + h; }

  friend bool operator==(const NetworkLayout&, const NetworkLayout&) = default;

 private:
  std::vector<std::size_t> trunk_widths_{1};
  std::vector<std::size_t> head_dims_;
  std::vector<std::size_t> head_out_offset_;
  std::vector<LinearShape> layers_;
  std::size_t output_dim_ = 0;
  std::size_t parameter_count_ = 0;
};

/// Activations kept from a batched forward pass (columns are samples).
struct ForwardCache {
  std::vector<Eigen::MatrixXd> act;  // act[0] = input, act[l+1] = trunk layer l output
  Eigen::MatrixXd out;               // output_dim x batch
};

/// Fan-in scaled uniform init: U(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
ParamVector init_parameters(const NetworkLayout& layout, std::uint64_t seed);

/// Per-coordinate init scale 1/sqrt(fan_in) of the owning layer.
ParamVector coordinate_scales(const NetworkLayout& layout);

/// Throws NumericalError on non-finite outputs.
void forward(const NetworkLayout& layout, std::span<const double> params,
             const Eigen::MatrixXd& input, ForwardCache& cache);

/// Accumulates dLoss/dparams into `grad` given dLoss/doutput (output_dim x batch).
void backward(const NetworkLayout& layout, std::span<const double> params,
              const ForwardCache& cache, const Eigen::MatrixXd& d_out,
              std::span<double> grad);

/// Forward-mode derivative of the outputs along a full-size parameter
/// direction, at the inputs held in `cache`. Result: output_dim x batch.
Eigen::MatrixXd jvp(const NetworkLayout& layout, std::span<const double> params,
                    const ForwardCache& cache, std::span<const double> direction);

/// Set of affine maps whose parameters are differentiated.
struct LayerSubset {
  std::vector<std::size_t> layers;  // indices into layout.layers(), ascending

  static LayerSubset all(const NetworkLayout& layout);
  static LayerSubset heads(const NetworkLayout& layout);
  std::size_t parameter_count(const NetworkLayout& layout) const;
  /// Flat indices of the subset's parameters, in subset order.
  std::vector<std::size_t> flat_indices(const NetworkLayout& layout) const;
};

/// Row i = gradient of sample i's scalar (d_out column i · outputs) with
/// respect to the subset's parameters. Result: batch x subset size.
Eigen::MatrixXd per_sample_gradients(const NetworkLayout& layout, std::span<const double> params,
                                     const ForwardCache& cache, const Eigen::MatrixXd& d_out,
                                     const LayerSubset& subset);

/// Adam with bias correction.
class Adam {
 public:
  Adam(std::size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grad);
  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  ParamVector m_, v_;
};

}  // namespace pns
