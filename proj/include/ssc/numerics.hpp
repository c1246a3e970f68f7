#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

// Normalized sampling coordinates. Component 0 runs along the innermost
// spatial axis of a feature map (width) and along X of a volume.
// Align-corners: p in [0,1] maps to lattice index p * (extent - 1).
using Coord2 = std::array<double, 2>;
using Coord3 = std::array<double, 3>;

/// Affine map y = W x + b with W stored row-major as [out_dim, in_dim].
struct LinearMap {
  Tensor weight;
  std::vector<double> bias;

  std::size_t in_dim() const { return weight.rank() == 2 ? weight.dim(1) : 0; }
  std::size_t out_dim() const { return weight.rank() == 2 ? weight.dim(0) : 0; }

  // Row kernel: out = W in + b. Sizes are not checked.
  void apply(std::span<const double> in, std::span<double> out) const;
  void validate() const;

  static LinearMap identity(std::size_t n);
  static LinearMap zeros(std::size_t out_dim, std::size_t in_dim);
};

Tensor linear_apply(const LinearMap& m, const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
void softmax_inplace(std::span<double> v);

struct LayerNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  double eps = 1e-5;

  static LayerNormParams unit(std::size_t channels, double eps = 1e-5);
};

/// Normalizes every slice along the last axis to zero mean and unit
/// (population) variance, then applies gamma and beta.
Tensor layer_norm(const Tensor& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps);
inline Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  return layer_norm(x, p.gamma, p.beta, p.eps);
}

Tensor add(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);

// Zero-padded bilinear lookup in a [H, W, C] map.
std::vector<double> bilinear_sample(const Tensor& fmap, Coord2 p);
// Zero-padded trilinear lookup in a [X, Y, Z, C] volume.
std::vector<double> trilinear_sample(const Tensor& vol, Coord3 p);

// Accumulating kernels used by the attention layers: out += weight * sample,
// restricted to channels [channel_begin, channel_begin + out.size()).
void bilinear_accumulate(const Tensor& fmap, Coord2 p, double weight, std::size_t channel_begin,
                         std::span<double> out);
void trilinear_accumulate(const Tensor& vol, Coord3 p, double weight, std::size_t channel_begin,
                          std::span<double> out);

/// d bilinear_sample / d p as a [C, 2] tensor, in normalized units.
/// Throws NonDifferentiablePoint when p lies on a lattice line.
Tensor bilinear_sample_grad(const Tensor& fmap, Coord2 p);
/// d trilinear_sample / d p as a [C, 3] tensor.
Tensor trilinear_sample_grad(const Tensor& vol, Coord3 p);

/// Align-corners trilinear upsampling of a [X, Y, Z, C] volume.
Tensor upsample_trilinear(const Tensor& vol, std::size_t factor);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

class GradCheckFailure : public std::runtime_error {
 public:
  GradCheckFailure(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Central-difference gradient check. Returns the largest
/// |analytic - numeric| / max(1, |numeric|) over all entries of x.
GradCheckResult finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  const Tensor& analytic_grad, double h = 1e-5);

}  // namespace ssc
