#pragma once

#include <cstddef>
#include <vector>

#include "ssc/numerics.hpp"
#include "ssc/random.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

/// Multi-head deformable attention over `levels` feature maps (2D) or a
/// single volume (3D). Offset layout is [head][level][point][coord]; the
/// attention logits are [head][level][point] and are softmax-normalized
/// over level x point within each head. A raw offset of 1.0 moves the
/// sample by 1/extent in normalized coordinates (about one texel).
struct DeformableAttnParams {
  std::size_t heads = 1;
  std::size_t levels = 1;
  std::size_t points = 1;
  std::size_t coord_dim = 2;
  LinearMap value_proj;
  LinearMap output_proj;
  LinearMap offset_net;
  LinearMap weight_net;

  std::size_t embed_dim() const { return value_proj.in_dim(); }
  std::size_t head_dim() const { return embed_dim() / heads; }
  void validate() const;
};

struct MultiHeadAttnParams {
  std::size_t heads = 1;
  LinearMap query_proj;
  LinearMap key_proj;
  LinearMap value_proj;
  LinearMap output_proj;

  std::size_t embed_dim() const { return query_proj.in_dim(); }
  void validate() const;
};

struct FeedForward {
  LinearMap expand;
  LinearMap contract;
};

/// Post-norm residual wrapper: y = LN(x + attn), z = LN(y + FFN(y)).
struct ResidualParams {
  LayerNormParams attn_norm;
  LayerNormParams ffn_norm;
  FeedForward ffn;
};

struct AttnBlockParams {
  MultiHeadAttnParams attn;
  ResidualParams residual;
};

struct DeformableBlockParams {
  DeformableAttnParams attn;
  ResidualParams residual;
};

Tensor deformable_attn_2d(const DeformableAttnParams& params, const Tensor& queries,
                          const Tensor& ref_points, const std::vector<Tensor>& features);
Tensor deformable_attn_3d(const DeformableAttnParams& params, const Tensor& queries,
                          const Tensor& ref_points, const Tensor& volume);

Tensor cross_attn(const MultiHeadAttnParams& params, const Tensor& q, const Tensor& k,
                  const Tensor& v);
Tensor self_attn(const MultiHeadAttnParams& params, const Tensor& q);

Tensor residual_block(const ResidualParams& block, const Tensor& x, const Tensor& attn_out);

// Initializers. Linear layers are Xavier-uniform with zero bias. Deformable
// offsets start as a fixed stencil around the reference point (zero weights,
// per-head direction bias scaled by point index) with uniform attention
// weights.
LinearMap make_linear(std::size_t out_dim, std::size_t in_dim, Rng& rng);
DeformableAttnParams make_deformable_params(std::size_t embed_dim, std::size_t heads,
                                            std::size_t levels, std::size_t points,
                                            std::size_t coord_dim, Rng& rng);
MultiHeadAttnParams make_attn_params(std::size_t embed_dim, std::size_t heads, Rng& rng);
ResidualParams make_residual_params(std::size_t embed_dim, std::size_t hidden_dim, Rng& rng);

}  // namespace ssc
