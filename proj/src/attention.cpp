#include "ssc/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "ssc/errors.hpp"

namespace ssc {

namespace {

void require_dims(const LinearMap& m, std::size_t out, std::size_t in, const char* name) {
  m.validate();
  if (m.out_dim() != out || m.in_dim() != in) {
    throw ShapeError(std::string(name) + ": expected " + std::to_string(out) + "x" +
                     std::to_string(in) + ", got " + std::to_string(m.out_dim()) + "x" +
                     std::to_string(m.in_dim()));
  }
}

void require_rows(const Tensor& t, std::size_t cols, const char* name) {
  if (t.rank() != 2 || t.dim(1) != cols) {
    throw ShapeError(std::string(name) + ": expected [N, " + std::to_string(cols) + "], got " +
                     shape_string(t.shape()));
  }
}

// Shared per-query loop of 2D and 3D deformable attention. `sample` adds
// weight * value(level, location) for the channel slice of one head.
template <std::size_t D, class Extent, class Sample>
Tensor deformable_core(const DeformableAttnParams& p, const Tensor& queries, const Tensor& refs,
                       Extent&& extent, Sample&& sample) {
  const std::size_t c = p.embed_dim();
  const std::size_t dh = p.head_dim();
  const std::size_t per_head = p.levels * p.points;
  const std::size_t n = queries.dim(0);
  Tensor out({n, c});

  const auto total = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel
  {
    std::vector<double> offsets(p.offset_net.out_dim());
    std::vector<double> logits(p.weight_net.out_dim());
    std::vector<double> heads(c);
#pragma omp for schedule(static)
    for (std::ptrdiff_t qq = 0; qq < total; ++qq) {
      const auto q = static_cast<std::size_t>(qq);
      const auto query = queries.lane(q);
      p.offset_net.apply(query, offsets);
      p.weight_net.apply(query, logits);
      std::fill(heads.begin(), heads.end(), 0.0);
      for (std::size_t h = 0; h < p.heads; ++h) {
        std::span<double> head_logits(logits.data() + h * per_head, per_head);
        softmax_inplace(head_logits);
        std::span<double> head_out(heads.data() + h * dh, dh);
        for (std::size_t l = 0; l < p.levels; ++l) {
          for (std::size_t k = 0; k < p.points; ++k) {
            const std::size_t s = l * p.points + k;
            const std::size_t o = (h * per_head + s) * D;
            std::array<double, D> loc{};
            for (std::size_t a = 0; a < D; ++a) {
              loc[a] = refs(q, a) + offsets[o + a] / static_cast<double>(extent(l, a));
            }
            sample(l, loc, head_logits[s], h * dh, head_out);
          }
        }
      }
      p.output_proj.apply(heads, out.lane(q));
    }
  }
  return out;
}

}  // namespace

void DeformableAttnParams::validate() const {
  const std::size_t c = embed_dim();
  if (heads == 0 || levels == 0 || points == 0) {
    throw ShapeError("deformable attention: heads, levels and points must be >= 1");
  }
  if (coord_dim != 2 && coord_dim != 3) throw ShapeError("deformable attention: coord_dim 2 or 3");
  if (c == 0 || c % heads != 0) {
    throw ShapeError("deformable attention: embed dim " + std::to_string(c) +
                     " not divisible by heads " + std::to_string(heads));
  }
  require_dims(value_proj, c, c, "value_proj");
  require_dims(output_proj, c, c, "output_proj");
  require_dims(offset_net, heads * levels * points * coord_dim, c, "offset_net");
  require_dims(weight_net, heads * levels * points, c, "weight_net");
}

void MultiHeadAttnParams::validate() const {
  const std::size_t c = embed_dim();
  if (heads == 0 || c == 0 || c % heads != 0) {
    throw ShapeError("attention: embed dim not divisible by heads");
  }
  require_dims(query_proj, c, c, "query_proj");
  require_dims(key_proj, c, c, "key_proj");
  require_dims(value_proj, c, c, "value_proj");
  require_dims(output_proj, c, c, "output_proj");
}

Tensor deformable_attn_2d(const DeformableAttnParams& params, const Tensor& queries,
                          const Tensor& ref_points, const std::vector<Tensor>& features) {
  params.validate();
  if (params.coord_dim != 2) throw ShapeError("deformable_attn_2d: params are not 2D");
  const std::size_t c = params.embed_dim();
  require_rows(queries, c, "deformable_attn_2d queries");
  require_rows(ref_points, 2, "deformable_attn_2d ref_points");
  if (ref_points.dim(0) != queries.dim(0)) throw ShapeError("deformable_attn_2d: ref count");
  if (features.size() != params.levels) {
    throw ShapeError("deformable_attn_2d: expected " + std::to_string(params.levels) +
                     " feature levels, got " + std::to_string(features.size()));
  }
  std::vector<Tensor> values;
  values.reserve(features.size());
  for (const auto& f : features) {
    if (f.rank() != 3 || f.dim(2) != c) {
      throw ShapeError("deformable_attn_2d: feature map must be [H, W, " + std::to_string(c) + "]");
    }
    values.push_back(linear_apply(params.value_proj, f));
  }
  // Coordinate 0 runs along width, coordinate 1 along height.
  auto extent = [&](std::size_t l, std::size_t a) { return a == 0 ? values[l].dim(1) : values[l].dim(0); };
  auto sample = [&](std::size_t l, const std::array<double, 2>& loc, double w, std::size_t ch,
                    std::span<double> out) { bilinear_accumulate(values[l], loc, w, ch, out); };
  return deformable_core<2>(params, queries, ref_points, extent, sample);
}

Tensor deformable_attn_3d(const DeformableAttnParams& params, const Tensor& queries,
                          const Tensor& ref_points, const Tensor& volume) {
  params.validate();
  if (params.coord_dim != 3 || params.levels != 1) {
    throw ShapeError("deformable_attn_3d: params must be 3D with a single level");
  }
  const std::size_t c = params.embed_dim();
  require_rows(queries, c, "deformable_attn_3d queries");
  require_rows(ref_points, 3, "deformable_attn_3d ref_points");
  if (ref_points.dim(0) != queries.dim(0)) throw ShapeError("deformable_attn_3d: ref count");
  if (volume.rank() != 4 || volume.dim(3) != c) {
    throw ShapeError("deformable_attn_3d: volume must be [X, Y, Z, " + std::to_string(c) + "]");
  }
  const Tensor values = linear_apply(params.value_proj, volume);
  auto extent = [&](std::size_t, std::size_t a) { return values.dim(a); };
  auto sample = [&](std::size_t, const std::array<double, 3>& loc, double w, std::size_t ch,
                    std::span<double> out) { trilinear_accumulate(values, loc, w, ch, out); };
  return deformable_core<3>(params, queries, ref_points, extent, sample);
}

Tensor cross_attn(const MultiHeadAttnParams& params, const Tensor& q, const Tensor& k,
                  const Tensor& v) {
  params.validate();
  const std::size_t c = params.embed_dim();
  if (k.empty() || v.empty()) throw DomainError("cross_attn: empty key set");
  require_rows(q, c, "cross_attn q");
  require_rows(k, c, "cross_attn k");
  require_rows(v, c, "cross_attn v");
  if (k.dim(0) != v.dim(0)) throw ShapeError("cross_attn: key/value counts differ");

  const Tensor qp = linear_apply(params.query_proj, q);
  const Tensor kp = linear_apply(params.key_proj, k);
  const Tensor vp = linear_apply(params.value_proj, v);
  const std::size_t m = q.dim(0), n = k.dim(0);
  const std::size_t dh = c / params.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({m, c});

  // Reductions over keys run in lexicographic (key, value) row order, so the
  // result does not depend on how the caller ordered the key/value pairs.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ka = k.lane(a), kb = k.lane(b);
    const auto va = v.lane(a), vb = v.lane(b);
    if (!std::ranges::equal(ka, kb)) return std::ranges::lexicographical_compare(ka, kb);
    return std::ranges::lexicographical_compare(va, vb);
  });

  const auto total = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel
  {
    std::vector<double> scores(n);
    std::vector<double> heads(c);
#pragma omp for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < total; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const auto qi = qp.lane(i);
      std::fill(heads.begin(), heads.end(), 0.0);
      for (std::size_t h = 0; h < params.heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t j = 0; j < n; ++j) {
          const auto kj = kp.lane(order[j]);
          double dot = 0.0;
          for (std::size_t d = 0; d < dh; ++d) dot += qi[c0 + d] * kj[c0 + d];
          scores[j] = dot * scale;
        }
        softmax_inplace(scores);
        for (std::size_t j = 0; j < n; ++j) {
          const auto vj = vp.lane(order[j]);
          for (std::size_t d = 0; d < dh; ++d) heads[c0 + d] += scores[j] * vj[c0 + d];
        }
      }
      params.output_proj.apply(heads, out.lane(i));
    }
  }
  return out;
}

Tensor self_attn(const MultiHeadAttnParams& params, const Tensor& q) {
  return cross_attn(params, q, q, q);
}

Tensor residual_block(const ResidualParams& block, const Tensor& x, const Tensor& attn_out) {
  const Tensor y = layer_norm(add(x, attn_out), block.attn_norm);
  const Tensor hidden = relu(linear_apply(block.ffn.expand, y));
  const Tensor f = linear_apply(block.ffn.contract, hidden);
  return layer_norm(add(y, f), block.ffn_norm);
}

LinearMap make_linear(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  LinearMap m = LinearMap::zeros(out_dim, in_dim);
  const double a = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  for (double& w : m.weight.values()) w = rng.uniform(-a, a);
  return m;
}

DeformableAttnParams make_deformable_params(std::size_t embed_dim, std::size_t heads,
                                            std::size_t levels, std::size_t points,
                                            std::size_t coord_dim, Rng& rng) {
  DeformableAttnParams p;
  p.heads = heads;
  p.levels = levels;
  p.points = points;
  p.coord_dim = coord_dim;
  p.value_proj = make_linear(embed_dim, embed_dim, rng);
  p.output_proj = make_linear(embed_dim, embed_dim, rng);
  p.offset_net = LinearMap::zeros(heads * levels * points * coord_dim, embed_dim);
  p.weight_net = LinearMap::zeros(heads * levels * points, embed_dim);

  for (std::size_t h = 0; h < heads; ++h) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(heads);
    double dir[3] = {std::cos(theta), std::sin(theta), (h % 2 == 0) ? 0.5 : -0.5};
    const double scale = std::max(std::abs(dir[0]), std::abs(dir[1]));
    dir[0] /= scale;
    dir[1] /= scale;
    for (std::size_t l = 0; l < levels; ++l) {
      for (std::size_t k = 0; k < points; ++k) {
        const std::size_t o = ((h * levels + l) * points + k) * coord_dim;
        for (std::size_t a = 0; a < coord_dim; ++a) {
          p.offset_net.bias[o + a] = dir[a] * static_cast<double>(k + 1);
        }
      }
    }
  }
  p.validate();
  return p;
}

MultiHeadAttnParams make_attn_params(std::size_t embed_dim, std::size_t heads, Rng& rng) {
  MultiHeadAttnParams p;
  p.heads = heads;
  p.query_proj = make_linear(embed_dim, embed_dim, rng);
  p.key_proj = make_linear(embed_dim, embed_dim, rng);
  p.value_proj = make_linear(embed_dim, embed_dim, rng);
  p.output_proj = make_linear(embed_dim, embed_dim, rng);
  p.validate();
  return p;
}

ResidualParams make_residual_params(std::size_t embed_dim, std::size_t hidden_dim, Rng& rng) {
  ResidualParams r;
  r.attn_norm = LayerNormParams::unit(embed_dim);
  r.ffn_norm = LayerNormParams::unit(embed_dim);
  r.ffn.expand = make_linear(hidden_dim, embed_dim, rng);
  r.ffn.contract = make_linear(embed_dim, hidden_dim, rng);
  return r;
}

}  // namespace ssc
