#include "ssc/reference.hpp"

#include <cmath>

#include "ssc/errors.hpp"

namespace ssc::reference {

namespace {

double dot_row(const LinearMap& m, std::size_t row, const double* x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.in_dim(); ++i) acc += m.weight(row, i) * x[i];
  return acc + m.bias[row];
}

std::vector<double> apply(const LinearMap& m, const double* x) {
  std::vector<double> y(m.out_dim());
  for (std::size_t j = 0; j < m.out_dim(); ++j) y[j] = dot_row(m, j, x);
  return y;
}

std::vector<double> head_softmax(const std::vector<double>& logits, std::size_t begin,
                                 std::size_t count) {
  double mx = logits[begin];
  for (std::size_t s = 1; s < count; ++s) mx = std::max(mx, logits[begin + s]);
  std::vector<double> a(count);
  double z = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    a[s] = std::exp(logits[begin + s] - mx);
    z += a[s];
  }
  for (double& v : a) v /= z;
  return a;
}

// Bilinear corner weight along one axis, or 0 if the corner is unused.
double corner_weight(double u, long corner) {
  const double lo = std::floor(u);
  const double frac = u - lo;
  if (static_cast<long>(lo) == corner) return 1.0 - frac;
  if (static_cast<long>(lo) + 1 == corner) return frac;
  return 0.0;
}

}  // namespace

Tensor linear_apply(const LinearMap& m, const Tensor& x) {
  if (x.lane_width() != m.in_dim()) throw ShapeError("reference::linear_apply: in_dim");
  Tensor::Shape shape = x.shape();
  shape.back() = m.out_dim();
  Tensor y(shape);
  for (std::size_t r = 0; r < x.lanes(); ++r) {
    for (std::size_t j = 0; j < m.out_dim(); ++j) {
      y[r * m.out_dim() + j] = dot_row(m, j, x.data() + r * m.in_dim());
    }
  }
  return y;
}

Tensor deformable_attn_2d(const DeformableAttnParams& p, const Tensor& queries,
                          const Tensor& ref_points, const std::vector<Tensor>& features) {
  const std::size_t n = queries.dim(0), c = queries.dim(1);
  const std::size_t dh = c / p.heads;
  Tensor out({n, c});
  for (std::size_t q = 0; q < n; ++q) {
    const double* query = queries.data() + q * c;
    const auto offsets = apply(p.offset_net, query);
    const auto logits = apply(p.weight_net, query);
    std::vector<double> concat(c, 0.0);
    for (std::size_t h = 0; h < p.heads; ++h) {
      const auto attn = head_softmax(logits, h * p.levels * p.points, p.levels * p.points);
      for (std::size_t l = 0; l < p.levels; ++l) {
        const Tensor& f = features[l];
        const std::size_t hl = f.dim(0), wl = f.dim(1);
        for (std::size_t k = 0; k < p.points; ++k) {
          const std::size_t s = l * p.points + k;
          const std::size_t o = ((h * p.levels + l) * p.points + k) * 2;
          const double px = ref_points(q, 0) + offsets[o] / static_cast<double>(wl);
          const double py = ref_points(q, 1) + offsets[o + 1] / static_cast<double>(hl);
          const double u = px * static_cast<double>(wl - 1);
          const double v = py * static_cast<double>(hl - 1);
          // Every texel is visited; only the four cell corners have nonzero weight.
          for (std::size_t i = 0; i < hl; ++i) {
            const double wv = corner_weight(v, static_cast<long>(i));
            if (wv == 0.0) continue;
            for (std::size_t j = 0; j < wl; ++j) {
              const double wu = corner_weight(u, static_cast<long>(j));
              if (wu == 0.0) continue;
              const double* texel = f.data() + (i * wl + j) * c;
              for (std::size_t d = 0; d < dh; ++d) {
                const double value = dot_row(p.value_proj, h * dh + d, texel);
                concat[h * dh + d] += attn[s] * wv * wu * value;
              }
            }
          }
        }
      }
    }
    const auto y = apply(p.output_proj, concat.data());
    for (std::size_t j = 0; j < c; ++j) out(q, j) = y[j];
  }
  return out;
}

Tensor deformable_attn_3d(const DeformableAttnParams& p, const Tensor& queries,
                          const Tensor& ref_points, const Tensor& volume) {
  const std::size_t n = queries.dim(0), c = queries.dim(1);
  const std::size_t dh = c / p.heads;
  const std::size_t dims[3] = {volume.dim(0), volume.dim(1), volume.dim(2)};
  Tensor out({n, c});
  for (std::size_t q = 0; q < n; ++q) {
    const double* query = queries.data() + q * c;
    const auto offsets = apply(p.offset_net, query);
    const auto logits = apply(p.weight_net, query);
    std::vector<double> concat(c, 0.0);
    for (std::size_t h = 0; h < p.heads; ++h) {
      const auto attn = head_softmax(logits, h * p.points, p.points);
      for (std::size_t k = 0; k < p.points; ++k) {
        double u[3];
        for (std::size_t a = 0; a < 3; ++a) {
          const double pos = ref_points(q, a) + offsets[(h * p.points + k) * 3 + a] /
                                                    static_cast<double>(dims[a]);
          u[a] = pos * static_cast<double>(dims[a] - 1);
        }
        for (std::size_t i = 0; i < dims[0]; ++i) {
          const double wx = corner_weight(u[0], static_cast<long>(i));
          if (wx == 0.0) continue;
          for (std::size_t j = 0; j < dims[1]; ++j) {
            const double wy = corner_weight(u[1], static_cast<long>(j));
            if (wy == 0.0) continue;
            for (std::size_t z = 0; z < dims[2]; ++z) {
              const double wz = corner_weight(u[2], static_cast<long>(z));
              if (wz == 0.0) continue;
              const double* voxel = volume.data() + ((i * dims[1] + j) * dims[2] + z) * c;
              for (std::size_t d = 0; d < dh; ++d) {
                const double value = dot_row(p.value_proj, h * dh + d, voxel);
                concat[h * dh + d] += attn[k] * wx * wy * wz * value;
              }
            }
          }
        }
      }
    }
    const auto y = apply(p.output_proj, concat.data());
    for (std::size_t j = 0; j < c; ++j) out(q, j) = y[j];
  }
  return out;
}

Tensor cross_attn(const MultiHeadAttnParams& p, const Tensor& q, const Tensor& k,
                  const Tensor& v) {
  if (k.empty()) throw DomainError("reference::cross_attn: empty key set");
  const std::size_t m = q.dim(0), n = k.dim(0), c = q.dim(1);
  const std::size_t dh = c / p.heads;
  Tensor out({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    const auto qi = apply(p.query_proj, q.data() + i * c);
    std::vector<double> concat(c, 0.0);
    for (std::size_t h = 0; h < p.heads; ++h) {
      std::vector<double> scores(n);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        const auto kj = apply(p.key_proj, k.data() + j * c);
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += qi[h * dh + d] * kj[h * dh + d];
        scores[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const auto vj = apply(p.value_proj, v.data() + j * c);
        for (std::size_t d = 0; d < dh; ++d) concat[h * dh + d] += scores[j] / z * vj[h * dh + d];
      }
    }
    const auto y = apply(p.output_proj, concat.data());
    for (std::size_t j = 0; j < c; ++j) out(i, j) = y[j];
  }
  return out;
}

Tensor conv3d_same(const Tensor& vol, const Conv3d& conv) {
  const long nx = static_cast<long>(vol.dim(0)), ny = static_cast<long>(vol.dim(1)),
             nz = static_cast<long>(vol.dim(2));
  const std::size_t cin = vol.dim(3), cout = conv.weight.dim(1);
  const long d = static_cast<long>(conv.dilation);
  Tensor out({vol.dim(0), vol.dim(1), vol.dim(2), cout});
  for (long x = 0; x < nx; ++x) {
    for (long y = 0; y < ny; ++y) {
      for (long z = 0; z < nz; ++z) {
        for (std::size_t co = 0; co < cout; ++co) {
          double acc = conv.bias[co];
          for (long a = 0; a < 3; ++a) {
            for (long b = 0; b < 3; ++b) {
              for (long e = 0; e < 3; ++e) {
                const long sx = x + (a - 1) * d, sy = y + (b - 1) * d, sz = z + (e - 1) * d;
                if (sx < 0 || sy < 0 || sz < 0 || sx >= nx || sy >= ny || sz >= nz) continue;
                const auto tap = static_cast<std::size_t>((a * 3 + b) * 3 + e);
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  acc += conv.weight(tap, co, ci) *
                         vol(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy),
                             static_cast<std::size_t>(sz), ci);
                }
              }
            }
          }
          out(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
              static_cast<std::size_t>(z), co) = acc;
        }
      }
    }
  }
  return out;
}

Tensor upsample_trilinear(const Tensor& vol, std::size_t factor) {
  const std::size_t n[3] = {vol.dim(0), vol.dim(1), vol.dim(2)};
  const std::size_t c = vol.dim(3);
  const std::size_t o[3] = {n[0] * factor, n[1] * factor, n[2] * factor};
  Tensor out({o[0], o[1], o[2], c});
  for (std::size_t i = 0; i < o[0]; ++i) {
    for (std::size_t j = 0; j < o[1]; ++j) {
      for (std::size_t k = 0; k < o[2]; ++k) {
        const std::size_t idx[3] = {i, j, k};
        double u[3];
        for (int a = 0; a < 3; ++a) {
          u[a] = o[a] > 1 ? static_cast<double>(idx[a]) * static_cast<double>(n[a] - 1) /
                                static_cast<double>(o[a] - 1)
                          : 0.0;
        }
        for (std::size_t a = 0; a < n[0]; ++a) {
          const double wa = corner_weight(u[0], static_cast<long>(a));
          if (wa == 0.0) continue;
          for (std::size_t b = 0; b < n[1]; ++b) {
            const double wb = corner_weight(u[1], static_cast<long>(b));
            if (wb == 0.0) continue;
            for (std::size_t e = 0; e < n[2]; ++e) {
              const double we = corner_weight(u[2], static_cast<long>(e));
              if (we == 0.0) continue;
              for (std::size_t ch = 0; ch < c; ++ch) out(i, j, k, ch) += wa * wb * we * vol(a, b, e, ch);
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace ssc::reference
