#include "ssc/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "ssc/errors.hpp"

namespace ssc {

void LinearMap::apply(std::span<const double> in, std::span<double> out) const {
  const std::size_t n_in = in_dim();
  const std::size_t n_out = out_dim();
  const double* w = weight.data();
  for (std::size_t j = 0; j < n_out; ++j) {
    const double* row = w + j * n_in;
    double acc = 0.0;
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
    out[j] = acc + bias[j];
  }
}

void LinearMap::validate() const {
  if (weight.rank() != 2) throw ShapeError("linear map weight must be rank 2");
  if (bias.size() != out_dim()) {
    throw ShapeError("linear map bias has " + std::to_string(bias.size()) +
                     " entries, expected " + std::to_string(out_dim()));
  }
}

LinearMap LinearMap::identity(std::size_t n) {
  LinearMap m = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) m.weight(i, i) = 1.0;
  return m;
}

LinearMap LinearMap::zeros(std::size_t out_dim, std::size_t in_dim) {
  return LinearMap{Tensor({out_dim, in_dim}), std::vector<double>(out_dim, 0.0)};
}

Tensor linear_apply(const LinearMap& m, const Tensor& x) {
  m.validate();
  if (x.rank() == 0 || x.lane_width() != m.in_dim()) {
    throw ShapeError("linear_apply: last extent of " + shape_string(x.shape()) +
                     " does not match in_dim " + std::to_string(m.in_dim()));
  }
  Tensor::Shape shape = x.shape();
  shape.back() = m.out_dim();
  Tensor y(shape);
  const auto lanes = static_cast<std::ptrdiff_t>(x.lanes());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < lanes; ++r) {
    m.apply(x.lane(static_cast<std::size_t>(r)), y.lane(static_cast<std::size_t>(r)));
  }
  return y;
}

void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& e : v) {
    e = std::exp(e - mx);
    sum += e;
  }
  for (double& e : v) e /= sum;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const std::size_t n = x.dim(axis);

  Tensor y = x;
  std::vector<double> buf(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      for (std::size_t k = 0; k < n; ++k) buf[k] = x[base + k * inner];
      softmax_inplace(buf);
      for (std::size_t k = 0; k < n; ++k) y[base + k * inner] = buf[k];
    }
  }
  return y;
}

LayerNormParams LayerNormParams::unit(std::size_t channels, double eps) {
  return LayerNormParams{std::vector<double>(channels, 1.0), std::vector<double>(channels, 0.0),
                         eps};
}

Tensor layer_norm(const Tensor& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps) {
  const std::size_t c = x.lane_width();
  if (c == 0 || gamma.size() != c || beta.size() != c) {
    throw ShapeError("layer_norm: parameter size does not match channel count");
  }
  Tensor y(x.shape());
  const auto lanes = static_cast<std::ptrdiff_t>(x.lanes());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < lanes; ++r) {
    auto in = x.lane(static_cast<std::size_t>(r));
    auto out = y.lane(static_cast<std::size_t>(r));
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < c; ++k) out[k] = (in[k] - mean) * inv * gamma[k] + beta[k];
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

namespace {

struct AxisCell {
  std::int64_t lo;
  double frac;
};

// Continuous lattice coordinate for an align-corners normalized position.
// Returns false when the whole interpolation cell is outside [0, extent-1].
bool locate(double p, std::size_t extent, AxisCell& cell) {
  const double u = p * static_cast<double>(extent - 1);
  if (!(u > -1.0 && u < static_cast<double>(extent))) return false;
  const double lo = std::floor(u);
  cell.lo = static_cast<std::int64_t>(lo);
  cell.frac = u - lo;
  return true;
}

bool in_range(std::int64_t i, std::size_t extent) {
  return i >= 0 && i < static_cast<std::int64_t>(extent);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

}  // namespace

void bilinear_accumulate(const Tensor& fmap, Coord2 p, double weight, std::size_t channel_begin,
                         std::span<double> out) {
  const std::size_t h = fmap.dim(0), w = fmap.dim(1), c = fmap.dim(2);
  AxisCell cu, cv;
  if (!locate(p[0], w, cu) || !locate(p[1], h, cv)) return;
  const double* base = fmap.data();
  for (int di = 0; di < 2; ++di) {
    const std::int64_t i = cv.lo + di;
    if (!in_range(i, h)) continue;
    const double wv = di ? cv.frac : 1.0 - cv.frac;
    for (int dj = 0; dj < 2; ++dj) {
      const std::int64_t j = cu.lo + dj;
      if (!in_range(j, w)) continue;
      const double wu = dj ? cu.frac : 1.0 - cu.frac;
      const double cw = weight * wv * wu;
      const double* texel = base + (static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)) * c +
                            channel_begin;
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += cw * texel[k];
    }
  }
}

void trilinear_accumulate(const Tensor& vol, Coord3 p, double weight, std::size_t channel_begin,
                          std::span<double> out) {
  const std::size_t nx = vol.dim(0), ny = vol.dim(1), nz = vol.dim(2), c = vol.dim(3);
  AxisCell cx, cy, cz;
  if (!locate(p[0], nx, cx) || !locate(p[1], ny, cy) || !locate(p[2], nz, cz)) return;
  const double* base = vol.data();
  for (int dx = 0; dx < 2; ++dx) {
    const std::int64_t i = cx.lo + dx;
    if (!in_range(i, nx)) continue;
    const double wx = dx ? cx.frac : 1.0 - cx.frac;
    for (int dy = 0; dy < 2; ++dy) {
      const std::int64_t j = cy.lo + dy;
      if (!in_range(j, ny)) continue;
      const double wy = dy ? cy.frac : 1.0 - cy.frac;
      for (int dz = 0; dz < 2; ++dz) {
        const std::int64_t k = cz.lo + dz;
        if (!in_range(k, nz)) continue;
        const double wz = dz ? cz.frac : 1.0 - cz.frac;
        const double cw = weight * wx * wy * wz;
        const std::size_t cell =
            (static_cast<std::size_t>(i) * ny + static_cast<std::size_t>(j)) * nz +
            static_cast<std::size_t>(k);
        const double* voxel = base + cell * c + channel_begin;
        for (std::size_t q = 0; q < out.size(); ++q) out[q] += cw * voxel[q];
      }
    }
  }
}

std::vector<double> bilinear_sample(const Tensor& fmap, Coord2 p) {
  require_rank(fmap, 3, "bilinear_sample");
  std::vector<double> out(fmap.dim(2), 0.0);
  bilinear_accumulate(fmap, p, 1.0, 0, out);
  return out;
}

std::vector<double> trilinear_sample(const Tensor& vol, Coord3 p) {
  require_rank(vol, 4, "trilinear_sample");
  std::vector<double> out(vol.dim(3), 0.0);
  trilinear_accumulate(vol, p, 1.0, 0, out);
  return out;
}

namespace {

// Fetch with zero padding.
double texel2(const Tensor& f, std::int64_t i, std::int64_t j, std::size_t ch) {
  if (!in_range(i, f.dim(0)) || !in_range(j, f.dim(1))) return 0.0;
  return f(static_cast<std::size_t>(i), static_cast<std::size_t>(j), ch);
}

double voxel3(const Tensor& v, std::int64_t i, std::int64_t j, std::int64_t k, std::size_t ch) {
  if (!in_range(i, v.dim(0)) || !in_range(j, v.dim(1)) || !in_range(k, v.dim(2))) return 0.0;
  return v(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k),
           ch);
}

AxisCell locate_unbounded(double p, std::size_t extent) {
  const double u = p * static_cast<double>(extent - 1);
  const double lo = std::floor(u);
  return AxisCell{static_cast<std::int64_t>(lo), u - lo};
}

}  // namespace

Tensor bilinear_sample_grad(const Tensor& fmap, Coord2 p) {
  require_rank(fmap, 3, "bilinear_sample_grad");
  const std::size_t h = fmap.dim(0), w = fmap.dim(1), c = fmap.dim(2);
  if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
    throw DomainError("bilinear_sample_grad: non-finite coordinate");
  }
  const AxisCell cu = locate_unbounded(p[0], w);
  const AxisCell cv = locate_unbounded(p[1], h);
  if (cu.frac == 0.0 || cv.frac == 0.0) {
    throw NonDifferentiablePoint("bilinear_sample_grad: point lies on a lattice line");
  }
  const double su = static_cast<double>(w - 1);
  const double sv = static_cast<double>(h - 1);
  Tensor g({c, 2});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double f00 = texel2(fmap, cv.lo, cu.lo, ch);
    const double f01 = texel2(fmap, cv.lo, cu.lo + 1, ch);
    const double f10 = texel2(fmap, cv.lo + 1, cu.lo, ch);
    const double f11 = texel2(fmap, cv.lo + 1, cu.lo + 1, ch);
    const double d_du = (1.0 - cv.frac) * (f01 - f00) + cv.frac * (f11 - f10);
    const double d_dv = (1.0 - cu.frac) * (f10 - f00) + cu.frac * (f11 - f01);
    g(ch, 0) = d_du * su;
    g(ch, 1) = d_dv * sv;
  }
  return g;
}

Tensor trilinear_sample_grad(const Tensor& vol, Coord3 p) {
  require_rank(vol, 4, "trilinear_sample_grad");
  const std::size_t c = vol.dim(3);
  AxisCell cell[3];
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(p[a])) throw DomainError("trilinear_sample_grad: non-finite coordinate");
    cell[a] = locate_unbounded(p[a], vol.dim(a));
    if (cell[a].frac == 0.0) {
      throw NonDifferentiablePoint("trilinear_sample_grad: point lies on a lattice plane");
    }
  }
  Tensor g({c, 3});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (int dx = 0; dx < 2; ++dx) {
      for (int dy = 0; dy < 2; ++dy) {
        for (int dz = 0; dz < 2; ++dz) {
          const double v =
              voxel3(vol, cell[0].lo + dx, cell[1].lo + dy, cell[2].lo + dz, ch);
          if (v == 0.0) continue;
          const double w[3] = {dx ? cell[0].frac : 1.0 - cell[0].frac,
                               dy ? cell[1].frac : 1.0 - cell[1].frac,
                               dz ? cell[2].frac : 1.0 - cell[2].frac};
          const double dw[3] = {dx ? 1.0 : -1.0, dy ? 1.0 : -1.0, dz ? 1.0 : -1.0};
          g(ch, 0) += v * dw[0] * w[1] * w[2];
          g(ch, 1) += v * w[0] * dw[1] * w[2];
          g(ch, 2) += v * w[0] * w[1] * dw[2];
        }
      }
    }
    for (std::size_t a = 0; a < 3; ++a) g(ch, a) *= static_cast<double>(vol.dim(a) - 1);
  }
  return g;
}

Tensor upsample_trilinear(const Tensor& vol, std::size_t factor) {
  require_rank(vol, 4, "upsample_trilinear");
  if (factor == 0) throw DomainError("upsample_trilinear: factor must be >= 1");
  if (factor == 1) return vol;

  const std::size_t nx = vol.dim(0), ny = vol.dim(1), nz = vol.dim(2), c = vol.dim(3);
  const std::size_t ox = nx * factor, oy = ny * factor, oz = nz * factor;
  Tensor out({ox, oy, oz, c});

  // Source lattice coordinate for output index o along an axis of n -> o_n.
  auto source = [](std::size_t o, std::size_t n, std::size_t on) {
    if (on == 1) return 0.0;
    return static_cast<double>(o * (n - 1)) / static_cast<double>(on - 1);
  };
  auto normalized = [](double u, std::size_t n) {
    return n == 1 ? 0.0 : u / static_cast<double>(n - 1);
  };

  const auto total = static_cast<std::ptrdiff_t>(ox);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t a = 0; a < total; ++a) {
    const auto i = static_cast<std::size_t>(a);
    const double px = normalized(source(i, nx, ox), nx);
    for (std::size_t j = 0; j < oy; ++j) {
      const double py = normalized(source(j, ny, oy), ny);
      for (std::size_t k = 0; k < oz; ++k) {
        const double pz = normalized(source(k, nz, oz), nz);
        trilinear_accumulate(vol, {px, py, pz}, 1.0, 0, out.lane((i * oy + j) * oz + k));
      }
    }
  }
  return out;
}

GradCheckResult finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  const Tensor& analytic_grad, double h) {
  if (analytic_grad.shape() != x.shape()) {
    throw ShapeError("finite_diff_check: gradient shape " + shape_string(analytic_grad.shape()) +
                     " does not match input " + shape_string(x.shape()));
  }
  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw GradCheckFailure("finite_diff_check: non-finite function value at index " +
                                 std::to_string(i),
                             i);
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic_grad[i] - numeric) / std::max(1.0, std::abs(numeric));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace ssc
