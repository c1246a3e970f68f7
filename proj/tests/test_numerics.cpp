#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ssc/errors.hpp"
#include "ssc/numerics.hpp"
#include "ssc/random.hpp"
#include "ssc/reference.hpp"
#include "ssc/tensor.hpp"

using namespace ssc;

namespace {

Tensor random_tensor(Tensor::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Explicit 4-corner bilinear loop with zero padding.
std::vector<double> corners_2d(const Tensor& f, double px, double py) {
  const long h = static_cast<long>(f.dim(0)), w = static_cast<long>(f.dim(1));
  const double u = px * static_cast<double>(w - 1), v = py * static_cast<double>(h - 1);
  const long u0 = static_cast<long>(std::floor(u)), v0 = static_cast<long>(std::floor(v));
  std::vector<double> out(f.dim(2), 0.0);
  for (long dv = 0; dv < 2; ++dv) {
    for (long du = 0; du < 2; ++du) {
      const long r = v0 + dv, c = u0 + du;
      if (r < 0 || c < 0 || r >= h || c >= w) continue;
      const double wt = (du ? u - u0 : 1 - (u - u0)) * (dv ? v - v0 : 1 - (v - v0));
      for (std::size_t ch = 0; ch < f.dim(2); ++ch) out[ch] += wt * f(r, c, ch);
    }
  }
  return out;
}

std::vector<double> corners_3d(const Tensor& f, const Coord3& p) {
  long n[3], i0[3];
  double u[3];
  for (int a = 0; a < 3; ++a) {
    n[a] = static_cast<long>(f.dim(a));
    u[a] = p[a] * static_cast<double>(n[a] - 1);
    i0[a] = static_cast<long>(std::floor(u[a]));
  }
  std::vector<double> out(f.dim(3), 0.0);
  for (int corner = 0; corner < 8; ++corner) {
    long idx[3];
    double wt = 1.0;
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> a) & 1;
      idx[a] = i0[a] + bit;
      const double fr = u[a] - static_cast<double>(i0[a]);
      wt *= bit ? fr : 1.0 - fr;
      inside = inside && idx[a] >= 0 && idx[a] < n[a];
    }
    if (!inside) continue;
    for (std::size_t ch = 0; ch < f.dim(3); ++ch) out[ch] += wt * f(idx[0], idx[1], idx[2], ch);
  }
  return out;
}

}  // namespace

TEST(Tensor, RejectsZeroExtentAndSizeMismatch) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3, 0.0)), ShapeError);
  const Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.lanes(), 2u);
  EXPECT_EQ(t.lane_width(), 3u);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t({2, 3, 4});
  std::iota(t.values().begin(), t.values().end(), 0.0);
  EXPECT_EQ(t(1, 2, 3), 23.0);
  EXPECT_EQ(t(0, 1, 0), 4.0);
}

TEST(LinearApply, Examples) {
  const Tensor x({2}, {1.0, 2.0});
  EXPECT_EQ(linear_apply(LinearMap::identity(2), x), x);

  LinearMap m;
  m.weight = Tensor({2, 2}, {2.0, 0.0, 0.0, 3.0});
  m.bias = {1.0, 1.0};
  const Tensor y = linear_apply(m, Tensor({2}, {1.0, 1.0}));
  EXPECT_EQ(y[0], 3.0);
  EXPECT_EQ(y[1], 4.0);

  LinearMap z = LinearMap::zeros(3, 2);
  z.bias = {0.5, -1.0, 2.0};
  const Tensor yz = linear_apply(z, Tensor({4, 2}, 7.0));
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(yz(r, 0), 0.5);
    EXPECT_EQ(yz(r, 1), -1.0);
    EXPECT_EQ(yz(r, 2), 2.0);
  }
}

TEST(LinearApply, ShapeMismatchThrows) {
  EXPECT_THROW(linear_apply(LinearMap::identity(3), Tensor({2, 2})), ShapeError);
}

TEST(LinearApply, MatchesSerialReference) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    LinearMap m;
    const std::size_t in = 1 + rng.index(9), out = 1 + rng.index(9);
    m.weight = random_tensor({out, in}, rng);
    m.bias.resize(out);
    for (double& b : m.bias) b = rng.uniform(-1, 1);
    const Tensor x = random_tensor({1 + rng.index(5), 1 + rng.index(4), in}, rng);
    EXPECT_EQ(linear_apply(m, x), reference::linear_apply(m, x));
  }
}

TEST(Softmax, Examples) {
  const Tensor a = softmax(Tensor({3}, 0.0), 0);
  for (double v : a.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);

  const Tensor b = softmax(Tensor({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}), 0);
  EXPECT_NEAR(b[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(b[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(b[2], 3.0 / 6.0, 1e-15);

  const Tensor c = softmax(Tensor({2}, {1000.0, 0.0}), 0);
  EXPECT_TRUE(std::isfinite(c[0]) && std::isfinite(c[1]));
  EXPECT_NEAR(c[0], 1.0, 1e-15);
  EXPECT_NEAR(c[1], 0.0, 1e-15);
}

TEST(Softmax, SumsToOneAlongAnyAxis) {
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    const Tensor x = random_tensor({2 + rng.index(3), 2 + rng.index(3), 2 + rng.index(3)}, rng,
                                   -50.0, 50.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const Tensor y = softmax(x, axis);
      for (std::size_t i = 0; i < x.dim(0); ++i)
        for (std::size_t j = 0; j < x.dim(1); ++j)
          for (std::size_t k = 0; k < x.dim(2); ++k) {
            if ((axis == 0 && i) || (axis == 1 && j) || (axis == 2 && k)) continue;
            double s = 0.0;
            for (std::size_t m = 0; m < x.dim(axis); ++m) {
              const double v = axis == 0 ? y(m, j, k) : axis == 1 ? y(i, m, k) : y(i, j, m);
              EXPECT_GE(v, 0.0);
              s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
          }
    }
  }
}

TEST(LayerNorm, Examples) {
  const Tensor c = layer_norm(Tensor({1, 4}, 3.0), LayerNormParams::unit(4));
  for (double v : c.values()) EXPECT_EQ(v, 0.0);

  const std::vector<double> g{1.0, 1.0}, b{0.0, 0.0};
  const Tensor y = layer_norm(Tensor({2}, {1.0, 3.0}), g, b, 0.0);
  EXPECT_DOUBLE_EQ(y[0], -1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);

  const std::vector<double> g0{0.0, 0.0, 0.0}, b0{0.25, -2.0, 7.0};
  const Tensor z = layer_norm(Tensor({2, 3}, {1, 5, 2, 9, -3, 4}), g0, b0, 1e-5);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(z(r, ch), b0[ch]);
}

TEST(BilinearSample, LatticeAndCenter) {
  Rng rng(5);
  const Tensor f = random_tensor({4, 6, 3}, rng);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      const auto s = bilinear_sample(f, Coord2{j / 5.0, i / 3.0});
      for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(s[ch], f(i, j, ch));
    }
  const Tensor sq({2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(bilinear_sample(sq, Coord2{0.5, 0.5})[0], 2.5);
}

TEST(BilinearSample, MatchesCornerLoopIncludingPadding) {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    const Tensor f = random_tensor({1 + rng.index(7), 2 + rng.index(6), 2}, rng);
    const double px = rng.uniform(-0.6, 1.6), py = rng.uniform(-0.6, 1.6);
    const auto got = bilinear_sample(f, Coord2{px, py});
    const auto want = corners_2d(f, px, py);
    for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_NEAR(got[ch], want[ch], 1e-12);
  }
  const Tensor f = random_tensor({3, 3, 2}, rng);
  const auto got = bilinear_sample(f, Coord2{-0.5, 0.5});
  const auto want = corners_2d(f, -0.5, 0.5);
  for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_NEAR(got[ch], want[ch], 1e-15);
}

TEST(BilinearSample, FullyOutOfRangeIsZeroAndMidpointsAverage) {
  Rng rng(7);
  const Tensor f = random_tensor({3, 5, 2}, rng);
  for (double v : bilinear_sample(f, Coord2{2.0, 0.5})) EXPECT_EQ(v, 0.0);
  for (double v : bilinear_sample(f, Coord2{0.5, -1.0})) EXPECT_EQ(v, 0.0);
  // Linear along u between lattice points.
  const auto a = bilinear_sample(f, Coord2{1 / 4.0, 0.3});
  const auto b = bilinear_sample(f, Coord2{2 / 4.0, 0.3});
  const auto m = bilinear_sample(f, Coord2{1.5 / 4.0, 0.3});
  for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_NEAR(m[ch], 0.5 * (a[ch] + b[ch]), 1e-14);
}

TEST(TrilinearSample, LatticeConstantAndCornerLoop) {
  Rng rng(8);
  const Tensor v = random_tensor({3, 4, 2, 2}, rng);
  const auto at = trilinear_sample(v, Coord3{1 / 2.0, 2 / 3.0, 1.0});
  EXPECT_EQ(at[0], v(1, 2, 1, 0));
  EXPECT_EQ(at[1], v(1, 2, 1, 1));

  const Tensor c({3, 3, 3, 1}, 0.7);
  for (int t = 0; t < 20; ++t) {
    const auto s = trilinear_sample(c, Coord3{rng.uniform(), rng.uniform(), rng.uniform()});
    EXPECT_NEAR(s[0], 0.7, 1e-15);
  }
  for (int t = 0; t < 200; ++t) {
    const Tensor f = random_tensor({1 + rng.index(5), 2 + rng.index(4), 2 + rng.index(4), 2}, rng);
    const Coord3 p{rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5)};
    const auto got = trilinear_sample(f, p);
    const auto want = corners_3d(f, p);
    for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_NEAR(got[ch], want[ch], 1e-12);
  }
}

TEST(SampleGrad, ConstantRampAndLatticeLine) {
  const Tensor c({3, 4, 2}, 1.25);
  const Tensor g0 = bilinear_sample_grad(c, Coord2{0.4, 0.3});
  for (double v : g0.values()) EXPECT_EQ(v, 0.0);

  // f(u, v) = u in texel units; d/dp_x = (W - 1).
  Tensor ramp({3, 5, 1});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) ramp(i, j, 0) = static_cast<double>(j);
  const Tensor g = bilinear_sample_grad(ramp, Coord2{0.3, 0.7});
  EXPECT_NEAR(g(0, 0), 4.0, 1e-12);
  EXPECT_NEAR(g(0, 1), 0.0, 1e-12);

  EXPECT_THROW(bilinear_sample_grad(ramp, Coord2{0.5, 0.7}), NonDifferentiablePoint);
  EXPECT_THROW(trilinear_sample_grad(Tensor({3, 3, 3, 1}), Coord3{0.5, 0.2, 0.3}),
               NonDifferentiablePoint);
}

TEST(SampleGrad, MatchesCentralDifferences) {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const Tensor f = random_tensor({2 + rng.index(5), 2 + rng.index(5), 2}, rng);
    const double w = static_cast<double>(f.dim(1) - 1), h = static_cast<double>(f.dim(0) - 1);
    const Tensor p({2}, {(rng.index(f.dim(1) - 1) + rng.uniform(0.01, 0.99)) / w,
                         (rng.index(f.dim(0) - 1) + rng.uniform(0.01, 0.99)) / h});
    const Tensor g = bilinear_sample_grad(f, Coord2{p[0], p[1]});
    for (std::size_t ch = 0; ch < 2; ++ch) {
      const Tensor analytic({2}, {g(ch, 0), g(ch, 1)});
      const auto fn = [&](const Tensor& x) { return bilinear_sample(f, Coord2{x[0], x[1]})[ch]; };
      EXPECT_LT(finite_diff_check(fn, p, analytic).max_rel_error, 1e-6);
    }
  }
  for (int t = 0; t < 50; ++t) {
    const Tensor f = random_tensor({2 + rng.index(4), 2 + rng.index(4), 2 + rng.index(4), 1}, rng);
    Tensor p({3});
    for (int a = 0; a < 3; ++a) {
      const double n = static_cast<double>(f.dim(a) - 1);
      p[a] = (rng.index(f.dim(a) - 1) + rng.uniform(0.01, 0.99)) / n;
    }
    const Tensor g = trilinear_sample_grad(f, Coord3{p[0], p[1], p[2]});
    const Tensor analytic({3}, {g(0, 0), g(0, 1), g(0, 2)});
    const auto fn = [&](const Tensor& x) {
      return trilinear_sample(f, Coord3{x[0], x[1], x[2]})[0];
    };
    EXPECT_LT(finite_diff_check(fn, p, analytic).max_rel_error, 1e-6);
  }
}

TEST(Upsample, IdentityConstantAndPerPointOracle) {
  Rng rng(10);
  const Tensor v = random_tensor({2, 3, 2, 2}, rng);
  EXPECT_EQ(upsample_trilinear(v, 1), v);

  const Tensor c({2, 2, 2, 1}, -0.3);
  const Tensor cu = upsample_trilinear(c, 3);
  for (double x : cu.values()) EXPECT_NEAR(x, -0.3, 1e-15);

  Tensor ramp({2, 2, 2, 1});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) ramp(i, j, k, 0) = 1.0 * i + 2.0 * j + 4.0 * k;
  const Tensor up = upsample_trilinear(ramp, 2);
  ASSERT_EQ(up.shape(), (Tensor::Shape{4, 4, 4, 1}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 4; ++k) {
        const auto s = trilinear_sample(ramp, Coord3{i / 3.0, j / 3.0, k / 3.0});
        EXPECT_NEAR(up(i, j, k, 0), s[0], 1e-14);
        EXPECT_NEAR(up(i, j, k, 0), (1.0 * i + 2.0 * j + 4.0 * k) / 3.0, 1e-14);
      }
  EXPECT_LT(std::abs(up(0, 0, 0, 0) - reference::upsample_trilinear(ramp, 2)(0, 0, 0, 0)), 1e-15);
  const Tensor r = random_tensor({3, 2, 4, 2}, rng);
  const Tensor a = upsample_trilinear(r, 2), b = reference::upsample_trilinear(r, 2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(FiniteDiff, ExamplesAndNegativeControl) {
  Rng rng(12);
  const Tensor x = random_tensor({5}, rng);
  const auto sum = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v;
    return s;
  };
  EXPECT_LT(finite_diff_check(sum, x, Tensor({5}, 1.0)).max_rel_error, 1e-10);

  const auto half_sq = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += 0.5 * v * v;
    return s;
  };
  EXPECT_LT(finite_diff_check(half_sq, x, x).max_rel_error, 1e-8);

  // 2x instead of x: error |x| / max(1, |x|) = |x| for |x| <= 1.
  const Tensor y({3}, {1.0, -0.5, 0.25});
  Tensor wrong = y;
  for (double& v : wrong.values()) v *= 2.0;
  const auto r = finite_diff_check(half_sq, y, wrong);
  EXPECT_NEAR(r.max_rel_error, 1.0, 1e-8);
  EXPECT_EQ(r.worst_index, 0u);
}

TEST(FiniteDiff, NonFiniteEvaluationNamesIndex) {
  const Tensor x({3}, {1.0, 0.0, 2.0});
  try {
    finite_diff_check(
        [](const Tensor& t) { return t[2] > 2.0 ? NAN : t[0]; }, x, Tensor({3}, 0.0));
    FAIL() << "expected GradCheckFailure";
  } catch (const GradCheckFailure& e) {
    EXPECT_EQ(e.index(), 2u);
  }
}
