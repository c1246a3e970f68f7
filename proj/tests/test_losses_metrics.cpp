#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ssc/errors.hpp"
#include "ssc/invariants.hpp"
#include "ssc/labels.hpp"
#include "ssc/losses.hpp"
#include "ssc/metrics.hpp"
#include "ssc/numerics.hpp"

using namespace ssc;

namespace {

VoxelLabels line_labels(std::vector<std::uint8_t> v) {
  VoxelLabels l({v.size(), 1, 1});
  l.labels = std::move(v);
  return l;
}

VoxelLabels random_labels(std::size_t n, std::size_t k, Rng& rng, double ignore_rate = 0.0) {
  VoxelLabels l({n, 1, 1});
  for (auto& v : l.labels)
    v = rng.uniform() < ignore_rate ? kIgnoreLabel : static_cast<std::uint8_t>(rng.index(k));
  l.labels[0] = static_cast<std::uint8_t>(rng.index(k));
  return l;
}

Tensor random_probs(std::size_t n, std::size_t k, Rng& rng) {
  Tensor p({n, 1, 1, k});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += (p(i, 0, 0, c) = rng.uniform(0.05, 1.0));
    for (std::size_t c = 0; c < k; ++c) p(i, 0, 0, c) /= s;
  }
  return p;
}

// Direct evaluation of the soft precision / recall / specificity formula.
double scal_oracle(const Tensor& probs, const VoxelLabels& y) {
  const std::size_t k = probs.dim(3);
  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = 0.0, psum = 0.0, pos = 0.0, tn = 0.0, neg = 0.0;
    for (std::size_t i = 0; i < y.count(); ++i) {
      if (y.labels[i] == kIgnoreLabel) continue;
      const double p = std::clamp(probs[i * k + c], kProbEps, 1.0 - kProbEps);
      psum += p;
      if (y.labels[i] == c) {
        tp += p;
        pos += 1.0;
      } else {
        tn += 1.0 - p;
        neg += 1.0;
      }
    }
    if (pos == 0.0) continue;
    double term = -std::log(tp / psum) - std::log(tp / pos);
    if (neg > 0.0) term -= std::log(tn / neg);
    total += term;
    ++terms;
  }
  return total / static_cast<double>(terms);
}

double ce_oracle(const Tensor& logits, const VoxelLabels& y, const ClassWeights& w) {
  const std::size_t k = logits.dim(3);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < y.count(); ++i) {
    if (y.labels[i] == kIgnoreLabel) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[i * k + c]);
    sum += -w.weights[y.labels[i]] * std::log(std::exp(logits[i * k + y.labels[i]]) / z);
    ++n;
  }
  return sum / static_cast<double>(n);
}

Tensor margin_logits(const VoxelLabels& y, std::size_t k, double margin) {
  Tensor z({y.dims[0], y.dims[1], y.dims[2], k});
  for (std::size_t i = 0; i < y.count(); ++i)
    if (y.labels[i] != kIgnoreLabel) z[i * k + y.labels[i]] = margin;
  return z;
}

}  // namespace

TEST(CrossEntropy, UniformAndSaturation) {
  const auto one = line_labels({0});
  EXPECT_NEAR(weighted_cross_entropy(Tensor({1, 1, 1, 2}), one, ClassWeights::uniform(2)).value,
              std::log(2.0), 1e-15);
  Rng rng(1);
  const auto y = random_labels(30, 2, rng);
  EXPECT_LT(weighted_cross_entropy(margin_logits(y, 2, 20.0), y, ClassWeights::uniform(2)).value,
            1e-8);
  EXPECT_THROW(weighted_cross_entropy(Tensor({2, 1, 1, 2}), line_labels({255, 255}),
                                      ClassWeights::uniform(2)),
               DomainError);
}

TEST(CrossEntropy, MixedCaseFormulaAndGradient) {
  Rng rng(2);
  Tensor z({3, 1, 1, 4});
  for (double& v : z.values()) v = rng.uniform(-2, 2);
  const auto y = line_labels({2, 255, 0});
  const ClassWeights w{{0.5, 1.0, 2.5, 1.0}};
  const auto r = weighted_cross_entropy(z, y, w);
  EXPECT_NEAR(r.value, ce_oracle(z, y, w), 1e-13);
  // Ignored voxel contributes no gradient.
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(r.grad(1, 0, 0, c), 0.0);
  const auto f = [&](const Tensor& t) { return weighted_cross_entropy(t, y, w, false).value; };
  EXPECT_LT(finite_diff_check(f, z, r.grad).max_rel_error, 1e-6);

  for (int trial = 0; trial < 5; ++trial) {
    const auto yl = random_labels(12, 5, rng, 0.2);
    Tensor zl({12, 1, 1, 5});
    for (double& v : zl.values()) v = rng.uniform(-3, 3);
    const auto wl = class_weights_from_frequencies({0.5, 0.2, 0.1, 0.15, 0.05});
    const auto rl = weighted_cross_entropy(zl, yl, wl);
    EXPECT_NEAR(rl.value, ce_oracle(zl, yl, wl), 1e-12);
    const auto fl = [&](const Tensor& t) { return weighted_cross_entropy(t, yl, wl, false).value; };
    EXPECT_LT(finite_diff_check(fl, zl, rl.grad).max_rel_error, 1e-6);
  }
}

TEST(Affinity, WorkedExample) {
  const Tensor p({2, 1, 1, 2}, {0.8, 0.2, 0.4, 0.6});
  const auto y = line_labels({0, 1});
  const double c0 = -(std::log(2.0 / 3.0) + std::log(0.8) + std::log(0.6));
  const double c1 = -(std::log(0.75) + std::log(0.6) + std::log(0.8));
  // The quoted figures are 4-decimal approximations (1.02165 is shown as 1.0216).
  EXPECT_NEAR(c0, 1.1394, 1e-4);
  EXPECT_NEAR(c1, 1.0216, 1e-4);
  const auto r = scene_class_affinity(p, y, AffinityMode::semantic);
  EXPECT_NEAR(r.value, 0.5 * (c0 + c1), 1e-12);
  EXPECT_NEAR(r.value, 1.0805, 1e-4);
  EXPECT_NEAR(r.value, scal_oracle(p, y), 1e-12);
}

TEST(Affinity, OneHotSkipsAndErrors) {
  Rng rng(3);
  const auto y = random_labels(40, 6, rng, 0.1);
  Tensor onehot({40, 1, 1, 6});
  for (std::size_t i = 0; i < 40; ++i)
    if (y.labels[i] != kIgnoreLabel) onehot[i * 6 + y.labels[i]] = 1.0;
  EXPECT_LT(scene_class_affinity(onehot, y, AffinityMode::semantic).value, 1e-5);
  EXPECT_LT(scene_class_affinity(onehot, y, AffinityMode::geometric).value, 1e-5);

  // One class covering every voxel: the specificity term is skipped.
  const Tensor p({3, 1, 1, 2}, {0.9, 0.1, 0.7, 0.3, 0.6, 0.4});
  const auto all0 = line_labels({0, 0, 0});
  const double want = -(std::log(1.0) + std::log((0.9 + 0.7 + 0.6) / 3.0));
  EXPECT_NEAR(scene_class_affinity(p, all0, AffinityMode::semantic).value, want, 1e-12);

  EXPECT_THROW(scene_class_affinity(p, line_labels({255, 255, 255}), AffinityMode::semantic),
               DomainError);
}

TEST(Affinity, RandomOracleGeometricCollapseAndGradients) {
  Rng rng(4);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t n = 15, k = 4;
    const Tensor p = random_probs(n, k, rng);
    const auto y = random_labels(n, k, rng, 0.15);
    const auto sem = scene_class_affinity(p, y, AffinityMode::semantic);
    EXPECT_NEAR(sem.value, scal_oracle(p, y), 1e-12);

    Tensor bin({n, 1, 1, 2});
    VoxelLabels ybin = y;
    for (std::size_t i = 0; i < n; ++i) {
      bin(i, 0, 0, 0) = p(i, 0, 0, 0);
      bin(i, 0, 0, 1) = 1.0 - p(i, 0, 0, 0);
      if (y.labels[i] != kIgnoreLabel) ybin.labels[i] = y.labels[i] == 0 ? 0 : 1;
    }
    const auto geo = scene_class_affinity(p, y, AffinityMode::geometric);
    EXPECT_NEAR(geo.value, scal_oracle(bin, ybin), 1e-12);

    for (auto mode : {AffinityMode::semantic, AffinityMode::geometric}) {
      const auto r = scene_class_affinity(p, y, mode);
      const auto f = [&](const Tensor& t) { return scene_class_affinity(t, y, mode, false).value; };
      EXPECT_LT(finite_diff_check(f, p, r.grad, 1e-6).max_rel_error, 1e-5);
    }
  }
}

TEST(Affinity, VoxelPermutationInvariance) {
  Rng rng(5);
  const std::size_t n = 50, k = 5;
  const Tensor p = random_probs(n, k, rng);
  const auto y = random_labels(n, k, rng, 0.1);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  Tensor pp(p.shape());
  VoxelLabels yp = y;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) pp[i * k + c] = p[perm[i] * k + c];
    yp.labels[i] = y.labels[perm[i]];
  }
  for (auto mode : {AffinityMode::semantic, AffinityMode::geometric}) {
    EXPECT_EQ(scene_class_affinity(p, y, mode, false).value,
              scene_class_affinity(pp, yp, mode, false).value);
  }
}

TEST(Losses, IgnoredVoxelsDoNotMatter) {
  Rng rng(6);
  const auto y = random_labels(20, 4, rng, 0.3);
  Tensor z({20, 1, 1, 4});
  for (double& v : z.values()) v = rng.uniform(-2, 2);
  Tensor z2 = z;
  for (std::size_t i = 0; i < 20; ++i)
    if (y.labels[i] == kIgnoreLabel)
      for (std::size_t c = 0; c < 4; ++c) z2[i * 4 + c] = rng.uniform(-9, 9);
  const auto w = ClassWeights::uniform(4);
  const auto a = composite_loss(z, y, w, false).parts;
  const auto b = composite_loss(z2, y, w, false).parts;
  EXPECT_EQ(a.ce, b.ce);
  EXPECT_EQ(a.scal_sem, b.scal_sem);
  EXPECT_EQ(a.scal_geo, b.scal_geo);

  VoxelLabels pred = argmax_labels(z), pred2 = argmax_labels(z2);
  const auto m1 = compute_metrics(confusion_matrix(pred, y, 4));
  const auto m2 = compute_metrics(confusion_matrix(pred2, y, 4));
  EXPECT_EQ(m1.occupancy_iou, m2.occupancy_iou);
  EXPECT_EQ(m1.miou, m2.miou);
}

TEST(Losses, PerfectPredictionAndNonNegativity) {
  Rng rng(7);
  const auto y = random_labels(60, 20, rng, 0.05);
  const auto parts = composite_loss(margin_logits(y, 20, 20.0), y, ClassWeights::uniform(20), false).parts;
  EXPECT_LT(parts.ce, 1e-5);
  EXPECT_LT(parts.scal_sem, 1e-5);
  EXPECT_LT(parts.scal_geo, 1e-5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor z({60, 1, 1, 20});
    for (double& v : z.values()) v = rng.uniform(-4, 4);
    const auto r = composite_loss(z, y, ClassWeights::uniform(20), false).parts;
    EXPECT_GE(r.ce, 0.0);
    EXPECT_GE(r.scal_sem, 0.0);
    EXPECT_GE(r.scal_geo, 0.0);
  }
}

TEST(TotalLoss, CompositionIdentities) {
  Rng rng(8);
  VoxelLabels y({4, 4, 2});
  for (auto& v : y.labels) v = static_cast<std::uint8_t>(rng.index(3));
  Tensor z({4, 4, 2, 3});
  for (double& v : z.values()) v = rng.uniform(-2, 2);
  const auto w = ClassWeights::uniform(3);

  const auto base = total_loss(z, {}, y, w);
  EXPECT_EQ(base.total, base.final_parts.scal_geo + base.final_parts.scal_sem + base.final_parts.ce);
  const auto twice = total_loss(z, {z}, y, w);
  EXPECT_EQ(twice.aux_totals.size(), 1u);
  EXPECT_NEAR(twice.total, 1.5 * base.total, 1e-14);

  Tensor coarse({2, 2, 1, 3});
  for (double& v : coarse.values()) v = rng.uniform(-2, 2);
  const auto r = total_loss(z, {coarse, coarse}, y, w, true);
  const auto pooled = downsample_labels(y, {2, 2, 1});
  const double aux = composite_loss(coarse, pooled, w, false).parts.sum();
  const auto& f = r.final_parts;
  EXPECT_EQ(r.total, f.scal_geo + f.scal_sem + f.ce + 0.5 * (aux + aux));
  ASSERT_TRUE(r.grad);
  const auto fn = [&](const Tensor& t) { return total_loss(t, {coarse, coarse}, y, w).total; };
  EXPECT_LT(finite_diff_check(fn, z, *r.grad).max_rel_error, 1e-5);
}

TEST(ClassWeights, FormulaAndProperties) {
  const auto u = class_weights_from_frequencies(std::vector<double>(5, 0.2));
  for (double v : u.weights) EXPECT_NEAR(v, 1.0, 1e-15);

  const auto two = class_weights_from_frequencies({0.9, 0.1});
  EXPECT_GT(two.weights[1], two.weights[0]);
  EXPECT_GT(two.weights[0], 0.0);

  std::vector<double> f(20, 0.0);
  for (const auto& c : semantic_classes()) f[c.id] = c.frequency_percent / 100.0;
  // road and bicycle entries as printed in the benchmark table header.
  EXPECT_EQ(f[9], 0.1530);
  EXPECT_EQ(f[2], 0.0003);
  const auto w = class_weights_from_frequencies(f);
  double mean = 0.0;
  std::vector<double> raw(20);
  for (std::size_t c = 0; c < 20; ++c) mean += (raw[c] = 1.0 / std::log(1.02 + f[c])) / 20.0;
  for (std::size_t c = 0; c < 20; ++c) EXPECT_NEAR(w.weights[c], raw[c] / mean, 1e-12);
  EXPECT_NEAR(std::accumulate(w.weights.begin(), w.weights.end(), 0.0) / 20.0, 1.0, 1e-14);
  EXPECT_ANY_THROW(class_weights_from_frequencies({0.0, 0.0}));
  EXPECT_ANY_THROW(class_weights_from_frequencies({0.5, -0.1}));
}

TEST(Softmax, VoxelwiseSumsToOne) {
  Rng rng(9);
  Tensor z({3, 2, 2, 6});
  for (double& v : z.values()) v = rng.uniform(-30, 30);
  const Tensor p = voxel_softmax(z);
  EXPECT_EQ(p, softmax(z, 3));
  for (std::size_t i = 0; i < p.lanes(); ++i) {
    const auto lane = p.lane(i);
    EXPECT_NEAR(std::accumulate(lane.begin(), lane.end(), 0.0), 1.0, 1e-14);
  }
}

TEST(Confusion, DiagonalIgnoredAndCountingOracle) {
  Rng rng(10);
  const auto gt = random_labels(20, 5, rng, 0.2);
  VoxelLabels pred = gt;
  for (auto& v : pred.labels)
    if (v == kIgnoreLabel) v = 0;
  const auto diag = confusion_matrix(pred, gt, 5);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b) {
      const auto n = static_cast<std::uint64_t>(std::count(gt.labels.begin(), gt.labels.end(), a));
      EXPECT_EQ(diag(a, b), a == b ? n : 0u);
    }

  const auto ignored = confusion_matrix(pred, line_labels(std::vector<std::uint8_t>(20, 255)), 5);
  for (auto c : ignored.counts) EXPECT_EQ(c, 0u);

  const auto rp = random_labels(20, 5, rng);
  const auto cm = confusion_matrix(rp, gt, 5);
  std::vector<std::uint64_t> want(25, 0);
  for (std::size_t i = 0; i < 20; ++i)
    if (gt.labels[i] != kIgnoreLabel) ++want[gt.labels[i] * 5 + rp.labels[i]];
  EXPECT_EQ(cm.counts, want);
  for (std::size_t c = 0; c < 5; ++c)
    EXPECT_EQ(cm.row_sum(c),
              static_cast<std::uint64_t>(std::count(gt.labels.begin(), gt.labels.end(), c)));
}

TEST(Metrics, Examples) {
  // pred occupies 3 voxels, gt 4, overlap 2, single class.
  const auto gt = line_labels({1, 1, 1, 1, 0, 0});
  const auto pred = line_labels({1, 1, 0, 0, 1, 0});
  const auto m = compute_metrics(confusion_matrix(pred, gt, 3));
  ASSERT_TRUE(m.occupancy_iou);
  EXPECT_EQ(*m.occupancy_iou, 0.4);
  EXPECT_EQ(*m.class_iou[1], 0.4);
  EXPECT_FALSE(m.class_iou[2]);
  EXPECT_EQ(*m.miou, 0.4);

  const auto same = compute_metrics(confusion_matrix(gt, gt, 3));
  EXPECT_EQ(*same.occupancy_iou, 1.0);
  EXPECT_EQ(*same.miou, 1.0);

  const auto empty = line_labels({0, 0, 255});
  const auto none = compute_metrics(confusion_matrix(empty, empty, 3));
  EXPECT_FALSE(none.occupancy_iou);
  EXPECT_FALSE(none.miou);
}

TEST(Metrics, RangeAndMeanOfIncludedClasses) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto gt = random_labels(60, 20, rng, 0.1);
    const auto pred = random_labels(60, 20, rng);
    const auto m = compute_metrics(confusion_matrix(pred, gt, 20));
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 1; c < 20; ++c) {
      if (!m.class_iou[c]) continue;
      EXPECT_GE(*m.class_iou[c], 0.0);
      EXPECT_LE(*m.class_iou[c], 1.0);
      sum += *m.class_iou[c];
      ++n;
    }
    ASSERT_TRUE(m.miou);
    EXPECT_NEAR(*m.miou, sum / static_cast<double>(n), 1e-15);
  }
}

TEST(Labels, ArgmaxTieBreakAndPooling) {
  const Tensor z({2, 1, 1, 3}, {1.0, 1.0, 0.5, -1.0, 2.0, 2.0});
  const auto a = argmax_labels(z);
  EXPECT_EQ(a.labels, (std::vector<std::uint8_t>{0, 1}));

  VoxelLabels l({2, 2, 2});
  l.labels = {3, 3, 3, 1, 1, 0, 0, 5};
  EXPECT_EQ(downsample_labels(l, {1, 1, 1}).labels, (std::vector<std::uint8_t>{3}));
  l.labels = {3, 3, 3, 1, 1, 1, 0, 0};
  EXPECT_EQ(downsample_labels(l, {1, 1, 1}).labels, (std::vector<std::uint8_t>{1}));
  l.labels = {3, 3, 3, 255, 255, 255, 1, 1};
  EXPECT_EQ(downsample_labels(l, {1, 1, 1}).labels, (std::vector<std::uint8_t>{255}));
  l.labels = {4, 4, 2, 2, 1, 0, 7, 9};
  EXPECT_EQ(downsample_labels(l, {1, 1, 1}).labels, (std::vector<std::uint8_t>{2}));
  EXPECT_EQ(downsample_labels(l, {2, 2, 2}), l);
  EXPECT_ANY_THROW(downsample_labels(l, {3, 2, 2}));

  VoxelLabels bad({1, 1, 1});
  bad.labels[0] = 20;
  EXPECT_THROW(bad.validate(20), DomainError);
  EXPECT_EQ(class_name(9), "road");
  EXPECT_EQ(class_name(0), "empty");
}
