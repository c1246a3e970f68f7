#include "ssc/invariants.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "ssc/reference.hpp"
#include "ssc/errors.hpp"
#include "ssc/grid_io.hpp"
#include "ssc/labels.hpp"
#include "ssc/losses.hpp"
#include "ssc/metrics.hpp"
#include "ssc/numerics.hpp"
#include "ssc/report.hpp"

namespace ssc {

namespace {

constexpr double kGradTol = 1e-5;

InvariantResult result(std::string name, bool ok, const std::string& detail = {}) {
  return InvariantResult{std::move(name), ok, detail};
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

LinearMap random_linear(std::size_t out, std::size_t in, Rng& rng, double scale = 1.0) {
  LinearMap m;
  m.weight = random_tensor({out, in}, rng, -scale, scale);
  m.bias.resize(out);
  for (double& b : m.bias) b = rng.uniform(-scale, scale);
  return m;
}

// Fractional part of u kept at least `margin` away from a lattice line.
double off_lattice(Rng& rng, std::size_t extent, double margin) {
  const double cell = static_cast<double>(rng.index(extent - 1));
  return cell + margin + (1.0 - 2.0 * margin) * rng.uniform();
}

Tensor corrupt(Tensor g) {
  for (double& v : g.values()) v = 1.5 * v + 1e-3;
  return g;
}

VoxelLabels random_labels(std::array<std::size_t, 3> dims, std::size_t k, Rng& rng,
                          double ignore_rate) {
  VoxelLabels l(dims);
  for (auto& v : l.labels) {
    v = rng.uniform() < ignore_rate ? kIgnoreLabel : static_cast<std::uint8_t>(rng.index(k));
  }
  l.labels[rng.index(l.count())] = static_cast<std::uint8_t>(rng.index(k));
  return l;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  Tensor out(t.shape());
  const std::size_t w = t.lane_width();
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy_n(t.data() + perm[i] * w, w, out.data() + i * w);
  }
  return out;
}

}  // namespace

Tensor random_tensor(Tensor::Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

DeformableAttnParams random_deformable_params(std::size_t c, std::size_t heads,
                                              std::size_t levels, std::size_t points,
                                              std::size_t coord_dim, Rng& rng) {
  DeformableAttnParams p;
  p.heads = heads;
  p.levels = levels;
  p.points = points;
  p.coord_dim = coord_dim;
  p.value_proj = random_linear(c, c, rng);
  p.output_proj = random_linear(c, c, rng);
  p.offset_net = random_linear(heads * levels * points * coord_dim, c, rng, 1.5);
  p.weight_net = random_linear(heads * levels * points, c, rng, 2.0);
  return p;
}

MultiHeadAttnParams random_attn_params(std::size_t c, std::size_t heads, Rng& rng) {
  MultiHeadAttnParams p;
  p.heads = heads;
  p.query_proj = random_linear(c, c, rng);
  p.key_proj = random_linear(c, c, rng);
  p.value_proj = random_linear(c, c, rng);
  p.output_proj = random_linear(c, c, rng);
  return p;
}

InvariantResult check_geometry_round_trip(std::size_t points, std::uint64_t seed) {
  Rng rng(seed);
  const CameraModel cam = make_forward_camera({128, 40}, 64.0, Vec3(-1.0, 0.0, 1.7));
  double worst = 0.0;
  for (std::size_t n = 0; n < points; ++n) {
    const Vec2 px(rng.uniform(0.0, 127.0), rng.uniform(0.0, 39.0));
    const Vec3 x = lift_pixel(cam, px, rng.uniform(0.5, 60.0));
    const auto proj = world_to_image(cam, x);
    if (!proj) return result("geometry.round_trip", false, "in-frustum point failed to project");
    const Vec3 back = lift_pixel(cam, cam.denormalize_pixel(proj->normalized), proj->depth);
    worst = std::max(worst, (back - x).norm());
  }
  return result("geometry.round_trip", worst < 1e-9, "max error " + sci(worst) + " m");
}

InvariantResult check_fov_mask(const CameraModel& cam, const VoxelGridSpec& grid) {
  const VoxelMask mask = compute_fov_mask(cam, grid);
  std::size_t mismatches = 0;
  for (std::size_t idx = 0; idx < grid.count(); ++idx) {
    const auto proj = world_to_image(cam, grid.center(grid.unlinear(idx)));
    const bool inside = proj && proj->normalized.x() >= 0.0 && proj->normalized.x() <= 1.0 &&
                        proj->normalized.y() >= 0.0 && proj->normalized.y() <= 1.0;
    mismatches += inside != mask[idx] ? 1 : 0;
  }
  return result("geometry.fov_mask", mismatches == 0,
                std::to_string(mismatches) + " mismatching voxels");
}

InvariantResult check_proposal_order(const CameraModel& cam, const VoxelGridSpec& grid,
                                     const DepthMap& depth, std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> pixels;
  for (std::size_t r = 0; r < depth.height(); ++r)
    for (std::size_t c = 0; c < depth.width(); ++c)
      if (depth.is_valid(r, c)) pixels.emplace_back(r, c);
  Rng rng(seed);
  for (std::size_t i = pixels.size(); i > 1; --i) std::swap(pixels[i - 1], pixels[rng.index(i)]);
  std::set<VoxelIndex> brute;
  for (const auto& [r, c] : pixels) {
    const Vec3 x = lift_pixel(cam, Vec2(static_cast<double>(c), static_cast<double>(r)),
                              depth.values(r, c));
    if (auto v = grid.voxel_of(x)) brute.insert(*v);
  }
  const auto got = propose_voxels(cam, grid, depth).indices();
  const bool ok = std::vector<VoxelIndex>(brute.begin(), brute.end()) == got;
  return result("geometry.proposal_order_independence", ok,
                std::to_string(got.size()) + " proposed voxels");
}

std::vector<InvariantResult> check_attention_oracles(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst[4] = {0, 0, 0, 0};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t heads = 1 + rng.index(2);
    const std::size_t c = heads * (1 + rng.index(8 / heads));
    const std::size_t n = 1 + rng.index(8);
    const std::size_t points = 1 + rng.index(4);

    const std::size_t levels = 1 + rng.index(3);
    std::vector<Tensor> maps;
    for (std::size_t l = 0; l < levels; ++l) {
      maps.push_back(random_tensor({1 + rng.index(8), 1 + rng.index(8), c}, rng));
    }
    const auto p2 = random_deformable_params(c, heads, levels, points, 2, rng);
    const Tensor q = random_tensor({n, c}, rng);
    const Tensor ref2 = random_tensor({n, 2}, rng, 0.0, 1.0);
    worst[0] = std::max(worst[0], max_abs_diff(deformable_attn_2d(p2, q, ref2, maps),
                                               reference::deformable_attn_2d(p2, q, ref2, maps)));

    const Tensor vol = random_tensor({1 + rng.index(8), 1 + rng.index(8), 1 + rng.index(8), c}, rng);
    const auto p3 = random_deformable_params(c, heads, 1, points, 3, rng);
    const Tensor ref3 = random_tensor({n, 3}, rng, 0.0, 1.0);
    worst[1] = std::max(worst[1], max_abs_diff(deformable_attn_3d(p3, q, ref3, vol),
                                               reference::deformable_attn_3d(p3, q, ref3, vol)));

    const auto pa = random_attn_params(c, heads, rng);
    const std::size_t m = 1 + rng.index(8);
    const Tensor k = random_tensor({m, c}, rng);
    const Tensor v = random_tensor({m, c}, rng);
    worst[2] = std::max(worst[2],
                        max_abs_diff(cross_attn(pa, q, k, v), reference::cross_attn(pa, q, k, v)));
    worst[3] = std::max(worst[3], max_abs_diff(self_attn(pa, q), reference::cross_attn(pa, q, q, q)));
  }
  const char* names[4] = {"attention.deformable_2d_oracle", "attention.deformable_3d_oracle",
                          "attention.cross_attn_oracle", "attention.self_attn_oracle"};
  std::vector<InvariantResult> out;
  for (int i = 0; i < 4; ++i) {
    out.push_back(result(names[i], worst[i] < 1e-10,
                         std::to_string(trials) + " instances, max diff " + sci(worst[i])));
  }
  return out;
}

InvariantResult check_degenerate_reduction(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t heads = 1 + rng.index(2);
    const std::size_t c = heads * (1 + rng.index(4));
    const std::size_t n = 1 + rng.index(6);
    auto p = random_deformable_params(c, heads, 1, 1, 2, rng);
    p.offset_net = LinearMap::zeros(p.offset_net.out_dim(), c);
    const Tensor fmap = random_tensor({2 + rng.index(7), 2 + rng.index(7), c}, rng);
    const Tensor q = random_tensor({n, c}, rng);
    const Tensor ref = random_tensor({n, 2}, rng, 0.0, 1.0);
    const Tensor got = deformable_attn_2d(p, q, ref, {fmap});

    Tensor sampled({n, c});
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = bilinear_sample(fmap, Coord2{ref(i, 0), ref(i, 1)});
      std::copy(s.begin(), s.end(), sampled.data() + i * c);
    }
    const Tensor expect = linear_apply(p.output_proj, linear_apply(p.value_proj, sampled));
    worst = std::max(worst, max_abs_diff(got, expect));
  }
  return result("attention.degenerate_reduction", worst < 1e-12, "max diff " + sci(worst));
}

InvariantResult check_sampling_gradients(std::size_t trials, std::uint64_t seed, bool inject) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t h = 2 + rng.index(6), w = 2 + rng.index(6), d = 2 + rng.index(4);
    const std::size_t c = 1 + rng.index(4);
    const Tensor fmap = random_tensor({h, w, c}, rng);
    const Tensor vol = random_tensor({w, h, d, c}, rng);
    const Tensor r = random_tensor({c}, rng);
    auto project = [&](const std::vector<double>& s) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c; ++i) acc += r[i] * s[i];
      return acc;
    };
    // Keep the stencil of width 2h inside one cell.
    const double margin = 1e-3;
    const Tensor p2({2}, {off_lattice(rng, w, margin) / static_cast<double>(w - 1),
                          off_lattice(rng, h, margin) / static_cast<double>(h - 1)});
    const Tensor g2 = bilinear_sample_grad(fmap, Coord2{p2[0], p2[1]});
    Tensor a2({2});
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t a = 0; a < 2; ++a) a2[a] += r[i] * g2(i, a);
    const auto f2 = [&](const Tensor& x) { return project(bilinear_sample(fmap, Coord2{x[0], x[1]})); };
    worst = std::max(worst, finite_diff_check(f2, p2, inject ? corrupt(a2) : a2).max_rel_error);

    const std::size_t ext[3] = {w, h, d};
    Tensor p3({3});
    for (std::size_t a = 0; a < 3; ++a) {
      p3[a] = off_lattice(rng, ext[a], margin) / static_cast<double>(ext[a] - 1);
    }
    const Tensor g3 = trilinear_sample_grad(vol, Coord3{p3[0], p3[1], p3[2]});
    Tensor a3({3});
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t a = 0; a < 3; ++a) a3[a] += r[i] * g3(i, a);
    const auto f3 = [&](const Tensor& x) {
      return project(trilinear_sample(vol, Coord3{x[0], x[1], x[2]}));
    };
    worst = std::max(worst, finite_diff_check(f3, p3, inject ? corrupt(a3) : a3).max_rel_error);
  }
  return result("gradients.coordinate_sampling", worst < kGradTol,
                std::to_string(trials) + " points per kernel, max rel err " + sci(worst));
}

InvariantResult check_cross_entropy_gradient(std::size_t trials, std::uint64_t seed,
                                             bool inject) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t k = 2 + rng.index(4);
    const std::array<std::size_t, 3> dims{1 + rng.index(3), 1 + rng.index(3), 1 + rng.index(2)};
    const VoxelLabels labels = random_labels(dims, k, rng, 0.15);
    ClassWeights w;
    for (std::size_t i = 0; i < k; ++i) w.weights.push_back(rng.uniform(0.2, 3.0));
    const Tensor logits = random_tensor({dims[0], dims[1], dims[2], k}, rng, -3.0, 3.0);
    const auto loss = weighted_cross_entropy(logits, labels, w, true);
    const auto f = [&](const Tensor& x) { return weighted_cross_entropy(x, labels, w, false).value; };
    const Tensor g = inject ? corrupt(loss.grad) : loss.grad;
    worst = std::max(worst, finite_diff_check(f, logits, g).max_rel_error);
  }
  return result("gradients.weighted_cross_entropy", worst < kGradTol,
                std::to_string(trials) + " points, max rel err " + sci(worst));
}

InvariantResult check_affinity_gradient(AffinityMode mode, std::size_t trials, std::uint64_t seed,
                                        bool inject) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t k = 2 + rng.index(4);
    const std::array<std::size_t, 3> dims{1 + rng.index(3), 1 + rng.index(3), 1 + rng.index(2)};
    const VoxelLabels labels = random_labels(dims, k, rng, 0.1);
    const Tensor probs = random_tensor({dims[0], dims[1], dims[2], k}, rng, 0.05, 0.95);
    const auto loss = scene_class_affinity(probs, labels, mode, true);
    const auto f = [&](const Tensor& x) {
      return scene_class_affinity(x, labels, mode, false).value;
    };
    const Tensor g = inject ? corrupt(loss.grad) : loss.grad;
    worst = std::max(worst, finite_diff_check(f, probs, g).max_rel_error);
  }
  const std::string name = mode == AffinityMode::semantic ? "gradients.scene_class_affinity_sem"
                                                          : "gradients.scene_class_affinity_geo";
  return result(name, worst < kGradTol,
                std::to_string(trials) + " points, max rel err " + sci(worst));
}

InvariantResult check_negative_control(std::uint64_t seed) {
  const auto wrong = check_cross_entropy_gradient(5, seed, true);
  return result("gradients.negative_control", !wrong.passed,
                wrong.passed ? "corrupted gradient was accepted" : "corrupted gradient rejected");
}

InvariantResult check_perfect_prediction(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t k = kNumClasses;
  const std::array<std::size_t, 3> dims{4, 4, 2};
  const VoxelLabels labels = random_labels(dims, k, rng, 0.0);
  Tensor logits({dims[0], dims[1], dims[2], k});
  for (std::size_t i = 0; i < labels.count(); ++i) logits.lane(i)[labels.labels[i]] = 20.0;
  const auto parts = composite_loss(logits, labels, ClassWeights::uniform(k), false).parts;
  const double worst = std::max({parts.scal_geo, parts.scal_sem, parts.ce});
  const bool ok = worst < 1e-5 && parts.scal_geo >= 0.0 && parts.scal_sem >= 0.0 && parts.ce >= 0.0;
  return result("losses.perfect_prediction", ok, "largest component " + sci(worst));
}

InvariantResult check_loss_report_identity(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t k = 5;
  const VoxelLabels labels = random_labels({4, 4, 2}, k, rng, 0.1);
  const Tensor final_logits = random_tensor({4, 4, 2, k}, rng, -2.0, 2.0);
  const std::vector<Tensor> aux{random_tensor({2, 2, 1, k}, rng), random_tensor({4, 4, 2, k}, rng)};
  const auto report = total_loss(final_logits, aux, labels, ClassWeights::uniform(k), false);
  double aux_sum = 0.0;
  for (double a : report.aux_totals) aux_sum += a;
  const auto& p = report.final_parts;
  const double expect = p.scal_geo + p.scal_sem + p.ce + 0.5 * aux_sum;
  return result("losses.report_identity", report.total == expect && report.aux_totals.size() == 2);
}

InvariantResult check_metric_identity(std::uint64_t seed) {
  Rng rng(seed);
  const VoxelLabels gt = random_labels({8, 8, 4}, kNumClasses, rng, 0.05);
  VoxelLabels pred = gt;
  for (auto& v : pred.labels) v = v == kIgnoreLabel ? kEmptyClass : v;
  const auto m = compute_metrics(confusion_matrix(pred, gt, kNumClasses));
  const bool ok = m.occupancy_iou && *m.occupancy_iou == 1.0 && m.miou && *m.miou == 1.0;
  return result("metrics.identity", ok);
}

InvariantResult check_confusion_row_sums(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::array<std::size_t, 3> dims{1 + rng.index(8), 1 + rng.index(8), 1 + rng.index(4)};
    const VoxelLabels gt = random_labels(dims, kNumClasses, rng, 0.1);
    const VoxelLabels pred = random_labels(dims, kNumClasses, rng, 0.0);
    const auto cm = confusion_matrix(pred, gt, kNumClasses);
    const auto hist = label_histogram(gt, kNumClasses);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (cm.row_sum(c) != hist[c]) {
        return result("metrics.confusion_row_sums", false, "class " + std::to_string(c));
      }
    }
  }
  return result("metrics.confusion_row_sums", true);
}

InvariantResult check_depth_consistency(const SyntheticScene& scene) {
  const double err = depth_consistency_error(scene);
  return result("scene.depth_consistency", err < 1e-6, "max error " + sci(err) + " m");
}

InvariantResult check_grid_round_trip(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::array<std::size_t, 3> dims{1 + rng.index(64), 1 + rng.index(64), 1 + rng.index(64)};
    VoxelLabels labels(dims);
    for (auto& v : labels.labels) v = static_cast<std::uint8_t>(rng.next() & 0xff);
    const auto bytes = encode_grid(labels);
    if (bytes.size() != kGridHeaderBytes + labels.count() ||
        std::get<VoxelLabels>(decode_grid(bytes)) != labels) {
      return result("io.grid_round_trip", false, "label grid " + std::to_string(t));
    }
    const std::array<std::size_t, 4> ldims{1 + rng.index(8), 1 + rng.index(8), 1 + rng.index(8),
                                           1 + rng.index(20)};
    Tensor logits({ldims[0], ldims[1], ldims[2], ldims[3]});
    for (double& v : logits.values()) v = static_cast<double>(static_cast<float>(rng.uniform(-30, 30)));
    if (!(std::get<Tensor>(decode_grid(encode_grid(logits))) == logits)) {
      return result("io.grid_round_trip", false, "logit grid " + std::to_string(t));
    }
  }
  return result("io.grid_round_trip", true, std::to_string(trials) + " grids per payload");
}

InvariantResult check_fov_locality(const ForwardResult& r) {
  const auto& mask = r.proposed_scene.fov_mask;
  const Tensor& before = r.proposed_scene.embeddings;
  std::size_t changed = 0;
  for (const Tensor& after : r.decoder.intermediates) {
    const std::size_t w = before.lane_width();
    for (std::size_t v = 0; v < mask.bits.size(); ++v) {
      if (mask[v]) continue;
      if (!std::equal(before.data() + v * w, before.data() + (v + 1) * w, after.data() + v * w)) {
        ++changed;
      }
    }
  }
  const std::size_t outside = mask.bits.size() - mask.count();
  return result("pipeline.fov_locality", changed == 0,
                std::to_string(outside) + " out-of-FOV voxels x " +
                    std::to_string(r.decoder.intermediates.size()) + " layers, " +
                    std::to_string(changed) + " changed");
}

InvariantResult check_proposal_locality(const ForwardResult& r) {
  const Tensor& a = r.initial_scene.embeddings;
  const Tensor& b = r.proposed_scene.embeddings;
  const auto& grid = r.initial_scene.grid;
  std::vector<std::uint8_t> proposed(grid.count(), 0);
  for (const auto& v : r.proposed_scene.proposal.voxels) proposed[grid.linear(v.index)] = 1;
  const std::size_t w = a.lane_width();
  std::size_t touched = 0;
  for (std::size_t v = 0; v < grid.count(); ++v) {
    if (proposed[v]) continue;
    if (!std::equal(a.data() + v * w, a.data() + (v + 1) * w, b.data() + v * w)) ++touched;
  }
  return result("pipeline.proposal_locality", touched == 0,
                std::to_string(r.proposed_scene.proposal.size()) + " proposed voxels, " +
                    std::to_string(touched) + " others touched");
}

InvariantResult check_query_permutation(const PipelineConfig& config, const SyntheticScene& scene,
                                        const ModelParams& params, std::size_t permutations,
                                        std::uint64_t seed) {
  PipelineConfig cfg = config;
  cfg.query_mode = QueryMode::learnable;
  const auto base = forward_pipeline(cfg, scene.camera, scene.depth, scene.features, params);
  const std::size_t n = cfg.num_queries;
  Rng rng(seed);
  double logit_diff = 0.0, inst_diff = 0.0;
  for (std::size_t t = 0; t < permutations; ++t) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    ModelParams p = params;
    p.queries.embeddings = permute_rows(params.queries.embeddings, perm);
    p.queries.ref_logits = permute_rows(params.queries.ref_logits, perm);
    const auto out = forward_pipeline(cfg, scene.camera, scene.depth, scene.features, p);
    logit_diff = std::max(logit_diff, max_abs_diff(out.logits, base.logits));
    inst_diff = std::max(inst_diff, max_abs_diff(out.decoder.instances.embeddings,
                                                 permute_rows(base.decoder.instances.embeddings, perm)));
  }
  return result("pipeline.query_permutation", logit_diff < 1e-9 && inst_diff < 1e-9,
                std::to_string(permutations) + " permutations, logits " + sci(logit_diff) +
                    ", instances " + sci(inst_diff));
}

std::vector<InvariantResult> check_stage_toggles(const PipelineConfig& config,
                                                 const SyntheticScene& scene,
                                                 const ModelParams& params) {
  PipelineConfig cfg = config;
  cfg.query_mode = QueryMode::learnable;
  const SceneVolume initial = init_scene(cfg, params, scene.camera, scene.depth);
  const MultiScaleFeatures encoded = encode_features(scene.features, params.encoder);
  const SceneVolume proposed = voxel_proposal_layer(initial, encoded, params.proposal);
  const InstanceQueries queries = make_instance_queries(cfg, params.queries);
  const DecoderContext ctx{&encoded, &scene.camera, &scene.depth};
  const DecoderLayerParams& layer = params.decoder.front();

  auto compose = [&](const StageFlags& f) {
    SceneVolume s = proposed;
    InstanceQueries q = queries;
    if (f.instance_from_image) q = stage_instance_from_image(q, encoded, layer.instance_image);
    if (f.scene_from_instance) s = stage_scene_from_instance(s, q, layer.scene_instance);
    if (f.scene_self_attn) s = stage_scene_self_attn(s, layer.scene_self);
    if (f.instance_from_scene) {
      q = stage_instance_from_scene(q, s, scene.camera, scene.depth, layer.instance_scene);
    }
    if (f.instance_self_attn) q = stage_instance_self_attn(q, layer.instance_self);
    return LayerState{std::move(s), std::move(q)};
  };
  auto same = [](const LayerState& a, const LayerState& b) {
    return a.scene.embeddings == b.scene.embeddings &&
           a.instances.embeddings == b.instances.embeddings &&
           a.instances.ref_points_2d == b.instances.ref_points_2d;
  };

  std::vector<InvariantResult> out;
  const char* names[5] = {"instance_from_image", "scene_from_instance", "scene_self_attn",
                          "instance_from_scene", "instance_self_attn"};
  for (int s = 0; s < 5; ++s) {
    StageFlags f;
    bool* bits[5] = {&f.instance_from_image, &f.scene_from_instance, &f.scene_self_attn,
                     &f.instance_from_scene, &f.instance_self_attn};
    *bits[s] = false;
    const auto got = decoder_layer(proposed, queries, ctx, layer, f);
    out.push_back(result(std::string("pipeline.stage_off.") + names[s], same(got, compose(f))));
  }
  const auto off = decoder_layer(proposed, queries, ctx, layer, StageFlags::all_off());
  out.push_back(result("pipeline.stage_off.all", same(off, LayerState{proposed, queries})));
  return out;
}

InvariantResult check_query_modes(const PipelineConfig& config, const SyntheticScene& scene,
                                  const ModelParams& params) {
  const std::array<std::size_t, 4> want{config.target_grid().dims[0], config.target_grid().dims[1],
                                        config.target_grid().dims[2], config.num_classes};
  std::string detail;
  bool ok = true;
  Tensor none_logits;
  for (QueryMode mode : {QueryMode::learnable, QueryMode::detached, QueryMode::none}) {
    PipelineConfig cfg = config;
    cfg.query_mode = mode;
    const auto r = forward_pipeline(cfg, scene.camera, scene.depth, scene.features, params);
    const bool shape_ok = r.logits.shape() == Tensor::Shape(want.begin(), want.end());
    const bool good = shape_ok && all_finite(r.logits) &&
                      r.decoder.instances.count() == cfg.active_queries();
    ok = ok && good;
    detail += to_string(mode) + (good ? " ok " : " bad ");
    if (mode == QueryMode::none) none_logits = r.logits;
  }
  // Without queries only the scene self-attention stage can act.
  PipelineConfig scene_only = config;
  scene_only.query_mode = QueryMode::learnable;
  scene_only.stages = StageFlags::all_off();
  scene_only.stages.scene_self_attn = config.stages.scene_self_attn;
  const auto r = forward_pipeline(scene_only, scene.camera, scene.depth, scene.features, params);
  const bool match = r.logits == none_logits;
  detail += match ? "none==scene-only" : "none!=scene-only";
  return result("pipeline.query_modes", ok && match, detail);
}

std::vector<InvariantResult> run_invariant_suite(const RunConfig& config,
                                                 const SuiteOptions& o) {
  std::vector<InvariantResult> out;
  auto add = [&](InvariantResult r) { out.push_back(std::move(r)); };
  auto add_all = [&](std::vector<InvariantResult> rs) {
    for (auto& r : rs) out.push_back(std::move(r));
  };

  const SyntheticScene scene = generate_scene(config);
  const ModelParams params = init_model(config.model, config.seed);
  const VoxelGridSpec& grid = config.model.grid;

  add(check_geometry_round_trip(1000, o.seed + 1));
  add(check_fov_mask(scene.camera, grid));
  add(check_proposal_order(scene.camera, grid, scene.depth, o.seed + 2));
  add_all(check_attention_oracles(o.trials, o.seed + 3));
  add(check_degenerate_reduction(o.trials, o.seed + 4));
  add(check_sampling_gradients(o.trials, o.seed + 5, o.inject_wrong_gradient));
  add(check_cross_entropy_gradient(o.trials, o.seed + 6, o.inject_wrong_gradient));
  add(check_affinity_gradient(AffinityMode::semantic, o.trials, o.seed + 7, o.inject_wrong_gradient));
  add(check_affinity_gradient(AffinityMode::geometric, o.trials, o.seed + 8, o.inject_wrong_gradient));
  add(check_negative_control(o.seed + 9));
  add(check_perfect_prediction(o.seed + 10));
  add(check_loss_report_identity(o.seed + 11));
  add(check_metric_identity(o.seed + 12));
  add(check_confusion_row_sums(o.trials, o.seed + 13));
  add(check_depth_consistency(scene));
  add(check_grid_round_trip(o.trials / 4 + 1, o.seed + 14));

  const auto forward =
      forward_pipeline(config.model, scene.camera, scene.depth, scene.features, params);
  add(check_fov_locality(forward));
  add(check_proposal_locality(forward));
  if (config.model.num_queries > 0) {
    add(check_query_permutation(config.model, scene, params, o.permutations, o.seed + 15));
    add_all(check_stage_toggles(config.model, scene, params));
  }
  add(check_query_modes(config.model, scene, params));
  return out;
}

}  // namespace ssc
