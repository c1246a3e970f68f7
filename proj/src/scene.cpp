#include "ssc/scene.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ssc/errors.hpp"

namespace ssc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool occupied(std::uint8_t label) { return label != kEmptyClass && label != kIgnoreLabel; }

double plane(const VoxelGridSpec& grid, int axis, long index) {
  return grid.origin[axis] + static_cast<double>(index) * grid.voxel_size[axis];
}

// Cell containing coordinate x along an axis when the ray is parallel to it.
long parallel_cell(const VoxelGridSpec& grid, int axis, double x) {
  return static_cast<long>(std::floor((x - grid.origin[axis]) / grid.voxel_size[axis]));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Vec3 pixel_ray_direction(const CameraModel& cam, double u, double v) {
  return cam.rotation.transpose() * (cam.intrinsics.inverse() * Vec3(u, v, 1.0));
}

std::optional<RayHit> march_ray(const VoxelGridSpec& grid, const VoxelLabels& labels,
                                const Vec3& o, const Vec3& d) {
  const long dims[3] = {static_cast<long>(grid.dims[0]), static_cast<long>(grid.dims[1]),
                        static_cast<long>(grid.dims[2])};
  double t0 = 0.0, t1 = kInf;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      const long c = parallel_cell(grid, a, o[a]);
      if (c < 0 || c >= dims[a]) return std::nullopt;
      continue;
    }
    double ta = (plane(grid, a, 0) - o[a]) / d[a];
    double tb = (plane(grid, a, dims[a]) - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;

  long idx[3];
  long step[3];
  double tmax[3];
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      idx[a] = parallel_cell(grid, a, o[a]);
      step[a] = 0;
      tmax[a] = kInf;
      continue;
    }
    const double p = o[a] + t0 * d[a];
    idx[a] = std::clamp(parallel_cell(grid, a, p), 0L, dims[a] - 1);
    step[a] = d[a] > 0.0 ? 1 : -1;
    tmax[a] = (plane(grid, a, d[a] > 0.0 ? idx[a] + 1 : idx[a]) - o[a]) / d[a];
  }

  double t = t0;
  for (;;) {
    const VoxelIndex v{static_cast<std::size_t>(idx[0]), static_cast<std::size_t>(idx[1]),
                       static_cast<std::size_t>(idx[2])};
    if (occupied(labels.labels[grid.linear(v)])) return RayHit{t, v};
    int a = 0;
    if (tmax[1] < tmax[a]) a = 1;
    if (tmax[2] < tmax[a]) a = 2;
    if (tmax[a] == kInf) return std::nullopt;
    t = tmax[a];
    idx[a] += step[a];
    if (idx[a] < 0 || idx[a] >= dims[a]) return std::nullopt;
    tmax[a] = (plane(grid, a, step[a] > 0 ? idx[a] + 1 : idx[a]) - o[a]) / d[a];
  }
}

VoxelLabels rasterize_scene(const VoxelGridSpec& grid, bool ground_plane,
                            const std::vector<LabeledBox>& boxes) {
  grid.validate();
  VoxelLabels labels(grid.dims);
  if (ground_plane) {
    // Road along the x axis in a central band, sidewalk on both sides.
    const double half_road = 0.25 * grid.extent().y();
    const double mid_y = grid.origin.y() + 0.5 * grid.extent().y();
    for (std::size_t i = 0; i < grid.dims[0]; ++i) {
      for (std::size_t j = 0; j < grid.dims[1]; ++j) {
        const double y = grid.center(VoxelIndex{i, j, 0}).y();
        labels.at(i, j, 0) = std::abs(y - mid_y) < half_road ? 9 : 11;
      }
    }
  }
  for (const auto& box : boxes) {
    for (std::size_t i = box.lo.i; i < std::min(box.hi.i, grid.dims[0]); ++i)
      for (std::size_t j = box.lo.j; j < std::min(box.hi.j, grid.dims[1]); ++j)
        for (std::size_t k = box.lo.k; k < std::min(box.hi.k, grid.dims[2]); ++k)
          labels.at(i, j, k) = box.label;
  }
  return labels;
}

std::vector<LabeledBox> random_boxes(const VoxelGridSpec& grid, const SceneParams& params,
                                     bool ground_plane, Rng& rng) {
  std::vector<LabeledBox> boxes;
  const std::size_t z0 = ground_plane ? 1 : 0;
  if (grid.dims[2] <= z0) return boxes;
  auto extent = [&](std::size_t dim, std::size_t cap) {
    const std::size_t hi = std::max<std::size_t>(1, std::min(cap, dim));
    const std::size_t lo = std::min<std::size_t>(2, hi);
    return lo + rng.index(hi - lo + 1);
  };
  for (std::size_t b = 0; b < params.num_boxes; ++b) {
    const std::size_t sx = extent(grid.dims[0], std::max<std::size_t>(2, grid.dims[0] / 6));
    const std::size_t sy = extent(grid.dims[1], std::max<std::size_t>(2, grid.dims[1] / 6));
    const std::size_t sz = extent(grid.dims[2] - z0, std::max<std::size_t>(2, grid.dims[2] / 2));
    LabeledBox box;
    box.lo = VoxelIndex{rng.index(grid.dims[0] - sx + 1), rng.index(grid.dims[1] - sy + 1), z0};
    box.hi = VoxelIndex{box.lo.i + sx, box.lo.j + sy, z0 + sz};
    box.label = params.palette[rng.index(params.palette.size())];
    boxes.push_back(box);
  }
  return boxes;
}

double class_embedding(std::uint8_t label, std::size_t channel) {
  const std::uint64_t h = splitmix64((static_cast<std::uint64_t>(label) << 32) ^ channel);
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

MultiScaleFeatures class_feature_pyramid(const std::vector<std::uint8_t>& class_image,
                                         ImageSize size, std::size_t embed_dim,
                                         std::size_t levels) {
  if (class_image.size() != size.width * size.height) {
    throw ShapeError("class_feature_pyramid: image size mismatch");
  }
  std::vector<std::vector<double>> table(256);
  for (std::size_t c = 0; c < 256; ++c) {
    table[c].resize(embed_dim);
    for (std::size_t ch = 0; ch < embed_dim; ++ch) {
      table[c][ch] = class_embedding(static_cast<std::uint8_t>(c), ch);
    }
  }
  MultiScaleFeatures out;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t stride = std::size_t{4} << l;
    const std::size_t hl = (size.height + stride - 1) / stride;
    const std::size_t wl = (size.width + stride - 1) / stride;
    Tensor f({hl, wl, embed_dim});
#pragma omp parallel for schedule(static)
    for (std::size_t r = 0; r < hl; ++r) {
      for (std::size_t c = 0; c < wl; ++c) {
        auto lane = f.lane(r * wl + c);
        std::size_t n = 0;
        for (std::size_t y = r * stride; y < std::min(size.height, (r + 1) * stride); ++y) {
          for (std::size_t x = c * stride; x < std::min(size.width, (c + 1) * stride); ++x) {
            const auto& e = table[class_image[y * size.width + x]];
            for (std::size_t ch = 0; ch < embed_dim; ++ch) lane[ch] += e[ch];
            ++n;
          }
        }
        for (double& v : lane) v /= static_cast<double>(n);
      }
    }
    out.push_back(std::move(f));
  }
  return out;
}

SyntheticScene render_scene(const VoxelGridSpec& grid, VoxelLabels labels,
                            const CameraModel& cam, std::size_t embed_dim, std::size_t levels) {
  cam.validate();
  if (labels.dims != grid.dims) throw ShapeError("render_scene: label dims differ from grid");
  const std::size_t h = cam.image_size.height, w = cam.image_size.width;
  Tensor depth({h, w});
  std::vector<std::uint8_t> valid(h * w, 0);
  std::vector<std::uint8_t> classes(h * w, kEmptyClass);
  const Vec3 origin = cam.center();
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const Vec3 dir =
          pixel_ray_direction(cam, static_cast<double>(c), static_cast<double>(r));
      const auto hit = march_ray(grid, labels, origin, dir);
      if (!hit || !(hit->t > 0.0)) continue;
      depth(r, c) = hit->t;
      valid[r * w + c] = 1;
      classes[r * w + c] = labels.labels[grid.linear(hit->voxel)];
    }
  }
  SyntheticScene scene;
  scene.grid = grid;
  scene.labels = std::move(labels);
  scene.camera = cam;
  scene.depth = DepthMap(std::move(depth), std::move(valid));
  scene.features = class_feature_pyramid(classes, cam.image_size, embed_dim, levels);
  scene.class_image = std::move(classes);
  return scene;
}

SyntheticScene generate_scene(const RunConfig& config) {
  config.validate();
  const VoxelGridSpec grid = config.model.target_grid();
  Rng rng(config.seed);
  const auto boxes = random_boxes(grid, config.scene, config.scene.ground_plane, rng);
  VoxelLabels labels = rasterize_scene(grid, config.scene.ground_plane, boxes);
  return render_scene(grid, std::move(labels), scene_camera(config), config.model.embed_dim,
                      config.model.feature_levels);
}

double depth_consistency_error(const SyntheticScene& scene) {
  const auto& grid = scene.grid;
  const auto& cam = scene.camera;
  std::vector<VoxelIndex> solid;
  for (std::size_t idx = 0; idx < grid.count(); ++idx) {
    if (occupied(scene.labels.labels[idx])) solid.push_back(grid.unlinear(idx));
  }
  const Vec3 o = cam.center();
  const std::size_t h = cam.image_size.height, w = cam.image_size.width;
  double worst = 0.0;
#pragma omp parallel for schedule(static) reduction(max : worst)
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const Vec3 d = pixel_ray_direction(cam, static_cast<double>(c), static_cast<double>(r));
      double best = kInf;
      for (const auto& v : solid) {
        const long idx[3] = {static_cast<long>(v.i), static_cast<long>(v.j),
                             static_cast<long>(v.k)};
        double enter = -kInf, leave = kInf;
        bool miss = false;
        for (int a = 0; a < 3 && !miss; ++a) {
          if (d[a] == 0.0) {
            miss = parallel_cell(grid, a, o[a]) != idx[a];
            continue;
          }
          double ta = (plane(grid, a, idx[a]) - o[a]) / d[a];
          double tb = (plane(grid, a, idx[a] + 1) - o[a]) / d[a];
          if (ta > tb) std::swap(ta, tb);
          enter = std::max(enter, ta);
          leave = std::min(leave, tb);
        }
        if (miss || enter > leave || leave < 0.0) continue;
        best = std::min(best, std::max(enter, 0.0));
      }
      const bool expect_valid = best < kInf && best > 0.0;
      if (expect_valid != scene.depth.is_valid(r, c)) {
        worst = kInf;
      } else if (expect_valid) {
        worst = std::max(worst, std::abs(best - scene.depth.values(r, c)));
      }
    }
  }
  return worst;
}

std::vector<std::size_t> label_histogram(const VoxelLabels& labels, std::size_t num_classes) {
  std::vector<std::size_t> hist(num_classes, 0);
  for (auto l : labels.labels) {
    if (l != kIgnoreLabel && l < num_classes) ++hist[l];
  }
  return hist;
}

}  // namespace ssc
