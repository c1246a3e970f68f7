#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ssc/config.hpp"
#include "ssc/geometry.hpp"
#include "ssc/labels.hpp"
#include "ssc/pipeline.hpp"
#include "ssc/random.hpp"

namespace ssc {

struct LabeledBox {
  VoxelIndex lo;  // inclusive
  VoxelIndex hi;  // exclusive
  std::uint8_t label = kEmptyClass;
};

/// Toy stand-in for a dataset sample. Labels live on the output grid.
struct SyntheticScene {
  VoxelGridSpec grid;
  VoxelLabels labels;
  CameraModel camera;
  DepthMap depth;
  std::vector<std::uint8_t> class_image;  // H * W, class of the first hit (0 on a miss)
  MultiScaleFeatures features;
};

struct RayHit {
  double t = 0.0;  // ray parameter; equals camera depth for rays with unit z_cam
  VoxelIndex voxel;
};

// Amanatides-Woo traversal. `direction` need not be normalized.
std::optional<RayHit> march_ray(const VoxelGridSpec& grid, const VoxelLabels& labels,
                                const Vec3& origin, const Vec3& direction);

// Ray through pixel (u, v) as texel indices, scaled so that t is camera depth.
Vec3 pixel_ray_direction(const CameraModel& cam, double u, double v);

VoxelLabels rasterize_scene(const VoxelGridSpec& grid, bool ground_plane,
                            const std::vector<LabeledBox>& boxes);
std::vector<LabeledBox> random_boxes(const VoxelGridSpec& grid, const SceneParams& params,
                                     bool ground_plane, Rng& rng);

// Renders depth and class ids, then builds the feature pyramid from them.
SyntheticScene render_scene(const VoxelGridSpec& grid, VoxelLabels labels,
                            const CameraModel& cam, std::size_t embed_dim, std::size_t levels);

SyntheticScene generate_scene(const RunConfig& config);

/// Level l has stride 4 * 2^l; each texel averages the class embeddings of
/// the pixels it covers.
MultiScaleFeatures class_feature_pyramid(const std::vector<std::uint8_t>& class_image,
                                         ImageSize size, std::size_t embed_dim,
                                         std::size_t levels);
double class_embedding(std::uint8_t label, std::size_t channel);

// Largest deviation between rendered depth and a brute-force slab test
// against every occupied voxel. A validity mismatch returns +inf.
double depth_consistency_error(const SyntheticScene& scene);

// Per-class voxel counts over non-ignored labels.
std::vector<std::size_t> label_histogram(const VoxelLabels& labels, std::size_t num_classes);

}  // namespace ssc
