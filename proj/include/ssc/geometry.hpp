#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssc/numerics.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct ImageSize {
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Pinhole camera. Extrinsics map world to camera: x_cam = R x_world + T.
/// Pixel coordinates are texel indices (column u, row v); the normalized
/// image point is (u / (width - 1), v / (height - 1)).
struct CameraModel {
  Mat3 intrinsics = Mat3::Identity();
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  ImageSize image_size;

  // Throws ConfigError when an invariant is violated.
  void validate() const;

  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec2 normalize_pixel(const Vec2& pixel) const;
  Vec2 denormalize_pixel(const Vec2& normalized) const;
};

// Forward-looking camera in a z-up world: camera z along world +x,
// camera x along world -y, camera y along world -z.
CameraModel make_forward_camera(ImageSize size, double focal, const Vec3& position);

Vec3 image_to_camera(const CameraModel& cam, const Vec2& pixel, double depth);
Vec3 camera_to_world(const CameraModel& cam, const Vec3& x_cam);
Vec3 world_to_camera(const CameraModel& cam, const Vec3& x_world);
Vec3 lift_pixel(const CameraModel& cam, const Vec2& pixel, double depth);

struct ImagePoint {
  Vec2 normalized;
  double depth = 0.0;
};

// nullopt means the point is on or behind the camera plane.
std::optional<ImagePoint> world_to_image(const CameraModel& cam, const Vec3& x_world);

struct VoxelIndex {
  std::size_t i = 0, j = 0, k = 0;
  auto operator<=>(const VoxelIndex&) const = default;
};

/// Axis-aligned voxel lattice. Voxel (i,j,k) covers the half-open box
/// [origin + (i,j,k) * size, origin + (i+1,j+1,k+1) * size).
struct VoxelGridSpec {
  Vec3 origin = Vec3::Zero();
  Vec3 voxel_size = Vec3::Constant(0.2);
  std::array<std::size_t, 3> dims{1, 1, 1};

  void validate() const;
  std::size_t count() const { return dims[0] * dims[1] * dims[2]; }
  Vec3 extent() const;
  std::size_t linear(const VoxelIndex& v) const { return (v.i * dims[1] + v.j) * dims[2] + v.k; }
  VoxelIndex unlinear(std::size_t idx) const;
  bool contains(const VoxelIndex& v) const {
    return v.i < dims[0] && v.j < dims[1] && v.k < dims[2];
  }

  std::optional<VoxelIndex> voxel_of(const Vec3& world) const;
  Vec3 center(const VoxelIndex& v) const;
  Coord3 normalized(const VoxelIndex& v) const;
  // World point to normalized grid coordinates (same frame as normalized()),
  // clamped to [0,1]^3.
  Coord3 world_to_normalized(const Vec3& world) const;

  // Same world extent, `factor` times finer per axis.
  VoxelGridSpec refined(std::size_t factor) const;

  static VoxelGridSpec semantic_kitti();
  static VoxelGridSpec desk();
};

/// Metric depth per pixel with a validity mask. Invalid entries hold 0.
struct DepthMap {
  Tensor values;                    // [H, W]
  std::vector<std::uint8_t> valid;  // H * W

  DepthMap() = default;
  DepthMap(Tensor depth, std::vector<std::uint8_t> validity);
  static DepthMap all_invalid(ImageSize size);

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
  bool is_valid(std::size_t row, std::size_t col) const { return valid[row * width() + col] != 0; }
};

struct VoxelMask {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> bits;

  VoxelMask() = default;
  explicit VoxelMask(std::array<std::size_t, 3> d, bool value = false)
      : dims(d), bits(d[0] * d[1] * d[2], value ? 1 : 0) {}
  bool operator[](std::size_t linear) const { return bits[linear] != 0; }
  std::size_t count() const;
  bool operator==(const VoxelMask&) const = default;
};

struct ProposedVoxel {
  VoxelIndex index;
  Vec2 pixel;  // normalized, inside [0,1]^2
};

/// Voxels hit by depth-lifted pixels, sorted by linear index.
struct VoxelProposal {
  std::vector<ProposedVoxel> voxels;

  bool empty() const { return voxels.empty(); }
  std::size_t size() const { return voxels.size(); }
  std::vector<VoxelIndex> indices() const;
};

VoxelProposal propose_voxels(const CameraModel& cam, const VoxelGridSpec& grid,
                             const DepthMap& depth);
VoxelMask compute_fov_mask(const CameraModel& cam, const VoxelGridSpec& grid);

Tensor voxel_center_coords(const VoxelGridSpec& grid);      // [X,Y,Z,3] world
Tensor normalized_voxel_coords(const VoxelGridSpec& grid);  // [X,Y,Z,3] in [0,1]

}  // namespace ssc
