#include "ssc/geometry.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "ssc/errors.hpp"

namespace ssc {

void CameraModel::validate() const {
  if (image_size.width == 0 || image_size.height == 0) {
    throw ConfigError("camera: image size must be positive");
  }
  if (!intrinsics.allFinite() || !rotation.allFinite() || !translation.allFinite()) {
    throw ConfigError("camera: non-finite calibration entry");
  }
  if (intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0 || intrinsics(2, 2) != 1.0) {
    throw ConfigError("camera: last intrinsics row must be (0, 0, 1)");
  }
  if (intrinsics(0, 0) == 0.0 || intrinsics(1, 1) == 0.0 ||
      std::abs(intrinsics.determinant()) < 1e-12) {
    throw ConfigError("camera: intrinsics are singular (zero focal length?)");
  }
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).norm();
  if (ortho >= 1e-9) throw ConfigError("camera: rotation is not orthonormal");
  if (rotation.determinant() <= 0.0) throw ConfigError("camera: rotation has determinant -1");
}

Vec2 CameraModel::normalize_pixel(const Vec2& pixel) const {
  const double sx = image_size.width > 1 ? static_cast<double>(image_size.width - 1) : 1.0;
  const double sy = image_size.height > 1 ? static_cast<double>(image_size.height - 1) : 1.0;
  return {pixel.x() / sx, pixel.y() / sy};
}

Vec2 CameraModel::denormalize_pixel(const Vec2& normalized) const {
  const double sx = image_size.width > 1 ? static_cast<double>(image_size.width - 1) : 1.0;
  const double sy = image_size.height > 1 ? static_cast<double>(image_size.height - 1) : 1.0;
  return {normalized.x() * sx, normalized.y() * sy};
}

CameraModel make_forward_camera(ImageSize size, double focal, const Vec3& position) {
  CameraModel cam;
  cam.image_size = size;
  cam.intrinsics << focal, 0.0, 0.5 * static_cast<double>(size.width - 1),  //
      0.0, focal, 0.5 * static_cast<double>(size.height - 1),              //
      0.0, 0.0, 1.0;
  cam.rotation << 0.0, -1.0, 0.0,  //
      0.0, 0.0, -1.0,              //
      1.0, 0.0, 0.0;
  cam.translation = -cam.rotation * position;
  return cam;
}

Vec3 image_to_camera(const CameraModel& cam, const Vec2& pixel, double depth) {
  if (!(depth > 0.0)) throw DomainError("image_to_camera: depth must be positive");
  const Vec3 scaled(depth * pixel.x(), depth * pixel.y(), depth);
  return cam.intrinsics.inverse() * scaled;
}

Vec3 camera_to_world(const CameraModel& cam, const Vec3& x_cam) {
  return cam.rotation.transpose() * (x_cam - cam.translation);
}

Vec3 world_to_camera(const CameraModel& cam, const Vec3& x_world) {
  return cam.rotation * x_world + cam.translation;
}

Vec3 lift_pixel(const CameraModel& cam, const Vec2& pixel, double depth) {
  return camera_to_world(cam, image_to_camera(cam, pixel, depth));
}

std::optional<ImagePoint> world_to_image(const CameraModel& cam, const Vec3& x_world) {
  const Vec3 xc = world_to_camera(cam, x_world);
  if (!(xc.z() > 0.0)) return std::nullopt;
  const Vec3 h = cam.intrinsics * (xc / xc.z());
  return ImagePoint{cam.normalize_pixel(Vec2(h.x(), h.y())), xc.z()};
}

void VoxelGridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(voxel_size[a] > 0.0) || !std::isfinite(voxel_size[a])) {
      throw ConfigError("grid: voxel size must be positive on every axis");
    }
    if (dims[static_cast<std::size_t>(a)] == 0) throw ConfigError("grid: dims must be >= 1");
    if (!std::isfinite(origin[a])) throw ConfigError("grid: non-finite origin");
  }
}

Vec3 VoxelGridSpec::extent() const {
  return Vec3(static_cast<double>(dims[0]), static_cast<double>(dims[1]),
              static_cast<double>(dims[2]))
      .cwiseProduct(voxel_size);
}

VoxelIndex VoxelGridSpec::unlinear(std::size_t idx) const {
  VoxelIndex v;
  v.k = idx % dims[2];
  idx /= dims[2];
  v.j = idx % dims[1];
  v.i = idx / dims[1];
  return v;
}

std::optional<VoxelIndex> VoxelGridSpec::voxel_of(const Vec3& world) const {
  std::size_t idx[3];
  for (int a = 0; a < 3; ++a) {
    const double u = std::floor((world[a] - origin[a]) / voxel_size[a]);
    if (!(u >= 0.0) || u >= static_cast<double>(dims[static_cast<std::size_t>(a)])) {
      return std::nullopt;
    }
    idx[a] = static_cast<std::size_t>(u);
  }
  return VoxelIndex{idx[0], idx[1], idx[2]};
}

Vec3 VoxelGridSpec::center(const VoxelIndex& v) const {
  return origin + Vec3(static_cast<double>(v.i) + 0.5, static_cast<double>(v.j) + 0.5,
                       static_cast<double>(v.k) + 0.5)
                      .cwiseProduct(voxel_size);
}

Coord3 VoxelGridSpec::normalized(const VoxelIndex& v) const {
  const std::size_t idx[3] = {v.i, v.j, v.k};
  Coord3 out{};
  for (std::size_t a = 0; a < 3; ++a) {
    out[a] = dims[a] > 1 ? static_cast<double>(idx[a]) / static_cast<double>(dims[a] - 1) : 0.0;
  }
  return out;
}

Coord3 VoxelGridSpec::world_to_normalized(const Vec3& world) const {
  Coord3 out{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (dims[a] <= 1) continue;
    const auto ax = static_cast<Eigen::Index>(a);
    const double lattice = (world[ax] - origin[ax]) / voxel_size[ax] - 0.5;
    out[a] = std::clamp(lattice / static_cast<double>(dims[a] - 1), 0.0, 1.0);
  }
  return out;
}

VoxelGridSpec VoxelGridSpec::refined(std::size_t factor) const {
  VoxelGridSpec g = *this;
  g.voxel_size = voxel_size / static_cast<double>(factor);
  for (auto& d : g.dims) d *= factor;
  return g;
}

VoxelGridSpec VoxelGridSpec::semantic_kitti() {
  VoxelGridSpec g;
  g.origin = Vec3(0.0, -25.6, -2.0);
  g.voxel_size = Vec3::Constant(0.2);
  g.dims = {256, 256, 32};
  return g;
}

VoxelGridSpec VoxelGridSpec::desk() {
  VoxelGridSpec g;
  g.origin = Vec3(0.0, -6.4, 0.0);
  g.voxel_size = Vec3::Constant(0.4);
  g.dims = {32, 32, 8};
  return g;
}

DepthMap::DepthMap(Tensor depth, std::vector<std::uint8_t> validity)
    : values(std::move(depth)), valid(std::move(validity)) {
  if (values.rank() != 2) throw ShapeError("depth map must be [H, W]");
  if (valid.size() != values.size()) throw ShapeError("depth validity mask size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (valid[i] && !(values[i] > 0.0 && std::isfinite(values[i]))) {
      throw DomainError("depth map: valid entry at " + std::to_string(i) +
                        " is not a positive finite depth");
    }
  }
}

DepthMap DepthMap::all_invalid(ImageSize size) {
  return DepthMap(Tensor({size.height, size.width}),
                  std::vector<std::uint8_t>(size.width * size.height, 0));
}

std::size_t VoxelMask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

std::vector<VoxelIndex> VoxelProposal::indices() const {
  std::vector<VoxelIndex> out;
  out.reserve(voxels.size());
  for (const auto& v : voxels) out.push_back(v.index);
  return out;
}

VoxelProposal propose_voxels(const CameraModel& cam, const VoxelGridSpec& grid,
                             const DepthMap& depth) {
  cam.validate();
  grid.validate();
  if (depth.values.rank() != 2 || depth.width() != cam.image_size.width ||
      depth.height() != cam.image_size.height) {
    throw ConfigError("propose_voxels: depth map does not match camera image size");
  }
  const std::size_t w = depth.width(), h = depth.height();
  const Mat3 k_inv = cam.intrinsics.inverse();
  const Mat3 r_t = cam.rotation.transpose();

  // (voxel linear index, first pixel linear index) pairs; merged below so the
  // result does not depend on enumeration order or thread count.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> rows(h);
  const auto n_rows = static_cast<std::ptrdiff_t>(h);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t rr = 0; rr < n_rows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    auto& hits = rows[r];
    for (std::size_t c = 0; c < w; ++c) {
      if (!depth.is_valid(r, c)) continue;
      const double z = depth.values(r, c);
      const Vec3 xc = k_inv * Vec3(z * static_cast<double>(c), z * static_cast<double>(r), z);
      const Vec3 xw = r_t * (xc - cam.translation);
      if (auto v = grid.voxel_of(xw)) hits.emplace_back(grid.linear(*v), r * w + c);
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  std::sort(all.begin(), all.end());

  VoxelProposal out;
  for (std::size_t n = 0; n < all.size(); ++n) {
    if (n > 0 && all[n].first == all[n - 1].first) continue;
    const VoxelIndex idx = grid.unlinear(all[n].first);
    Vec2 pixel;
    if (auto proj = world_to_image(cam, grid.center(idx))) {
      pixel = proj->normalized.cwiseMax(0.0).cwiseMin(1.0);
    } else {
      // Center behind the camera plane: fall back to the lowest-index pixel
      // that hit this voxel.
      const std::size_t px = all[n].second;
      pixel = cam.normalize_pixel(Vec2(static_cast<double>(px % w), static_cast<double>(px / w)));
    }
    out.voxels.push_back(ProposedVoxel{idx, pixel});
  }
  return out;
}

VoxelMask compute_fov_mask(const CameraModel& cam, const VoxelGridSpec& grid) {
  cam.validate();
  grid.validate();
  VoxelMask mask(grid.dims);
  const auto n = static_cast<std::ptrdiff_t>(grid.count());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t a = 0; a < n; ++a) {
    const auto lin = static_cast<std::size_t>(a);
    const auto proj = world_to_image(cam, grid.center(grid.unlinear(lin)));
    if (proj && proj->normalized.x() >= 0.0 && proj->normalized.x() <= 1.0 &&
        proj->normalized.y() >= 0.0 && proj->normalized.y() <= 1.0) {
      mask.bits[lin] = 1;
    }
  }
  return mask;
}

Tensor voxel_center_coords(const VoxelGridSpec& grid) {
  grid.validate();
  Tensor out({grid.dims[0], grid.dims[1], grid.dims[2], 3});
  for (std::size_t lin = 0; lin < grid.count(); ++lin) {
    const Vec3 c = grid.center(grid.unlinear(lin));
    auto lane = out.lane(lin);
    for (int a = 0; a < 3; ++a) lane[static_cast<std::size_t>(a)] = c[a];
  }
  return out;
}

Tensor normalized_voxel_coords(const VoxelGridSpec& grid) {
  grid.validate();
  Tensor out({grid.dims[0], grid.dims[1], grid.dims[2], 3});
  for (std::size_t lin = 0; lin < grid.count(); ++lin) {
    const Coord3 c = grid.normalized(grid.unlinear(lin));
    auto lane = out.lane(lin);
    for (std::size_t a = 0; a < 3; ++a) lane[a] = c[a];
  }
  return out;
}

}  // namespace ssc
