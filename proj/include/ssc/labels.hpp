#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace ssc {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr std::uint8_t kEmptyClass = 0;
inline constexpr std::size_t kNumClasses = 20;

/// Per-voxel class ids in [0, num_classes) or kIgnoreLabel. Row-major over
/// (X, Y, Z) like every other voxel array.
struct VoxelLabels {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> labels;

  VoxelLabels() = default;
  explicit VoxelLabels(std::array<std::size_t, 3> d, std::uint8_t fill = kEmptyClass)
      : dims(d), labels(d[0] * d[1] * d[2], fill) {}

  std::size_t count() const { return labels.size(); }
  std::uint8_t& at(std::size_t i, std::size_t j, std::size_t k) {
    return labels[(i * dims[1] + j) * dims[2] + k];
  }
  std::uint8_t at(std::size_t i, std::size_t j, std::size_t k) const {
    return labels[(i * dims[1] + j) * dims[2] + k];
  }
  // Throws DomainError if a non-ignored label is >= num_classes.
  void validate(std::size_t num_classes) const;
  bool operator==(const VoxelLabels&) const = default;
};

/// Majority-vote pooling by per-axis integer factors. Ties that include the
/// ignore label resolve to ignore; other ties go to the lowest class id.
VoxelLabels downsample_labels(const VoxelLabels& labels, std::array<std::size_t, 3> target_dims);

struct ClassInfo {
  std::uint8_t id;
  std::string_view name;
  double frequency_percent;  // share of labeled voxels in the benchmark dataset
};

// The 19 semantic classes in benchmark table column order (road ... trafficsign).
// Ids follow the usual learning map where 0 is "empty".
const std::array<ClassInfo, 19>& semantic_classes();
std::string_view class_name(std::uint8_t id);

}  // namespace ssc
