#include "ssc/labels.hpp"

#include <string>

#include "ssc/errors.hpp"

namespace ssc {

void VoxelLabels::validate(std::size_t num_classes) const {
  if (labels.size() != dims[0] * dims[1] * dims[2]) throw ShapeError("label grid size mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kIgnoreLabel && labels[i] >= num_classes) {
      throw DomainError("label " + std::to_string(labels[i]) + " at voxel " + std::to_string(i) +
                        " exceeds class count " + std::to_string(num_classes));
    }
  }
}

VoxelLabels downsample_labels(const VoxelLabels& labels, std::array<std::size_t, 3> target) {
  if (target == labels.dims) return labels;
  std::array<std::size_t, 3> f{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (target[a] == 0 || labels.dims[a] % target[a] != 0) {
      throw ShapeError("downsample_labels: source dims are not an integer multiple of target");
    }
    f[a] = labels.dims[a] / target[a];
  }
  VoxelLabels out(target);
  std::array<std::uint32_t, 256> votes{};
  for (std::size_t i = 0; i < target[0]; ++i) {
    for (std::size_t j = 0; j < target[1]; ++j) {
      for (std::size_t k = 0; k < target[2]; ++k) {
        votes.fill(0);
        for (std::size_t di = 0; di < f[0]; ++di) {
          for (std::size_t dj = 0; dj < f[1]; ++dj) {
            for (std::size_t dk = 0; dk < f[2]; ++dk) {
              ++votes[labels.at(i * f[0] + di, j * f[1] + dj, k * f[2] + dk)];
            }
          }
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < votes.size(); ++c) {
          if (votes[c] > votes[best]) best = c;
        }
        const bool ignore_tied = votes[kIgnoreLabel] == votes[best];
        out.at(i, j, k) = ignore_tied ? kIgnoreLabel : static_cast<std::uint8_t>(best);
      }
    }
  }
  return out;
}

const std::array<ClassInfo, 19>& semantic_classes() {
  static const std::array<ClassInfo, 19> kClasses{{
      {9, "road", 15.30},        {11, "sidewalk", 11.13},    {10, "parking", 1.12},
      {12, "otherground", 0.56}, {13, "building", 14.1},     {1, "car", 3.92},
      {4, "truck", 0.16},        {2, "bicycle", 0.03},       {3, "motorcycle", 0.03},
      {5, "othervehicle", 0.20}, {15, "vegetation", 39.3},   {16, "trunk", 0.51},
      {17, "terrain", 9.17},     {6, "person", 0.07},        {7, "bicyclist", 0.07},
      {8, "motorcyclist", 0.05}, {14, "fence", 3.90},        {18, "pole", 0.29},
      {19, "trafficsign", 0.08},
  }};
  return kClasses;
}

std::string_view class_name(std::uint8_t id) {
  if (id == kEmptyClass) return "empty";
  if (id == kIgnoreLabel) return "ignore";
  for (const auto& c : semantic_classes()) {
    if (c.id == id) return c.name;
  }
  return "unknown";
}

}  // namespace ssc
