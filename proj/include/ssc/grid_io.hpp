#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "ssc/labels.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

/// Voxel grid file:
///
///   offset  size  field
///   0       4     magic "SYMV"
///   4       2     version, u16 LE (= 1)
///   6       1     payload type (0 = u8 labels, 1 = f32 logits)
///   7       1     reserved (0)
///   8       12    X, Y, Z as u32 LE
///   20      4     num_classes u32 LE (logits only)
///   ...           row-major payload; logits are f32 LE, class fastest
///
/// A label file therefore has 20 + X*Y*Z bytes.
inline constexpr std::uint16_t kGridVersion = 1;
inline constexpr std::size_t kGridHeaderBytes = 20;

enum class GridPayload : std::uint8_t { labels = 0, logits = 1 };

using GridData = std::variant<VoxelLabels, Tensor>;

std::vector<std::uint8_t> encode_grid(const VoxelLabels& labels);
// Logits [X, Y, Z, K]; values are narrowed to f32.
std::vector<std::uint8_t> encode_grid(const Tensor& logits);
GridData decode_grid(std::span<const std::uint8_t> bytes);

void save_grid(const VoxelLabels& labels, const std::filesystem::path& path);
void save_grid(const Tensor& logits, const std::filesystem::path& path);
GridData load_grid(const std::filesystem::path& path);

// Loads a label grid, or the argmax of a logit grid.
VoxelLabels load_label_grid(const std::filesystem::path& path);

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ssc
