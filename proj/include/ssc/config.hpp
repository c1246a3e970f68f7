#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssc/geometry.hpp"
#include "ssc/pipeline.hpp"

namespace ssc {

struct SceneParams {
  std::size_t num_boxes = 6;
  bool ground_plane = true;
  std::vector<std::uint8_t> palette{1, 4, 6, 13, 14, 15, 16, 18, 19};
  ImageSize image{128, 40};
  double focal = 64.0;
  Vec3 camera_position = Vec3(-1.0, 0.0, 1.7);
  std::optional<std::filesystem::path> calibration;  // overrides the synthetic camera
};

struct RunConfig {
  PipelineConfig model = PipelineConfig::desk();
  SceneParams scene;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";

  void validate() const;
};

/// Parses the INI-style config:
///
///   [model]   num_queries embed_dim decoder_layers encoder_layers heads
///             sampling_points feature_levels ffn_hidden num_classes
///             upsample_factor query_mode
///   [stages]  instance_from_image scene_from_instance scene_self_attn
///             instance_from_scene instance_self_attn
///   [grid]    origin voxel_size dims        (decoder grid, 3 values each)
///   [camera]  width height focal position calibration
///   [scene]   num_boxes ground_plane palette
///   [run]     seed out
///
/// Keys not listed start from RunConfig defaults. Unknown sections or keys
/// are ConfigErrors. Relative calibration paths resolve against base_dir.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
// Every field, in parse order; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig& config);

/// Camera calibration text: `K` (9 reals, row-major), `R` (9), `T` (3),
/// `image_size` (2 ints), whitespace separated, `#` starts a comment.
CameraModel parse_calibration(const std::string& text);
CameraModel load_calibration(const std::filesystem::path& path);
std::string format_calibration(const CameraModel& cam);

CameraModel scene_camera(const RunConfig& config);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace ssc
