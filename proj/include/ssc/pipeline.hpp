#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ssc/attention.hpp"
#include "ssc/geometry.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

enum class QueryMode { learnable, detached, none };

std::string to_string(QueryMode mode);
QueryMode parse_query_mode(const std::string& text);

/// Per-stage switches of a decoder layer, in execution order.
struct StageFlags {
  bool instance_from_image = true;
  bool scene_from_instance = true;
  bool scene_self_attn = true;
  bool instance_from_scene = true;
  bool instance_self_attn = true;

  static StageFlags all_off() { return StageFlags{false, false, false, false, false}; }
  bool operator==(const StageFlags&) const = default;
};

struct PipelineConfig {
  std::size_t num_queries = 100;
  std::size_t embed_dim = 64;
  std::size_t decoder_layers = 3;
  std::size_t encoder_layers = 6;
  std::size_t heads = 8;
  std::size_t sampling_points = 4;
  std::size_t feature_levels = 3;
  std::size_t ffn_hidden = 128;
  std::size_t num_classes = 20;
  std::size_t upsample_factor = 2;
  VoxelGridSpec grid = VoxelGridSpec::semantic_kitti();  // decoder resolution
  StageFlags stages;
  QueryMode query_mode = QueryMode::learnable;

  void validate() const;
  std::size_t active_queries() const { return query_mode == QueryMode::none ? 0 : num_queries; }
  VoxelGridSpec target_grid() const { return grid.refined(upsample_factor); }

  // Full-size defaults with the decoder at half the 256x256x32 output grid.
  static PipelineConfig full_scale();
  // Small configuration: 32x32x8 decoder grid, C = 32, 8 queries, 3 layers.
  static PipelineConfig desk();
};

/// Dilated 3x3x3 convolution with zero padding and "same" output size.
/// weight is [27, out, in] with taps ordered (dx, dy, dz) in row-major.
struct Conv3d {
  std::size_t dilation = 1;
  Tensor weight;
  std::vector<double> bias;
};

Tensor conv3d_same(const Tensor& vol, const Conv3d& conv);

struct HeadParams {
  std::vector<Conv3d> aspp;  // dilations 1, 2, 3
  LinearMap mix;
  LinearMap classifier;
};

struct DecoderLayerParams {
  DeformableBlockParams instance_image;
  AttnBlockParams scene_instance;
  DeformableBlockParams scene_self;
  DeformableBlockParams instance_scene;
  AttnBlockParams instance_self;
};

struct InstanceQueryParams {
  Tensor embeddings;  // [N, C]
  Tensor ref_logits;  // [N, 2], squashed by a sigmoid in learnable mode
};

struct ModelParams {
  Tensor scene_embedding;  // [X, Y, Z, C]
  InstanceQueryParams queries;
  std::vector<DeformableBlockParams> encoder;
  DeformableBlockParams proposal;
  std::vector<DecoderLayerParams> decoder;
  HeadParams head;
};

ModelParams init_model(const PipelineConfig& config, std::uint64_t seed);

using MultiScaleFeatures = std::vector<Tensor>;  // [H_l, W_l, C] per level

struct InstanceQueries {
  Tensor embeddings;     // [N, C]; empty when N = 0
  Tensor ref_points_2d;  // [N, 2] normalized image coordinates
  QueryMode mode = QueryMode::learnable;

  std::size_t count() const { return embeddings.empty() ? 0 : embeddings.dim(0); }
};

InstanceQueries make_instance_queries(const PipelineConfig& config,
                                      const InstanceQueryParams& params);
// Cell centers of a near-square grid covering [0,1]^2, row by row.
Tensor stratified_reference_points(std::size_t n);

struct SceneVolume {
  Tensor embeddings;  // [X, Y, Z, C]
  VoxelMask fov_mask;
  VoxelProposal proposal;
  VoxelGridSpec grid;
};

SceneVolume init_scene(const PipelineConfig& config, const ModelParams& params,
                       const CameraModel& cam, const DepthMap& depth);

MultiScaleFeatures encode_features(const MultiScaleFeatures& features,
                                   const std::vector<DeformableBlockParams>& encoder);

SceneVolume voxel_proposal_layer(SceneVolume scene, const MultiScaleFeatures& features,
                                 const DeformableBlockParams& params);

// Inputs a decoder layer reads but does not modify. Null members are
// allowed as long as no enabled stage needs them.
struct DecoderContext {
  const MultiScaleFeatures* features = nullptr;
  const CameraModel* camera = nullptr;
  const DepthMap* depth = nullptr;
};

// The five decoder stages. Each wraps its attention in residual_block.
InstanceQueries stage_instance_from_image(InstanceQueries q, const MultiScaleFeatures& features,
                                          const DeformableBlockParams& params);
SceneVolume stage_scene_from_instance(SceneVolume scene, const InstanceQueries& q,
                                      const AttnBlockParams& params);
SceneVolume stage_scene_self_attn(SceneVolume scene, const DeformableBlockParams& params);
InstanceQueries stage_instance_from_scene(InstanceQueries q, const SceneVolume& scene,
                                          const CameraModel& cam, const DepthMap& depth,
                                          const DeformableBlockParams& params);
InstanceQueries stage_instance_self_attn(InstanceQueries q, const AttnBlockParams& params);

// Depth at a normalized image point: bilinear over valid texels only,
// clamped to the valid depth range; falls back to the depth of the grid
// center when no neighbouring texel is valid.
double query_depth(const DepthMap& depth, const Vec2& normalized, const CameraModel& cam,
                   const VoxelGridSpec& grid);
// p_ins^3D: lifted reference points in normalized grid coordinates, [N, 3].
Tensor instance_reference_points_3d(const InstanceQueries& q, const CameraModel& cam,
                                    const DepthMap& depth, const VoxelGridSpec& grid);

struct LayerState {
  SceneVolume scene;
  InstanceQueries instances;
};

LayerState decoder_layer(SceneVolume scene, InstanceQueries instances, const DecoderContext& ctx,
                         const DecoderLayerParams& params, const StageFlags& flags);

struct DecoderOutput {
  SceneVolume scene;
  InstanceQueries instances;
  std::vector<Tensor> intermediates;  // scene embeddings after each layer
};

DecoderOutput run_decoder_stack(SceneVolume scene, InstanceQueries instances,
                                const DecoderContext& ctx,
                                const std::vector<DecoderLayerParams>& layers,
                                const StageFlags& flags);

/// ASPP-lite (identity + dilated convs, summed, channel-mixed), per-voxel
/// classifier, then align-corners upsampling of the logits.
Tensor prediction_head(const Tensor& scene_feats, const HeadParams& head,
                       std::size_t upsample_factor);

struct ForwardResult {
  Tensor logits;                   // [fX, fY, fZ, K]
  std::vector<Tensor> aux_logits;  // per decoder layer, decoder resolution
  SceneVolume initial_scene;       // before the proposal layer
  SceneVolume proposed_scene;      // after the proposal layer
  DecoderOutput decoder;
};

ForwardResult forward_pipeline(const PipelineConfig& config, const CameraModel& cam,
                               const DepthMap& depth, const MultiScaleFeatures& features,
                               const ModelParams& params);

}  // namespace ssc
