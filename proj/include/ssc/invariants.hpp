#pragma once

#include <cstdint>
#include <vector>

#include "ssc/attention.hpp"
#include "ssc/config.hpp"
#include "ssc/pipeline.hpp"
#include "ssc/random.hpp"
#include "ssc/report.hpp"
#include "ssc/scene.hpp"

namespace ssc {

// Fully random parameters (the standard initializers zero the offset and
// weight nets, which would leave most sampling paths untested).
DeformableAttnParams random_deformable_params(std::size_t embed_dim, std::size_t heads,
                                              std::size_t levels, std::size_t points,
                                              std::size_t coord_dim, Rng& rng);
MultiHeadAttnParams random_attn_params(std::size_t embed_dim, std::size_t heads, Rng& rng);
Tensor random_tensor(Tensor::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0);

InvariantResult check_geometry_round_trip(std::size_t points, std::uint64_t seed);
InvariantResult check_fov_mask(const CameraModel& cam, const VoxelGridSpec& grid);
InvariantResult check_proposal_order(const CameraModel& cam, const VoxelGridSpec& grid,
                                     const DepthMap& depth, std::uint64_t seed);

// One result per operation: deformable 2d, deformable 3d, cross, self.
std::vector<InvariantResult> check_attention_oracles(std::size_t trials, std::uint64_t seed);
InvariantResult check_degenerate_reduction(std::size_t trials, std::uint64_t seed);

// `inject_wrong_gradient` corrupts the analytic gradient before comparison.
InvariantResult check_sampling_gradients(std::size_t trials, std::uint64_t seed,
                                         bool inject_wrong_gradient = false);
InvariantResult check_cross_entropy_gradient(std::size_t trials, std::uint64_t seed,
                                             bool inject_wrong_gradient = false);
InvariantResult check_affinity_gradient(AffinityMode mode, std::size_t trials,
                                        std::uint64_t seed, bool inject_wrong_gradient = false);
// Passes when a deliberately wrong gradient is rejected.
InvariantResult check_negative_control(std::uint64_t seed);

InvariantResult check_perfect_prediction(std::uint64_t seed);
InvariantResult check_loss_report_identity(std::uint64_t seed);
InvariantResult check_metric_identity(std::uint64_t seed);
InvariantResult check_confusion_row_sums(std::size_t trials, std::uint64_t seed);

InvariantResult check_depth_consistency(const SyntheticScene& scene);
InvariantResult check_grid_round_trip(std::size_t trials, std::uint64_t seed);

InvariantResult check_fov_locality(const ForwardResult& result);
InvariantResult check_proposal_locality(const ForwardResult& result);
InvariantResult check_query_permutation(const PipelineConfig& config, const SyntheticScene& scene,
                                        const ModelParams& params, std::size_t permutations,
                                        std::uint64_t seed);
// Each single-stage ablation and the all-off layer against hand-composed stages.
std::vector<InvariantResult> check_stage_toggles(const PipelineConfig& config,
                                                 const SyntheticScene& scene,
                                                 const ModelParams& params);
// learnable / detached / none all run; none equals the scene-only stack.
InvariantResult check_query_modes(const PipelineConfig& config, const SyntheticScene& scene,
                                  const ModelParams& params);

struct SuiteOptions {
  std::uint64_t seed = 0;
  bool inject_wrong_gradient = false;
  std::size_t trials = 20;
  std::size_t permutations = 2;
};

std::vector<InvariantResult> run_invariant_suite(const RunConfig& config,
                                                 const SuiteOptions& options);

}  // namespace ssc
