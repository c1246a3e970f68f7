#pragma once

#include <optional>
#include <vector>

#include "ssc/labels.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

inline constexpr double kProbEps = 1e-8;

struct ClassWeights {
  std::vector<double> weights;

  void validate() const;
  static ClassWeights uniform(std::size_t num_classes);
};

/// w_c = 1 / log(1.02 + f_c), rescaled to mean 1.
ClassWeights class_weights_from_frequencies(const std::vector<double>& freqs);

struct LossWithGrad {
  double value = 0.0;
  Tensor grad;  // empty unless requested
};

enum class AffinityMode { semantic, geometric };

Tensor voxel_softmax(const Tensor& logits);

/// Mean over non-ignored voxels of -w[y] log softmax(z)[y]; gradient is
/// w.r.t. the logits.
LossWithGrad weighted_cross_entropy(const Tensor& logits, const VoxelLabels& labels,
                                    const ClassWeights& w, bool want_grad = true);

/// Soft precision / recall / specificity loss on per-voxel class
/// probabilities [..., K]. Classes absent from the ground truth are skipped;
/// the specificity term is skipped for a class covering every voxel. The
/// geometric mode collapses to empty (class 0) vs occupied (1 - p_empty).
/// Gradient is w.r.t. the probabilities.
LossWithGrad scene_class_affinity(const Tensor& probs, const VoxelLabels& labels,
                                  AffinityMode mode, bool want_grad = true);

struct LossComponents {
  double scal_geo = 0.0;
  double scal_sem = 0.0;
  double ce = 0.0;

  double sum() const { return scal_geo + scal_sem + ce; }
};

/// Composite loss for one logits volume plus its gradient w.r.t. the logits.
struct CompositeLoss {
  LossComponents parts;
  Tensor grad;
};
CompositeLoss composite_loss(const Tensor& logits, const VoxelLabels& labels,
                             const ClassWeights& w, bool want_grad);

struct LossReport {
  double total = 0.0;
  LossComponents final_parts;
  std::vector<double> aux_totals;
  std::optional<Tensor> grad;  // d total / d final logits

  // geo + sem + ce + 0.5 * sum(aux), evaluated in that order.
  static double compose(const LossComponents& parts, const std::vector<double>& aux);
};

/// Final loss plus 0.5-scaled auxiliary losses. Labels are majority-pooled to
/// each auxiliary resolution when it differs from the label grid.
LossReport total_loss(const Tensor& final_logits, const std::vector<Tensor>& aux_logits,
                      const VoxelLabels& labels, const ClassWeights& w, bool want_grad = false);

}  // namespace ssc
