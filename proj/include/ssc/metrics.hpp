#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ssc/labels.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

// Per-voxel argmax over the last axis; ties go to the lowest class index.
VoxelLabels argmax_labels(const Tensor& logits);

/// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t k = 0) : num_classes(k), counts(k * k, 0) {}
  std::uint64_t operator()(std::size_t gt, std::size_t pred) const {
    return counts[gt * num_classes + pred];
  }
  std::uint64_t row_sum(std::size_t gt) const;
  std::uint64_t col_sum(std::size_t pred) const;
};

ConfusionMatrix confusion_matrix(const VoxelLabels& pred, const VoxelLabels& gt,
                                 std::size_t num_classes);

struct MetricReport {
  // nullopt when neither prediction nor ground truth has an occupied voxel.
  std::optional<double> occupancy_iou;
  // Mean over semantic classes (class 0 excluded) present in pred or gt.
  std::optional<double> miou;
  // Indexed by class id; nullopt for classes absent from both pred and gt.
  std::vector<std::optional<double>> class_iou;
};

MetricReport compute_metrics(const ConfusionMatrix& cm);

}  // namespace ssc
