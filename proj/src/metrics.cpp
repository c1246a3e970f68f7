#include "ssc/metrics.hpp"

#include <string>

#include "ssc/errors.hpp"

namespace ssc {

VoxelLabels argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_labels: logits must be [X, Y, Z, K]");
  if (logits.dim(3) > kIgnoreLabel) throw ShapeError("argmax_labels: too many classes");
  VoxelLabels out({logits.dim(0), logits.dim(1), logits.dim(2)});
  for (std::size_t i = 0; i < out.count(); ++i) {
    const auto z = logits.lane(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.size(); ++c) {
      if (z[c] > z[best]) best = c;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t gt) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < num_classes; ++p) s += (*this)(gt, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t s = 0;
  for (std::size_t g = 0; g < num_classes; ++g) s += (*this)(g, pred);
  return s;
}

ConfusionMatrix confusion_matrix(const VoxelLabels& pred, const VoxelLabels& gt,
                                 std::size_t num_classes) {
  if (pred.dims != gt.dims || pred.count() != gt.count()) {
    throw ShapeError("confusion_matrix: prediction and ground truth grids differ in shape");
  }
  gt.validate(num_classes);
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < gt.count(); ++i) {
    const std::uint8_t y = gt.labels[i];
    if (y == kIgnoreLabel) continue;
    const std::uint8_t p = pred.labels[i];
    if (p >= num_classes) {
      throw DomainError("confusion_matrix: predicted label " + std::to_string(p) + " at voxel " +
                        std::to_string(i) + " is not a valid class");
    }
    ++cm.counts[y * num_classes + p];
  }
  return cm;
}

MetricReport compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes;
  MetricReport r;
  r.class_iou.resize(k);

  std::uint64_t occ_tp = 0, occ_fp = 0, occ_fn = 0;
  for (std::size_t g = 0; g < k; ++g) {
    for (std::size_t p = 0; p < k; ++p) {
      const std::uint64_t n = cm(g, p);
      const bool g_occ = g != kEmptyClass, p_occ = p != kEmptyClass;
      if (g_occ && p_occ) occ_tp += n;
      else if (!g_occ && p_occ) occ_fp += n;
      else if (g_occ && !p_occ) occ_fn += n;
    }
  }
  if (occ_tp + occ_fp + occ_fn > 0) {
    r.occupancy_iou =
        static_cast<double>(occ_tp) / static_cast<double>(occ_tp + occ_fp + occ_fn);
  }

  double sum = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::uint64_t tp = cm(c, c);
    const std::uint64_t fn = cm.row_sum(c) - tp;
    const std::uint64_t fp = cm.col_sum(c) - tp;
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.class_iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
    if (c != kEmptyClass) {
      sum += *r.class_iou[c];
      ++included;
    }
  }
  if (included > 0) r.miou = sum / static_cast<double>(included);
  return r;
}

}  // namespace ssc
