#include "ssc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ssc/errors.hpp"
#include "ssc/numerics.hpp"

namespace ssc {

namespace {

void require_matching(const Tensor& t, const VoxelLabels& labels, const char* what) {
  if (t.rank() < 2 || t.lanes() != labels.count()) {
    throw ShapeError(std::string(what) + ": tensor " + shape_string(t.shape()) +
                     " does not match label grid of " + std::to_string(labels.count()) +
                     " voxels");
  }
  if (t.rank() == 4) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (t.dim(a) != labels.dims[a]) throw ShapeError(std::string(what) + ": spatial dims differ");
    }
  }
  labels.validate(t.lane_width());
}

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }
bool clamp_active(double p) { return p < kProbEps || p > 1.0 - kProbEps; }

// Order-independent sum of values in [kProbEps, 1]. Any such double is an
// integer multiple of 2^-79, so a 2^80 fixed-point accumulator is exact for
// up to 2^47 terms and the result does not depend on voxel order.
class ExactSum {
 public:
  void add(double v) { acc_ += static_cast<Int>(std::ldexp(v, kShift)); }
  double value() const { return std::ldexp(static_cast<double>(acc_), -kShift); }

 private:
  __extension__ using Int = __int128;
  static constexpr int kShift = 80;
  Int acc_ = 0;
};

// Soft-count accumulators for one class.
struct SoftCounts {
  ExactSum tp;            // sum p [y = c]
  ExactSum pred;          // sum p
  ExactSum tn;            // sum (1 - p) [y != c]
  std::size_t pos = 0;    // count [y = c]
  std::size_t neg = 0;    // count [y != c]
};

// Per-class loss term; also the partial derivatives for a voxel with
// y = c (d_pos) and y != c (d_neg), not yet divided by the class count.
struct ClassTerm {
  double value = 0.0;
  double d_pos = 0.0;
  double d_neg = 0.0;
};

ClassTerm class_term(const SoftCounts& s) {
  ClassTerm t;
  const auto pos = static_cast<double>(s.pos);
  const auto neg = static_cast<double>(s.neg);
  const double tp = s.tp.value(), pred = s.pred.value(), tn = s.tn.value();
  // precision and recall (class present by construction)
  t.value -= std::log(tp / pred);
  t.value -= std::log(tp / pos);
  t.d_pos += -2.0 / tp + 1.0 / pred;
  t.d_neg += 1.0 / pred;
  if (s.neg > 0) {
    t.value -= std::log(tn / neg);
    t.d_neg += 1.0 / tn;
  }
  return t;
}

}  // namespace

void ClassWeights::validate() const {
  if (weights.empty()) throw DomainError("class weights: empty");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw DomainError("class weights must be positive");
  }
}

ClassWeights ClassWeights::uniform(std::size_t num_classes) {
  return ClassWeights{std::vector<double>(num_classes, 1.0)};
}

ClassWeights class_weights_from_frequencies(const std::vector<double>& freqs) {
  if (freqs.empty()) throw DomainError("class_weights_from_frequencies: no classes");
  double total = 0.0;
  for (double f : freqs) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw DomainError("class frequencies must be >= 0");
    total += f;
  }
  if (total == 0.0) throw DomainError("class frequencies are all zero");
  ClassWeights w;
  w.weights.reserve(freqs.size());
  double sum = 0.0;
  for (double f : freqs) {
    w.weights.push_back(1.0 / std::log(1.02 + f));
    sum += w.weights.back();
  }
  const double mean = sum / static_cast<double>(freqs.size());
  for (double& v : w.weights) v /= mean;
  return w;
}

Tensor voxel_softmax(const Tensor& logits) {
  if (logits.rank() == 0) throw ShapeError("voxel_softmax: scalar input");
  return softmax(logits, logits.rank() - 1);
}

LossWithGrad weighted_cross_entropy(const Tensor& logits, const VoxelLabels& labels,
                                    const ClassWeights& w, bool want_grad) {
  require_matching(logits, labels, "weighted_cross_entropy");
  const std::size_t k = logits.lane_width();
  if (w.weights.size() != k) throw ShapeError("weighted_cross_entropy: weight count");
  w.validate();

  std::size_t valid = 0;
  for (auto y : labels.labels) valid += y != kIgnoreLabel;
  if (valid == 0) throw DomainError("weighted_cross_entropy: all voxels ignored");
  const double inv_n = 1.0 / static_cast<double>(valid);

  LossWithGrad out;
  if (want_grad) out.grad = Tensor(logits.shape());
  std::vector<double> p(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.count(); ++i) {
    const std::uint8_t y = labels.labels[i];
    if (y == kIgnoreLabel) continue;
    const auto z = logits.lane(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      p[c] = std::exp(z[c] - mx);
      denom += p[c];
    }
    const double log_p = z[y] - mx - std::log(denom);
    sum += -w.weights[y] * log_p;
    if (want_grad) {
      auto g = out.grad.lane(i);
      const double scale = w.weights[y] * inv_n;
      for (std::size_t c = 0; c < k; ++c) {
        g[c] = scale * (p[c] / denom - (c == y ? 1.0 : 0.0));
      }
    }
  }
  out.value = sum * inv_n;
  return out;
}

LossWithGrad scene_class_affinity(const Tensor& probs, const VoxelLabels& labels,
                                  AffinityMode mode, bool want_grad) {
  require_matching(probs, labels, "scene_class_affinity");
  const std::size_t k = probs.lane_width();
  const std::size_t n = labels.count();

  std::size_t valid = 0;
  for (auto y : labels.labels) valid += y != kIgnoreLabel;
  if (valid == 0) throw DomainError("scene_class_affinity: all voxels ignored");

  const bool geometric = mode == AffinityMode::geometric;
  const std::size_t classes = geometric ? 2 : k;

  // Class-c probability and label membership of voxel i.
  auto prob = [&](std::size_t i, std::size_t c) {
    if (!geometric) return clamp_prob(probs[i * k + c]);
    const double empty = clamp_prob(probs[i * k + kEmptyClass]);
    return c == 0 ? empty : 1.0 - empty;
  };
  auto is_class = [&](std::uint8_t y, std::size_t c) {
    if (!geometric) return y == c;
    return c == 0 ? y == kEmptyClass : y != kEmptyClass;
  };

  std::vector<SoftCounts> counts(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t y = labels.labels[i];
    if (y == kIgnoreLabel) continue;
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = prob(i, c);
      auto& s = counts[c];
      s.pred.add(p);
      if (is_class(y, c)) {
        s.tp.add(p);
        ++s.pos;
      } else {
        s.tn.add(1.0 - p);
        ++s.neg;
      }
    }
  }

  std::vector<ClassTerm> terms(classes);
  std::size_t active = 0;
  double sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c].pos == 0) continue;
    terms[c] = class_term(counts[c]);
    sum += terms[c].value;
    ++active;
  }

  LossWithGrad out;
  out.value = sum / static_cast<double>(active);
  if (!want_grad) return out;

  out.grad = Tensor(probs.shape());
  const double inv = 1.0 / static_cast<double>(active);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t y = labels.labels[i];
    if (y == kIgnoreLabel) continue;
    if (geometric) {
      if (clamp_active(probs[i * k + kEmptyClass])) continue;
      double d_empty = 0.0;
      for (std::size_t c = 0; c < 2; ++c) {
        if (counts[c].pos == 0) continue;
        const double d = is_class(y, c) ? terms[c].d_pos : terms[c].d_neg;
        d_empty += c == 0 ? d : -d;
      }
      out.grad[i * k + kEmptyClass] = d_empty * inv;
    } else {
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c].pos == 0 || clamp_active(probs[i * k + c])) continue;
        out.grad[i * k + c] = (is_class(y, c) ? terms[c].d_pos : terms[c].d_neg) * inv;
      }
    }
  }
  return out;
}

CompositeLoss composite_loss(const Tensor& logits, const VoxelLabels& labels,
                             const ClassWeights& w, bool want_grad) {
  const Tensor probs = voxel_softmax(logits);
  const auto geo = scene_class_affinity(probs, labels, AffinityMode::geometric, want_grad);
  const auto sem = scene_class_affinity(probs, labels, AffinityMode::semantic, want_grad);
  const auto ce = weighted_cross_entropy(logits, labels, w, want_grad);

  CompositeLoss out;
  out.parts = LossComponents{geo.value, sem.value, ce.value};
  if (!want_grad) return out;

  // Chain the probability gradients through the per-voxel softmax:
  // dL/dz_k = p_k (g_k - sum_j g_j p_j).
  out.grad = ce.grad;
  const std::size_t k = logits.lane_width();
  for (std::size_t i = 0; i < probs.lanes(); ++i) {
    const auto p = probs.lane(i);
    const auto gg = geo.grad.lane(i);
    const auto gs = sem.grad.lane(i);
    double dot = 0.0;
    for (std::size_t c = 0; c < k; ++c) dot += (gg[c] + gs[c]) * p[c];
    auto g = out.grad.lane(i);
    for (std::size_t c = 0; c < k; ++c) g[c] += p[c] * (gg[c] + gs[c] - dot);
  }
  return out;
}

double LossReport::compose(const LossComponents& parts, const std::vector<double>& aux) {
  double aux_sum = 0.0;
  for (double a : aux) aux_sum += a;
  return parts.scal_geo + parts.scal_sem + parts.ce + 0.5 * aux_sum;
}

LossReport total_loss(const Tensor& final_logits, const std::vector<Tensor>& aux_logits,
                      const VoxelLabels& labels, const ClassWeights& w, bool want_grad) {
  LossReport report;
  auto base = composite_loss(final_logits, labels, w, want_grad);
  report.final_parts = base.parts;
  for (const auto& aux : aux_logits) {
    if (aux.rank() != 4) throw ShapeError("total_loss: auxiliary logits must be [X, Y, Z, K]");
    const std::array<std::size_t, 3> dims{aux.dim(0), aux.dim(1), aux.dim(2)};
    const VoxelLabels pooled = downsample_labels(labels, dims);
    report.aux_totals.push_back(composite_loss(aux, pooled, w, false).parts.sum());
  }
  report.total = LossReport::compose(report.final_parts, report.aux_totals);
  if (want_grad) report.grad = std::move(base.grad);
  return report;
}

}  // namespace ssc
