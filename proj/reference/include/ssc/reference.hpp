#pragma once

// Serial nested-loop implementations of the parallel kernels. They share no
// code with the optimized path beyond the parameter structs, and exist so
// tests and benchmarks have something independent to compare against.

#include <vector>

#include "ssc/attention.hpp"
#include "ssc/pipeline.hpp"
#include "ssc/tensor.hpp"

namespace ssc::reference {

Tensor linear_apply(const LinearMap& m, const Tensor& x);

Tensor deformable_attn_2d(const DeformableAttnParams& params, const Tensor& queries,
                          const Tensor& ref_points, const std::vector<Tensor>& features);
Tensor deformable_attn_3d(const DeformableAttnParams& params, const Tensor& queries,
                          const Tensor& ref_points, const Tensor& volume);
Tensor cross_attn(const MultiHeadAttnParams& params, const Tensor& q, const Tensor& k,
                  const Tensor& v);

Tensor conv3d_same(const Tensor& vol, const Conv3d& conv);
Tensor upsample_trilinear(const Tensor& vol, std::size_t factor);

}  // namespace ssc::reference
