// Parallel kernels against the serial reference library at desk-scale shapes.
// Run with OMP_NUM_THREADS=<n> to vary the thread count.

#include <benchmark/benchmark.h>

#include <vector>

#include "ssc/attention.hpp"
#include "ssc/invariants.hpp"
#include "ssc/numerics.hpp"
#include "ssc/pipeline.hpp"
#include "ssc/random.hpp"
#include "ssc/reference.hpp"

namespace {

using namespace ssc;

constexpr std::size_t kChannels = 32;
constexpr std::size_t kHeads = 4;
constexpr std::size_t kPoints = 4;

struct Inputs {
  std::vector<Tensor> maps;  // three pyramid levels
  Tensor volume;             // 32x32x8 scene volume
  Tensor voxel_queries;
  Tensor ref2d, ref3d;
  DeformableAttnParams p2d, p3d;
  MultiHeadAttnParams mha;
  Tensor instances;
  Conv3d conv;
  Tensor logits;

  Inputs() {
    Rng rng(7);
    for (std::size_t l = 0; l < 3; ++l)
      maps.push_back(random_tensor({32u >> l, 64u >> l, kChannels}, rng));
    volume = random_tensor({32, 32, 8, kChannels}, rng);
    voxel_queries = random_tensor({2048, kChannels}, rng);
    ref2d = random_tensor({2048, 2}, rng, 0.0, 1.0);
    ref3d = random_tensor({2048, 3}, rng, 0.0, 1.0);
    p2d = random_deformable_params(kChannels, kHeads, 3, kPoints, 2, rng);
    p3d = random_deformable_params(kChannels, kHeads, 1, kPoints, 3, rng);
    mha = random_attn_params(kChannels, kHeads, rng);
    instances = random_tensor({8, kChannels}, rng);
    conv.dilation = 2;
    conv.weight = random_tensor({27, kChannels, kChannels}, rng, -0.1, 0.1);
    conv.bias.assign(kChannels, 0.0);
    logits = random_tensor({32, 32, 8, 20}, rng);
  }
};

const Inputs& inputs() {
  static const Inputs in;
  return in;
}

template <bool Ref>
void BM_Deformable2d(benchmark::State& state) {
  const auto& in = inputs();
  for (auto _ : state) {
    if constexpr (Ref)
      benchmark::DoNotOptimize(reference::deformable_attn_2d(in.p2d, in.voxel_queries, in.ref2d, in.maps));
    else
      benchmark::DoNotOptimize(deformable_attn_2d(in.p2d, in.voxel_queries, in.ref2d, in.maps));
  }
}

template <bool Ref>
void BM_Deformable3d(benchmark::State& state) {
  const auto& in = inputs();
  for (auto _ : state) {
    if constexpr (Ref)
      benchmark::DoNotOptimize(reference::deformable_attn_3d(in.p3d, in.voxel_queries, in.ref3d, in.volume));
    else
      benchmark::DoNotOptimize(deformable_attn_3d(in.p3d, in.voxel_queries, in.ref3d, in.volume));
  }
}

// Voxel queries attending to the instance set.
template <bool Ref>
void BM_CrossAttn(benchmark::State& state) {
  const auto& in = inputs();
  for (auto _ : state) {
    if constexpr (Ref)
      benchmark::DoNotOptimize(reference::cross_attn(in.mha, in.voxel_queries, in.instances, in.instances));
    else
      benchmark::DoNotOptimize(cross_attn(in.mha, in.voxel_queries, in.instances, in.instances));
  }
}

template <bool Ref>
void BM_Conv3d(benchmark::State& state) {
  const auto& in = inputs();
  for (auto _ : state) {
    if constexpr (Ref)
      benchmark::DoNotOptimize(reference::conv3d_same(in.volume, in.conv));
    else
      benchmark::DoNotOptimize(conv3d_same(in.volume, in.conv));
  }
}

template <bool Ref>
void BM_Upsample(benchmark::State& state) {
  const auto& in = inputs();
  for (auto _ : state) {
    if constexpr (Ref)
      benchmark::DoNotOptimize(reference::upsample_trilinear(in.logits, 2));
    else
      benchmark::DoNotOptimize(upsample_trilinear(in.logits, 2));
  }
}

}  // namespace

BENCHMARK(BM_Deformable2d<false>)->Name("deformable_2d/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Deformable2d<true>)->Name("deformable_2d/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Deformable3d<false>)->Name("deformable_3d/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Deformable3d<true>)->Name("deformable_3d/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CrossAttn<false>)->Name("cross_attn/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CrossAttn<true>)->Name("cross_attn/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3d<false>)->Name("conv3d/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3d<true>)->Name("conv3d/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Upsample<false>)->Name("upsample/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Upsample<true>)->Name("upsample/serial")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
