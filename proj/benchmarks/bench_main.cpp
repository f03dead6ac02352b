#include <benchmark/benchmark.h>

#include "e2stn/model.hpp"
#include "e2stn/ops.hpp"
#include "e2stn/random.hpp"
#include "e2stn/training.hpp"
#include "e2stn/transfer.hpp"

using namespace e2stn;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool grad = false) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(shape, std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(32)->Arg(64);

// Multi-head attention over C=16 channels, batch 32, m=32, 4 heads.
void BM_Attention(benchmark::State& state) {
  Rng rng(2);
  const Tensor q = random_tensor({32, 16, 32}, rng), k = random_tensor({32, 16, 32}, rng),
               v = random_tensor({32, 16, 32}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(attention(q, k, v, 4));
}
BENCHMARK(BM_Attention);

void BM_Stylize(benchmark::State& state) {
  ModelConfig cfg;
  const Model model = make_model(cfg, false, 3);
  Rng rng(3);
  const Tensor xs = random_tensor({32, cfg.channels, cfg.bands}, rng),
               xt = random_tensor({32, cfg.channels, cfg.bands}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(stylize(xs, xt, *model.transfer, cfg.transfer));
}
BENCHMARK(BM_Stylize)->Unit(benchmark::kMillisecond);

// Forward plus backward of the joint loss at the default sizes; arg 1 is the
// classifier-only model.
void BM_JointLossStep(benchmark::State& state) {
  ModelConfig cfg;
  const bool ablation = state.range(0) != 0;
  Model model = make_model(cfg, ablation, 4);
  Rng rng(4);
  const SourceBatch batch{random_tensor({32, cfg.channels, cfg.bands}, rng), std::vector<std::size_t>(32, 1)};
  const Tensor target = random_tensor({32, cfg.channels, cfg.bands}, rng);
  const TrainConfig tc;
  for (auto _ : state) {
    model.store.zero_grad();
    const auto loss = joint_loss(model, batch, target, tc);
    loss.total.backward();
    benchmark::DoNotOptimize(loss.total.item());
  }
}
BENCHMARK(BM_JointLossStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
