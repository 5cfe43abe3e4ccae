#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "nca/datagen.hpp"
#include "nca/mlp.hpp"

namespace {

using namespace nca;

const VehicleParams kP{};
const InputBounds kBox = InputBounds::defaults(kP);

const std::vector<datagen::Point>& label_points() {
  static const std::vector<datagen::Point> pts = [] {
    datagen::DatagenConfig cfg;
    cfg.n_x = 5;
    const datagen::HullRegion region(datagen::build_candidate_points(cfg, kBox, kP));
    return datagen::sample_region(region, 256, 7);
  }();
  return pts;
}

void BM_LabelSerial(benchmark::State& state) {
  datagen::DatagenConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(datagen::label_dataset_serial(label_points(), cfg, kBox, kP));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(label_points().size()));
}

void BM_LabelParallel(benchmark::State& state) {
  datagen::DatagenConfig cfg;
  cfg.workers = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(datagen::label_dataset(label_points(), cfg, kBox, kP));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(label_points().size()));
}

struct GradFixture {
  mlp::Model model{{4, 128, 128, 128, 5}, 3};
  mlp::Matrix x, y;
  explicit GradFixture(int batch) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    x.resize(4, batch);
    y.resize(5, batch);
    for (int j = 0; j < batch; ++j) {
      for (int i = 0; i < 4; ++i) x(i, j) = n(rng);
      for (int i = 0; i < 5; ++i) y(i, j) = n(rng);
    }
  }
};

void BM_GradientSerial(benchmark::State& state) {
  GradFixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mlp::loss_and_gradient_normalized(f.model, f.x, f.y));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GradientParallel(benchmark::State& state) {
  GradFixture f(static_cast<int>(state.range(0)));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(mlp::loss_and_gradient_parallel(f.model, f.x, f.y));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_LabelSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_LabelParallel)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_GradientSerial)->Arg(256)->Arg(4096)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_GradientParallel)
    ->ArgsProduct({{256, 4096}, {1, 2, 4, 8}})
    ->Unit(benchmark::kMicrosecond)
    ->UseRealTime();

BENCHMARK_MAIN();
