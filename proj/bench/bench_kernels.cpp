// Per-point serial references against the batched kernels, the latter with
// OpenMP on and off.

#include <benchmark/benchmark.h>

#include "pns/bootstrap.hpp"
#include "pns/enn.hpp"
#include "pns/harness.hpp"

using namespace pns;

namespace {

constexpr std::size_t kPoints = 64;

struct Models {
  ExperimentConfig cfg;
  ReplicateData data;
  Checkpoint enn;
  Checkpoint anchored;
  std::optional<InfluenceModel> influence;
  Eigen::MatrixXd z_std;  // d x kPoints, anchored standardisation

  Models() {
    cfg.arch.hidden = 16;
    cfg.train.epochs = 5;
    cfg.enn.train.base.epochs = 5;
    cfg.enn.train.base.batch_size = 1024;
    cfg.enn.draws = 1000;
    const DataSource source = DataSource::from_config(cfg);
    data = replicate_data(source, 5000, 2500, kPoints, 1);
    enn = train_method(cfg, Method::enn, data.obs, data.exp, 1);
    anchored = train_method(cfg, Method::anchored, data.obs, data.exp, 1);
    InfluenceConfig ic = cfg.bootstrap.influence;
    ic.mode = InfluenceMode::last_layer;
    TrainConfig tc = cfg.train;
    influence = InfluenceModel::from_training(*anchored.anchored, data.obs, data.exp, tc, ic);
    z_std = anchored.anchored->standardizer.to_columns(data.test.z);
  }
};

const Models& models() {
  static const Models m;
  return m;
}

void BM_EnnPerPoint(benchmark::State& state) {
  const Models& m = models();
  const TrainedEnn& e = *m.enn.enn;
  for (auto _ : state) {
    for (Eigen::Index i = 0; i < m.data.test.z.rows(); ++i) {
      const Eigen::VectorXd row = m.data.test.z.row(i).transpose();
      const Eigen::VectorXd z = e.standardizer.apply({row.data(), static_cast<std::size_t>(row.size())});
      benchmark::DoNotOptimize(infer_interval(e.hyper, {z.data(), static_cast<std::size_t>(z.size())}, m.cfg.enn.draws, m.cfg.enn.quantile, 7));
    }
  }
}

void BM_EnnBatched(benchmark::State& state) {
  const Models& m = models();
  const bool parallel = state.range(0) != 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        infer_intervals(*m.enn.enn, m.data.test.z, m.cfg.enn.draws, m.cfg.enn.quantile, 7, parallel));
  }
}

void BM_MbPerPoint(benchmark::State& state) {
  const Models& m = models();
  for (auto _ : state) {
    for (Eigen::Index i = 0; i < m.z_std.cols(); ++i) {
      const Eigen::VectorXd z = m.z_std.col(i);
      const InfluenceCache cache = influence_functions(*m.influence, {z.data(), static_cast<std::size_t>(z.size())});
      const CriticalValues cv = mb_critical_values(cache, m.cfg.bootstrap.replicates, m.cfg.bootstrap.alpha, 7);
      benchmark::DoNotOptimize(mb_interval(cache, cv));
    }
  }
}

void BM_MbBatched(benchmark::State& state) {
  const Models& m = models();
  const bool parallel = state.range(0) != 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        mb_intervals(*m.influence, m.z_std, m.cfg.bootstrap.replicates, m.cfg.bootstrap.alpha, 7, parallel));
  }
}

}  // namespace

BENCHMARK(BM_EnnPerPoint)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnnBatched)->Arg(0)->Arg(1)->ArgName("openmp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MbPerPoint)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MbBatched)->Arg(0)->Arg(1)->ArgName("openmp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
