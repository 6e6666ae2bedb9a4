#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "agnet/data.hpp"
#include "agnet/evaluation.hpp"
#include "agnet/model.hpp"
#include "agnet/training.hpp"

namespace {

agnet::TrainingSet desk_set() {
  const agnet::SyntheticData syn = agnet::generate_synthetic(agnet::SyntheticSpec{});
  std::vector<agnet::Tensor<float>> images;
  for (const agnet::Image& image : syn.images) images.push_back(agnet::to_tensor(image));
  return agnet::TrainingSet::build(syn.dataset, std::move(images));
}

// Random features; identities cycle over `ids`, cameras over 4.
agnet::FeatureSet random_features(std::size_t n, int dim, int ids, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> normal;
  agnet::FeatureSet set;
  set.dim = dim;
  set.values.resize(n * static_cast<std::size_t>(dim));
  for (float& v : set.values) v = normal(rng);
  for (std::size_t i = 0; i < n; ++i) {
    agnet::VehicleRecord r;
    r.vehicle_id = static_cast<int>(i) % ids;
    r.camera_id = static_cast<int>(i) % 4;
    set.meta.push_back(r);
  }
  return set;
}

void BM_ForwardBranch(benchmark::State& state) {
  const agnet::TrainingSet data = desk_set();
  const agnet::Model model = agnet::build_model(agnet::model_config_for(data, agnet::ModelConfig{}));
  for (auto _ : state) {
    auto out = model.forward_branch(data.images[0]);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_ForwardBranch)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const agnet::TrainingSet data = desk_set();
  agnet::Model model = agnet::build_model(agnet::model_config_for(data, agnet::ModelConfig{}));
  agnet::Velocity velocity = agnet::Velocity::zeros(model.config());
  agnet::TrainConfig config;
  config.batch_size = static_cast<int>(state.range(0));
  const auto batch = agnet::sample_pairs(data.dataset, config.batch_size, 0.5, 1);
  for (auto _ : state) {
    auto entry = agnet::train_step(model, velocity, data, batch, config, 0.001);
    benchmark::DoNotOptimize(entry);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DistanceMatrix(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const agnet::FeatureSet q = random_features(n / 4, 128, 50, 1);
  const agnet::FeatureSet g = random_features(n, 128, 50, 2);
  for (auto _ : state) {
    auto d = agnet::distance_matrix(q, g);
    benchmark::DoNotOptimize(d);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DistanceMatrix)->RangeMultiplier(2)->Range(256, 2048)->Complexity();

void BM_Evaluate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const agnet::FeatureSet q = random_features(n / 4, 128, 50, 3);
  const agnet::FeatureSet g = random_features(n, 128, 50, 4);
  for (auto _ : state) {
    auto report = agnet::evaluate(q, g, agnet::EvalOptions{});
    benchmark::DoNotOptimize(report);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Evaluate)->RangeMultiplier(2)->Range(256, 2048)->Complexity();

}  // namespace

BENCHMARK_MAIN();
