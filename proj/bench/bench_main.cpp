// Serial reference against the OpenMP kernels. Thread count follows
// OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "tripspeed/explain.hpp"
#include "tripspeed/extract.hpp"
#include "tripspeed/synth.hpp"
#include "tripspeed/util.hpp"

using namespace tripspeed;

namespace {

struct Corpus {
  Network net;
  std::string points;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    SynthConfig cfg;
    cfg.n_journeys = 3000;
    cfg.seed = 21;
    const auto dir = std::filesystem::temp_directory_path() / "tripspeed_bench";
    std::filesystem::create_directories(dir);
    const auto b = generate_synthetic(cfg, dir);
    Corpus out;
    out.net = load_network_file(b.network.string());
    std::ifstream in(b.points, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out.points = ss.str();
    return out;
  }();
  return c;
}

template <bool Parallel>
void BM_Extract(benchmark::State& state) {
  const auto& c = corpus();
  const NetworkIndex idx(c.net);
  std::size_t rows = 0;
  for (auto _ : state) {
    std::istringstream in(c.points);
    ExtractSinks sinks;
    sinks.on_features = [&](const JourneyFeatures&) { ++rows; };
    const auto r = Parallel ? extract_parallel(in, &idx, ExtractParams{}, sinks)
                            : extract_serial(in, &idx, ExtractParams{}, sinks);
    benchmark::DoNotOptimize(r);
  }
  state.counters["journeys/s"] = benchmark::Counter(static_cast<double>(rows), benchmark::Counter::kIsRate);
}

std::vector<double> clusters(std::size_t rows, std::size_t dims) {
  std::mt19937_64 rng(3);
  std::vector<double> v;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < dims; ++j) v.push_back((i % 4 == j % 4 ? 6.0 : 0.0) + normal01(rng));
  return v;
}

template <bool Parallel>
void BM_Tsne(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto data = clusters(rows, 12);
  TsneParams p;
  p.iterations = 300;
  for (auto _ : state) {
    auto e = Parallel ? tsne_embed(data, rows, 12, p) : tsne_embed_serial(data, rows, 12, p);
    benchmark::DoNotOptimize(e.coords.data());
  }
}

}  // namespace

BENCHMARK(BM_Extract<false>)->Name("extract/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Extract<true>)->Name("extract/parallel")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Tsne<false>)->Name("tsne/serial")->Arg(500)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Tsne<true>)->Name("tsne/parallel")->Arg(500)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
