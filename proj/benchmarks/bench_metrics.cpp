#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "webedit/html.hpp"
#include "webedit/metrics.hpp"

namespace {

webedit::GrayImage noise(int w, int h, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  webedit::GrayImage g{w, h, {}};
  g.pixels.resize(static_cast<std::size_t>(w) * h);
  for (auto& p : g.pixels) p = u(rng);
  return g;
}

std::string page(int sections) {
  std::string s = "<!DOCTYPE html><html><head><title>Bench</title><style>body{margin:0}</style></head><body>";
  for (int i = 0; i < sections; ++i) {
    s += "<section class=\"card\" id=\"s" + std::to_string(i) + "\"><h2>Heading " + std::to_string(i) +
         "</h2><p>Some <b>text</b> with <a href=\"#\">a link</a>.</p><ul><li>one</li><li>two</li></ul></section>";
  }
  return s + "</body></html>";
}

}  // namespace

static void BM_Ssim(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto a = noise(side, side, 1);
  const auto b = noise(side, side, 2);
  for (auto _ : state) benchmark::DoNotOptimize(webedit::compute_ssim(a, b));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256)->Arg(800)->Unit(benchmark::kMillisecond);

static void BM_Parse(benchmark::State& state) {
  const std::string src = page(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(webedit::html::parse(src));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(src.size()));
}
BENCHMARK(BM_Parse)->Arg(10)->Arg(1000);

static void BM_Preservation(benchmark::State& state) {
  const std::string before = page(static_cast<int>(state.range(0)));
  std::string after = before;
  after.insert(after.find("<body>") + 6, "<div style=\"color:red\">added</div>");
  for (auto _ : state) benchmark::DoNotOptimize(webedit::structural_preservation(before, after));
}
BENCHMARK(BM_Preservation)->Arg(10)->Arg(1000);
BENCHMARK_MAIN();
