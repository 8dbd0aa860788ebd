#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>

#include "webedit/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthesize and evaluate instruction-grounded HTML edit datasets"};
  std::string config_path;
  std::string run_dir;
  std::string stage_name = "all";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n, k;
  bool resume = false;
  bool verbose = false;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--run-dir", run_dir, "Run directory (default: runs/<run_id> next to the config)");
  app.add_option("--stage", stage_name,
                 "ingest, sample, gen, edit, render, verify, filter, export, stats, eval, review-serve, or all");
  app.add_option("--seed", seed, "Sampling seed");
  app.add_option("--n", n, "Number of seed pages to sample");
  app.add_option("--k", k, "Instructions per seed page");
  app.add_flag("--resume", resume, "Retry items that failed in earlier invocations");
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("webedit"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    webedit::RunConfig config = webedit::load_run_config(config_path);
    if (seed) config.seed = *seed;
    if (n) config.sample_size = *n;
    if (k) {
      if (*k == 0) throw webedit::InputError("--k must be positive");
      config.k = *k;
    }
    std::filesystem::path dir = run_dir;
    if (dir.empty()) dir = std::filesystem::absolute(config_path).parent_path() / "runs" / config.run_id;

    std::vector<webedit::Stage> stages;
    if (stage_name == "all") {
      stages = webedit::build_stages();
    } else {
      stages.push_back(webedit::stage_from_string(stage_name));
    }
    webedit::PipelineOptions options;
    options.resume = resume;
    webedit::Pipeline pipeline(std::move(config), dir, options);
    for (const auto stage : stages) std::cout << webedit::format_summary(pipeline.run(stage)) << std::flush;
    return kExitOk;
  } catch (const webedit::DependencyMissing& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const webedit::InputError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kExitInternal;
  }
}
