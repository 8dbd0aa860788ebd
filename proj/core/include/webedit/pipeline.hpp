#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "webedit/dataset.hpp"
#include "webedit/evaluation.hpp"
#include "webedit/llm_gateway.hpp"
#include "webedit/metrics.hpp"
#include "webedit/renderer.hpp"

namespace webedit {

enum class Stage { Ingest, Sample, Gen, Edit, Render, Verify, Filter, Export, Stats, Eval, ReviewServe };

std::string_view to_string(Stage stage);
Stage stage_from_string(std::string_view name);
/// The dataset-building stages in order (ingest through stats).
const std::vector<Stage>& build_stages();

struct RendererConfig {
  std::filesystem::path browser;  // empty: find_browser()
  std::size_t pool_size = 4;
  std::size_t recycle_after = 50;
  std::vector<std::string> allowlist;
  std::size_t max_document_bytes = 4 * 1024 * 1024;
  std::string pinned_font = "DejaVu Sans";
};

struct ReviewConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t sample_size = 50;
  std::filesystem::path static_dir;
  ReductionRule rule = ReductionRule::ConsensusRequired;
};

struct EvalConfig {
  std::filesystem::path cases;  // EvalCase records
  std::filesystem::path labels;  // ReviewLabel records for pass rates
  std::size_t split_eval = 0;  // when > 0, hold out this many dataset records
};

/// Every field has a default; paths in a config file resolve against the
/// file's directory.
struct RunConfig {
  std::string run_id = "run";
  std::filesystem::path corpus;
  std::string corpus_name = "corpus";
  std::size_t sample_size = 5;
  std::uint64_t seed = 0;
  std::size_t k = 5;
  int repair_rounds = 2;
  std::size_t max_seed_bytes = 512 * 1024;
  std::size_t workers = 4;  // concurrent items in gen/edit/render/verify
  Viewport viewport;
  SettlePolicy settle;
  RendererConfig renderer;
  std::map<ModelRole, ProviderConfig> providers;
  std::optional<EmbeddingConfig> embedding;
  SsimParams ssim;
  std::filesystem::path prompts_dir;
  std::filesystem::path exemplars;
  std::string export_template = "default";
  std::string token_estimator = "approx-b4";
  EvalConfig eval;
  ReviewConfig review;
};

/// Reads a JSON config; unknown keys are rejected with InputError.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir);
json to_json(const RunConfig& config);

struct StageSummary {
  Stage stage = Stage::Ingest;
  std::size_t processed = 0;  // items completed in this invocation
  std::size_t skipped = 0;  // items already complete from earlier invocations
  std::size_t failed = 0;  // items that failed in this invocation
  std::int64_t duration_ms = 0;
  json details = json::object();
};

json to_json(const StageSummary& summary);
std::string format_summary(const StageSummary& summary);

struct PipelineOptions {
  bool resume = false;  // retry items that failed earlier instead of keeping their failure
  std::shared_ptr<Renderer> renderer;  // overrides the browser renderer (tests)
  Clock* clock = nullptr;  // gateway clock, defaults to the steady clock
};

/// Runs stages over one run directory. Stages exchange data only through
/// files there, so any stage can be rerun or resumed on its own. Holds an
/// advisory lock on the directory for its lifetime.
class Pipeline {
 public:
  Pipeline(RunConfig config, std::filesystem::path run_dir, PipelineOptions options = {});
  ~Pipeline();

  StageSummary run(Stage stage);
  const RunConfig& config() const { return config_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }

  std::filesystem::path path(std::string_view relative) const { return run_dir_ / std::string(relative); }

 private:
  StageSummary ingest();
  StageSummary sample();
  StageSummary gen();
  StageSummary edit();
  StageSummary render();
  StageSummary verify();
  StageSummary filter();
  StageSummary export_dataset();
  StageSummary stats();
  StageSummary eval();
  StageSummary review_serve();

  /// Throws InputError when `role` has no provider configured.
  Gateway& gateway(ModelRole role);
  Renderer& renderer();
  const PromptTemplates& templates();
  void require(const std::filesystem::path& p) const;
  std::vector<EditCandidate> load_candidates(bool with_verdicts);
  void write_summary(const StageSummary& summary);

  RunConfig config_;
  std::filesystem::path run_dir_;
  PipelineOptions options_;
  int lock_fd_ = -1;
  std::unique_ptr<Gateway> gateway_;
  std::shared_ptr<Renderer> base_renderer_;
  std::unique_ptr<CachingRenderer> renderer_;
  std::optional<PromptTemplates> templates_;
};

}  // namespace webedit
