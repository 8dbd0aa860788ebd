#include "webedit/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <functional>
#include <set>
#include <thread>

#include "webedit/corpus.hpp"
#include "webedit/digest.hpp"
#include "webedit/review_server.hpp"
#include "webedit/synthesis.hpp"
#include "webedit/verification.hpp"

namespace webedit {

namespace fs = std::filesystem;
using std::chrono::milliseconds;

DependencyMissing::DependencyMissing(const fs::path& path)
    : Error(fmt::format("missing input {}; run the stage that produces it first", path.string())), path_(path) {}

namespace {

constexpr std::pair<Stage, std::string_view> kStageNames[] = {
    {Stage::Ingest, "ingest"}, {Stage::Sample, "sample"}, {Stage::Gen, "gen"},       {Stage::Edit, "edit"},
    {Stage::Render, "render"}, {Stage::Verify, "verify"}, {Stage::Filter, "filter"}, {Stage::Export, "export"},
    {Stage::Stats, "stats"},   {Stage::Eval, "eval"},     {Stage::ReviewServe, "review-serve"},
};

}  // namespace

std::string_view to_string(Stage stage) {
  for (const auto& [s, name] : kStageNames) {
    if (s == stage) return name;
  }
  return "unknown";
}

Stage stage_from_string(std::string_view name) {
  for (const auto& [s, n] : kStageNames) {
    if (n == name) return s;
  }
  throw InputError(fmt::format("unknown stage '{}'", name));
}

const std::vector<Stage>& build_stages() {
  static const std::vector<Stage> stages{Stage::Ingest, Stage::Sample, Stage::Gen,    Stage::Edit,  Stage::Render,
                                         Stage::Verify, Stage::Filter, Stage::Export, Stage::Stats};
  return stages;
}

// ---- config -------------------------------------------------------------

namespace {

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw InputError(fmt::format("config: {} must be an object", where));
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw InputError(fmt::format("config: unknown key '{}' in {}", key, where));
    }
  }
}

fs::path resolve(const json& j, const char* key, const fs::path& base, const fs::path& fallback = {}) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  const fs::path p = j[key].get<std::string>();
  if (p.empty()) return {};
  return p.is_absolute() ? p : fs::absolute(base / p).lexically_normal();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception& e) {
    throw InputError(fmt::format("config: bad value for '{}': {}", key, e.what()));
  }
}

ProviderConfig provider_from_json(ModelRole role, const json& j, const fs::path& base) {
  check_keys(j, fmt::format("providers.{}", to_string(role)),
             {"kind", "endpoint", "model", "max_attempts", "rate_limit", "timeout", "temperature", "api_key_env",
              "transcript", "backoff_base_ms", "backoff_max_ms"});
  ProviderConfig p;
  p.role = role;
  p.kind = get_or<std::string>(j, "kind", p.kind);
  p.endpoint = get_or<std::string>(j, "endpoint", "");
  p.model_name = get_or<std::string>(j, "model", "");
  p.max_attempts = get_or<int>(j, "max_attempts", p.max_attempts);
  p.rate_limit_per_minute = get_or<double>(j, "rate_limit", p.rate_limit_per_minute);
  p.timeout_s = get_or<double>(j, "timeout", p.timeout_s);
  p.temperature = get_or<double>(j, "temperature", default_temperature(role));
  p.api_key_env = get_or<std::string>(j, "api_key_env", "");
  p.playback_transcript = resolve(j, "transcript", base);
  p.backoff_base = milliseconds(get_or<long long>(j, "backoff_base_ms", p.backoff_base.count()));
  p.backoff_max = milliseconds(get_or<long long>(j, "backoff_max_ms", p.backoff_max.count()));
  validate(p);
  if (p.kind == "http" && p.endpoint.empty()) {
    throw InputError(fmt::format("config: providers.{} needs an endpoint", to_string(role)));
  }
  if (p.kind == "playback" && p.playback_transcript.empty()) {
    throw InputError(fmt::format("config: providers.{} needs a transcript for playback", to_string(role)));
  }
  return p;
}

json provider_to_json(const ProviderConfig& p) {
  return {{"kind", p.kind},
          {"endpoint", p.endpoint},
          {"model", p.model_name},
          {"max_attempts", p.max_attempts},
          {"rate_limit", p.rate_limit_per_minute},
          {"timeout", p.timeout_s},
          {"temperature", p.temperature},
          {"api_key_env", p.api_key_env},
          {"transcript", p.playback_transcript.string()},
          {"backoff_base_ms", p.backoff_base.count()},
          {"backoff_max_ms", p.backoff_max.count()}};
}

}  // namespace

RunConfig run_config_from_json(const json& j, const fs::path& base) {
  check_keys(j, "config",
             {"run_id", "corpus", "corpus_name", "sample_size", "seed", "k", "repair_rounds", "max_seed_bytes",
              "workers", "viewport", "settle", "renderer", "providers", "embedding", "ssim", "prompts_dir",
              "exemplars", "export_template", "token_estimator", "eval", "review"});
  RunConfig c;
  c.run_id = get_or<std::string>(j, "run_id", c.run_id);
  c.corpus = resolve(j, "corpus", base);
  c.corpus_name = get_or<std::string>(j, "corpus_name", c.corpus_name);
  c.sample_size = get_or<std::size_t>(j, "sample_size", c.sample_size);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.k = get_or<std::size_t>(j, "k", c.k);
  c.repair_rounds = get_or<int>(j, "repair_rounds", c.repair_rounds);
  c.max_seed_bytes = get_or<std::size_t>(j, "max_seed_bytes", c.max_seed_bytes);
  c.workers = std::max<std::size_t>(1, get_or<std::size_t>(j, "workers", c.workers));
  if (j.contains("viewport")) {
    const json& v = j["viewport"];
    check_keys(v, "viewport", {"width", "height", "device_scale"});
    c.viewport.width = get_or<int>(v, "width", c.viewport.width);
    c.viewport.height = get_or<int>(v, "height", c.viewport.height);
    c.viewport.device_scale = get_or<double>(v, "device_scale", c.viewport.device_scale);
  }
  if (j.contains("settle")) {
    const json& s = j["settle"];
    check_keys(s, "settle", {"load_timeout_ms", "network_idle_ms", "idle_timeout_ms", "quiesce_ms"});
    c.settle.load_timeout = milliseconds(get_or<long long>(s, "load_timeout_ms", c.settle.load_timeout.count()));
    c.settle.network_idle = milliseconds(get_or<long long>(s, "network_idle_ms", c.settle.network_idle.count()));
    c.settle.idle_timeout = milliseconds(get_or<long long>(s, "idle_timeout_ms", c.settle.idle_timeout.count()));
    c.settle.quiesce = milliseconds(get_or<long long>(s, "quiesce_ms", c.settle.quiesce.count()));
  }
  if (j.contains("renderer")) {
    const json& r = j["renderer"];
    check_keys(r, "renderer",
               {"browser", "pool_size", "recycle_after", "allowlist", "max_document_bytes", "pinned_font"});
    c.renderer.browser = resolve(r, "browser", base);
    c.renderer.pool_size = get_or<std::size_t>(r, "pool_size", c.renderer.pool_size);
    c.renderer.recycle_after = get_or<std::size_t>(r, "recycle_after", c.renderer.recycle_after);
    c.renderer.allowlist = get_or<std::vector<std::string>>(r, "allowlist", {});
    c.renderer.max_document_bytes = get_or<std::size_t>(r, "max_document_bytes", c.renderer.max_document_bytes);
    c.renderer.pinned_font = get_or<std::string>(r, "pinned_font", c.renderer.pinned_font);
  }
  if (j.contains("providers")) {
    const json& p = j["providers"];
    check_keys(p, "providers", {"generator", "editor", "verifier"});
    for (const auto& [name, value] : p.items()) {
      const ModelRole role = model_role_from_string(name);
      c.providers[role] = provider_from_json(role, value, base);
    }
  }
  if (j.contains("embedding") && !j["embedding"].is_null()) {
    const json& e = j["embedding"];
    check_keys(e, "embedding", {"kind", "endpoint", "model", "dim", "timeout", "api_key_env", "transcript"});
    EmbeddingConfig ec;
    ec.kind = get_or<std::string>(e, "kind", ec.kind);
    ec.endpoint = get_or<std::string>(e, "endpoint", "");
    ec.model_name = get_or<std::string>(e, "model", "");
    ec.dim = get_or<std::size_t>(e, "dim", 0);
    ec.timeout_s = get_or<double>(e, "timeout", ec.timeout_s);
    ec.api_key_env = get_or<std::string>(e, "api_key_env", "");
    ec.transcript = resolve(e, "transcript", base);
    c.embedding = ec;
  }
  if (j.contains("ssim")) {
    const json& s = j["ssim"];
    check_keys(s, "ssim", {"window", "k1", "k2", "dynamic_range"});
    c.ssim.window = get_or<int>(s, "window", c.ssim.window);
    c.ssim.k1 = get_or<double>(s, "k1", c.ssim.k1);
    c.ssim.k2 = get_or<double>(s, "k2", c.ssim.k2);
    c.ssim.dynamic_range = get_or<double>(s, "dynamic_range", c.ssim.dynamic_range);
  }
  c.prompts_dir = resolve(j, "prompts_dir", base);
  c.exemplars = resolve(j, "exemplars", base);
  c.export_template = get_or<std::string>(j, "export_template", c.export_template);
  c.token_estimator = get_or<std::string>(j, "token_estimator", c.token_estimator);
  if (j.contains("eval")) {
    const json& e = j["eval"];
    check_keys(e, "eval", {"cases", "labels", "split_eval"});
    c.eval.cases = resolve(e, "cases", base);
    c.eval.labels = resolve(e, "labels", base);
    c.eval.split_eval = get_or<std::size_t>(e, "split_eval", 0);
  }
  if (j.contains("review")) {
    const json& r = j["review"];
    check_keys(r, "review", {"host", "port", "sample_size", "static_dir", "rule"});
    c.review.host = get_or<std::string>(r, "host", c.review.host);
    c.review.port = get_or<int>(r, "port", c.review.port);
    c.review.sample_size = get_or<std::size_t>(r, "sample_size", c.review.sample_size);
    c.review.static_dir = resolve(r, "static_dir", base);
    c.review.rule = reduction_rule_from_string(get_or<std::string>(r, "rule", "consensus-required"));
  }
  if (c.k == 0) throw InputError("config: k must be positive");
  make_token_estimator(c.token_estimator);
  ExportTemplate::builtin(c.export_template);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyMissing(path);
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError(fmt::format("config {} is not valid JSON: {}", path.string(), e.what()));
  }
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

json to_json(const RunConfig& c) {
  json providers = json::object();
  for (const auto& [role, p] : c.providers) providers[std::string(to_string(role))] = provider_to_json(p);
  json embedding = nullptr;
  if (c.embedding) {
    embedding = {{"kind", c.embedding->kind},     {"endpoint", c.embedding->endpoint},
                 {"model", c.embedding->model_name}, {"dim", c.embedding->dim},
                 {"timeout", c.embedding->timeout_s}, {"api_key_env", c.embedding->api_key_env},
                 {"transcript", c.embedding->transcript.string()}};
  }
  return {{"run_id", c.run_id},
          {"corpus", c.corpus.string()},
          {"corpus_name", c.corpus_name},
          {"sample_size", c.sample_size},
          {"seed", c.seed},
          {"k", c.k},
          {"repair_rounds", c.repair_rounds},
          {"max_seed_bytes", c.max_seed_bytes},
          {"workers", c.workers},
          {"viewport", {{"width", c.viewport.width}, {"height", c.viewport.height}, {"device_scale", c.viewport.device_scale}}},
          {"settle",
           {{"load_timeout_ms", c.settle.load_timeout.count()},
            {"network_idle_ms", c.settle.network_idle.count()},
            {"idle_timeout_ms", c.settle.idle_timeout.count()},
            {"quiesce_ms", c.settle.quiesce.count()}}},
          {"renderer",
           {{"browser", c.renderer.browser.string()},
            {"pool_size", c.renderer.pool_size},
            {"recycle_after", c.renderer.recycle_after},
            {"allowlist", c.renderer.allowlist},
            {"max_document_bytes", c.renderer.max_document_bytes},
            {"pinned_font", c.renderer.pinned_font}}},
          {"providers", providers},
          {"embedding", embedding},
          {"ssim", {{"window", c.ssim.window}, {"k1", c.ssim.k1}, {"k2", c.ssim.k2}, {"dynamic_range", c.ssim.dynamic_range}}},
          {"prompts_dir", c.prompts_dir.string()},
          {"exemplars", c.exemplars.string()},
          {"export_template", c.export_template},
          {"token_estimator", c.token_estimator},
          {"eval", {{"cases", c.eval.cases.string()}, {"labels", c.eval.labels.string()}, {"split_eval", c.eval.split_eval}}},
          {"review",
           {{"host", c.review.host},
            {"port", c.review.port},
            {"sample_size", c.review.sample_size},
            {"static_dir", c.review.static_dir.string()},
            {"rule", to_string(c.review.rule)}}}};
}

json to_json(const StageSummary& s) {
  return {{"stage", to_string(s.stage)}, {"processed", s.processed}, {"skipped", s.skipped},
          {"failed", s.failed},          {"duration_ms", s.duration_ms}, {"details", s.details}};
}

std::string format_summary(const StageSummary& s) {
  std::string out = fmt::format("stage: {}\nprocessed: {}\nskipped: {}\nfailed: {}\nduration_ms: {}\n",
                                to_string(s.stage), s.processed, s.skipped, s.failed, s.duration_ms);
  for (const auto& [key, value] : s.details.items()) {
    out += fmt::format("{}: {}\n", key, value.is_string() ? value.get<std::string>() : value.dump());
  }
  return out;
}

// ---- pipeline -----------------------------------------------------------

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

// Latest record per key; later lines supersede earlier ones.
std::map<std::string, json> latest_by(const fs::path& file, const char* key) {
  std::map<std::string, json> out;
  if (!fs::exists(file)) return out;
  for (auto& r : read_jsonl(file)) {
    std::string id = r.at(key).get<std::string>();
    out[std::move(id)] = std::move(r);
  }
  return out;
}

bool failed(const json& record) { return record.contains("error"); }

}  // namespace

Pipeline::Pipeline(RunConfig config, fs::path run_dir, PipelineOptions options)
    : config_(std::move(config)), run_dir_(fs::absolute(std::move(run_dir))), options_(std::move(options)) {
  fs::create_directories(run_dir_);
  const fs::path lock_path = run_dir_ / ".lock";
  lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) throw IoError(fmt::format("cannot open {}", lock_path.string()));
  if (flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw InputError(fmt::format("run directory {} is in use by another process", run_dir_.string()));
  }
  write_file_atomic(run_dir_ / "config.effective.json", to_json(config_).dump(2) + "\n");
  if (options_.renderer) base_renderer_ = options_.renderer;
}

Pipeline::~Pipeline() {
  renderer_.reset();
  base_renderer_.reset();
  if (lock_fd_ >= 0) {
    flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

void Pipeline::require(const fs::path& p) const {
  if (!fs::exists(p)) throw DependencyMissing(p);
}

Gateway& Pipeline::gateway(ModelRole role) {
  if (config_.providers.count(role) == 0) {
    throw InputError(fmt::format("config: no provider configured for the {} role", to_string(role)));
  }
  if (!gateway_) {
    fs::create_directories(path("transcripts"));
    gateway_ = std::make_unique<Gateway>(path("transcripts/gateway.jsonl"),
                                         options_.clock != nullptr ? *options_.clock : steady_clock());
    for (const auto& [role, pc] : config_.providers) gateway_->bind(pc, make_provider(pc));
  }
  return *gateway_;
}

Renderer& Pipeline::renderer() {
  if (!renderer_) {
    if (!base_renderer_) {
      BrowserRendererOptions o;
      if (!config_.renderer.browser.empty()) {
        o.browser = config_.renderer.browser;
      } else if (auto found = find_browser()) {
        o.browser = *found;
      } else {
        throw DependencyMissing({}, "no headless browser found; run webedit-fetch-browser, or set WEBEDIT_BROWSER "
                                    "or renderer.browser");
      }
      o.pool_size = config_.renderer.pool_size;
      o.recycle_after = config_.renderer.recycle_after;
      o.allowlist = config_.renderer.allowlist;
      o.max_document_bytes = config_.renderer.max_document_bytes;
      o.pinned_font = config_.renderer.pinned_font;
      o.temp_dir = path("tmp");
      base_renderer_ = std::make_shared<BrowserRenderer>(std::move(o));
    }
    renderer_ = std::make_unique<CachingRenderer>(*base_renderer_);
  }
  return *renderer_;
}

const PromptTemplates& Pipeline::templates() {
  if (!templates_) {
    templates_ = config_.prompts_dir.empty() ? PromptTemplates::defaults() : PromptTemplates::load(config_.prompts_dir);
  }
  return *templates_;
}

void Pipeline::write_summary(const StageSummary& s) {
  fs::create_directories(path("summaries"));
  write_file_atomic(path("summaries") / fmt::format("{}.txt", to_string(s.stage)), format_summary(s));
  JsonlAppender(path("summaries/stages.jsonl")).append(to_json(s));
}

StageSummary Pipeline::run(Stage stage) {
  const auto start = std::chrono::steady_clock::now();
  StageSummary s;
  switch (stage) {
    case Stage::Ingest: s = ingest(); break;
    case Stage::Sample: s = sample(); break;
    case Stage::Gen: s = gen(); break;
    case Stage::Edit: s = edit(); break;
    case Stage::Render: s = render(); break;
    case Stage::Verify: s = verify(); break;
    case Stage::Filter: s = filter(); break;
    case Stage::Export: s = export_dataset(); break;
    case Stage::Stats: s = stats(); break;
    case Stage::Eval: s = eval(); break;
    case Stage::ReviewServe: s = review_serve(); break;
  }
  s.stage = stage;
  s.duration_ms =
      std::chrono::duration_cast<milliseconds>(std::chrono::steady_clock::now() - start).count();
  write_summary(s);
  spdlog::info("{}: processed={} skipped={} failed={} ({} ms)", to_string(stage), s.processed, s.skipped, s.failed,
               s.duration_ms);
  return s;
}

StageSummary Pipeline::ingest() {
  if (config_.corpus.empty()) throw InputError("config: corpus is not set");
  if (!fs::is_directory(config_.corpus)) throw DependencyMissing(config_.corpus);
  IngestLimits limits;
  limits.max_bytes = config_.max_seed_bytes;
  limits.corpus_name = config_.corpus_name;
  const IngestResult r = ingest_corpus(config_.corpus, limits);
  fs::create_directories(path("corpus"));
  write_manifest(path("corpus/manifest.jsonl"), r.manifest);
  std::vector<json> rejected;
  for (const auto& x : r.rejections) rejected.push_back({{"path", x.path.string()}, {"reason", x.reason}});
  write_jsonl(path("corpus/rejected.jsonl"), rejected);
  StageSummary s;
  s.processed = r.manifest.entries.size();
  s.failed = r.rejections.size();
  s.details = {{"pages", r.manifest.entries.size()}, {"rejected", r.rejections.size()}};
  return s;
}

StageSummary Pipeline::sample() {
  require(path("corpus/manifest.jsonl"));
  const CorpusManifest manifest = read_manifest(path("corpus/manifest.jsonl"));
  const auto seeds = sample_seeds(manifest, config_.sample_size, config_.seed, config_.corpus_name);
  BlobStore blobs(path("blobs"));
  std::vector<json> records;
  for (const auto& seed : seeds) {
    records.push_back({{"id", seed.id},
                       {"source_ref", seed.source_ref},
                       {"byte_len", seed.byte_len},
                       {"html_sha256", blobs.put(seed.html, "html")}});
  }
  fs::create_directories(path("seeds"));
  write_jsonl(path("seeds/sample.jsonl"), records);
  StageSummary s;
  s.processed = seeds.size();
  s.details = {{"seed", config_.seed}, {"sample_size", config_.sample_size}, {"corpus_size", manifest.entries.size()}};
  return s;
}

namespace {

std::vector<SeedPage> load_sample(const fs::path& file, BlobStore& blobs) {
  std::vector<SeedPage> out;
  for (const auto& r : read_jsonl(file)) {
    SeedPage seed;
    seed.id = r.at("id").get<std::string>();
    seed.source_ref = r.value("source_ref", "");
    seed.html = blobs.get(r.at("html_sha256").get<std::string>(), "html");
    seed.byte_len = seed.html.size();
    out.push_back(std::move(seed));
  }
  return out;
}

}  // namespace

StageSummary Pipeline::gen() {
  require(path("seeds/sample.jsonl"));
  BlobStore blobs(path("blobs"));
  const auto seeds = load_sample(path("seeds/sample.jsonl"), blobs);
  const fs::path out_file = path("instructions/generation.jsonl");
  fs::create_directories(out_file.parent_path());
  const auto existing = latest_by(out_file, "seed_id");

  std::vector<const SeedPage*> todo;
  StageSummary s;
  for (const auto& seed : seeds) {
    auto it = existing.find(seed.id);
    if (it != existing.end() && !(options_.resume && failed(it->second))) {
      ++s.skipped;
      continue;
    }
    todo.push_back(&seed);
  }
  if (!todo.empty()) {
    const ExemplarSet exemplars = config_.exemplars.empty() ? ExemplarSet::defaults() : ExemplarSet::load(config_.exemplars);
    exemplars.validate();
    Gateway& gw = gateway(ModelRole::InstructionGenerator);
    const PromptTemplates& tmpl = templates();
    JsonlAppender out(out_file);
    std::atomic<std::size_t> ok{0}, bad{0}, short_seeds{0};
    SynthesisOptions opts{config_.k, config_.repair_rounds};
    parallel_for(todo.size(), config_.workers, [&](std::size_t i) {
      const SeedPage& seed = *todo[i];
      try {
        const GenerationResult g = generate_instructions(seed, exemplars, gw, tmpl, opts);
        json instructions = json::array();
        for (const auto& ins : g.instructions) instructions.push_back(to_json(ins));
        out.append({{"seed_id", seed.id},
                    {"instructions", std::move(instructions)},
                    {"short_result", g.short_result},
                    {"rejected", g.rejected},
                    {"rounds", g.rounds}});
        ++ok;
        if (g.short_result) ++short_seeds;
      } catch (const Error& e) {
        spdlog::warn("gen: seed {} failed: {}", seed.id, e.what());
        out.append({{"seed_id", seed.id}, {"error", e.what()}});
        ++bad;
      }
    });
    s.processed = ok;
    s.failed = bad;
    s.details["short_seeds"] = short_seeds.load();
  }
  return s;
}

namespace {

// Instructions in sample order, then generation order.
std::vector<EditInstruction> ordered_instructions(const std::vector<SeedPage>& seeds,
                                                  const std::map<std::string, json>& generation) {
  std::vector<EditInstruction> out;
  for (const auto& seed : seeds) {
    auto it = generation.find(seed.id);
    if (it == generation.end() || failed(it->second)) continue;
    for (const auto& j : it->second.at("instructions")) out.push_back(instruction_from_json(j));
  }
  return out;
}

}  // namespace

StageSummary Pipeline::edit() {
  require(path("instructions/generation.jsonl"));
  BlobStore blobs(path("blobs"));
  const auto seeds = load_sample(path("seeds/sample.jsonl"), blobs);
  std::map<std::string, const SeedPage*> seed_by_id;
  for (const auto& seed : seeds) seed_by_id[seed.id] = &seed;
  const auto instructions = ordered_instructions(seeds, latest_by(path("instructions/generation.jsonl"), "seed_id"));

  const fs::path out_file = path("edits/edits.jsonl");
  fs::create_directories(out_file.parent_path());
  const auto existing = latest_by(out_file, "candidate_id");
  std::vector<const EditInstruction*> todo;
  StageSummary s;
  for (const auto& ins : instructions) {
    auto it = existing.find(candidate_id_for(ins));
    if (it != existing.end() && !(options_.resume && failed(it->second))) {
      ++s.skipped;
      continue;
    }
    todo.push_back(&ins);
  }
  if (!todo.empty()) {
    Gateway& gw = gateway(ModelRole::Editor);
    const PromptTemplates& tmpl = templates();
    JsonlAppender out(out_file);
    std::atomic<std::size_t> ok{0}, bad{0}, invalid{0};
    parallel_for(todo.size(), config_.workers, [&](std::size_t i) {
      const EditInstruction& ins = *todo[i];
      const SeedPage& seed = *seed_by_id.at(ins.seed_id);
      json record = {{"candidate_id", candidate_id_for(ins)}, {"seed_id", ins.seed_id}, {"instruction", to_json(ins)}};
      try {
        const EditedDocument doc = apply_edit(seed, ins, gw, tmpl);
        record["html_sha256"] = doc.html.empty() ? json(nullptr) : json(blobs.put(doc.html, "html"));
        record["validation"] = to_json(doc.validation);
        if (!doc.validation.parse_ok) ++invalid;
        ++ok;
      } catch (const Error& e) {
        spdlog::warn("edit: {} failed: {}", record["candidate_id"].get<std::string>(), e.what());
        record["html_sha256"] = nullptr;
        record["validation"] = to_json(ValidationReport{});
        record["error"] = e.what();
        ++bad;
      }
      out.append(record);
    });
    s.processed = ok;
    s.failed = bad;
    s.details["invalid_html"] = invalid.load();
  }
  return s;
}

std::vector<EditCandidate> Pipeline::load_candidates(bool with_verdicts) {
  BlobStore blobs(path("blobs"));
  const auto seeds = load_sample(path("seeds/sample.jsonl"), blobs);
  std::map<std::string, const SeedPage*> seed_by_id;
  for (const auto& seed : seeds) seed_by_id[seed.id] = &seed;
  const auto instructions = ordered_instructions(seeds, latest_by(path("instructions/generation.jsonl"), "seed_id"));
  const auto edits = latest_by(path("edits/edits.jsonl"), "candidate_id");
  const auto renders = latest_by(path("renders/renders.jsonl"), "candidate_id");
  const auto verdicts = with_verdicts ? latest_by(path("verdicts/verdicts.jsonl"), "candidate_id")
                                      : std::map<std::string, json>{};
  std::vector<EditCandidate> out;
  for (const auto& ins : instructions) {
    const std::string id = candidate_id_for(ins);
    auto e = edits.find(id);
    if (e == edits.end()) continue;
    EditCandidate c;
    c.instruction = ins;
    c.original_html = seed_by_id.at(ins.seed_id)->html;
    c.edited.candidate_id = id;
    c.edited.seed_id = ins.seed_id;
    c.edited.instruction_id = ins.id;
    c.edited.validation = validation_report_from_json(e->second.at("validation"));
    if (e->second.contains("html_sha256") && !e->second["html_sha256"].is_null()) {
      c.edited.html = blobs.get(e->second["html_sha256"].get<std::string>(), "html");
    }
    if (auto r = renders.find(id); r != renders.end()) {
      const json& rec = r->second;
      c.render_failed = rec.value("render_failed", false);
      c.failure = rec.value("error", "");
      c.original_shot = rec.value("original_shot", "");
      c.modified_shot = rec.value("modified_shot", "");
      c.hidden_edit = rec.value("hidden_edit", false);
      if (rec.contains("scores")) c.scores = candidate_scores_from_json(rec["scores"]);
    }
    if (auto v = verdicts.find(id); v != verdicts.end()) {
      const json& rec = v->second;
      if (rec.contains("verdict")) {
        c.verdict = verdict_from_json(rec["verdict"]);
      } else {
        c.verify_failed = true;
        c.failure = rec.value("error", "");
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

StageSummary Pipeline::render() {
  require(path("edits/edits.jsonl"));
  auto candidates = load_candidates(false);
  const fs::path out_file = path("renders/renders.jsonl");
  fs::create_directories(out_file.parent_path());
  const auto existing = latest_by(out_file, "candidate_id");
  StageSummary s;
  std::vector<EditCandidate*> todo;
  std::size_t invalid = 0;
  for (auto& c : candidates) {
    if (!c.edited.validation.parse_ok) {
      ++invalid;  // never sent to the browser
      continue;
    }
    auto it = existing.find(c.id());
    if (it != existing.end() && !(options_.resume && it->second.value("render_failed", false))) {
      ++s.skipped;
      continue;
    }
    todo.push_back(&c);
  }
  if (!todo.empty()) {
    Renderer& r = renderer();
    BlobStore blobs(path("blobs"));
    std::unique_ptr<EmbeddingCache> embeddings;
    if (config_.embedding) {
      EmbeddingConfig ec = *config_.embedding;
      if (ec.kind == "http" && ec.transcript.empty()) ec.transcript = path("transcripts/embeddings.jsonl");
      embeddings = std::make_unique<EmbeddingCache>(make_embedding_provider(ec), ec.dim);
    }
    JsonlAppender out(out_file);
    std::atomic<std::size_t> ok{0}, bad{0};
    parallel_for(todo.size(), config_.workers, [&](std::size_t i) {
      EditCandidate& c = *todo[i];
      json record = {{"candidate_id", c.id()}};
      try {
        const RenderedPair pair =
            render_pair(r, c.original_html, c.edited.html, config_.viewport, config_.settle, &blobs);
        CandidateScores scores;
        scores.ssim = compute_ssim(pair.original.image, pair.modified.image, config_.ssim).clamped();
        scores.preservation = structural_preservation(c.original_html, c.edited.html).score;
        if (embeddings) {
          try {
            scores.embed_sim = embed_similarity(embeddings->embed(pair.original.png), embeddings->embed(pair.modified.png));
          } catch (const Error& e) {
            spdlog::warn("render: embedding for {} unavailable: {}", c.id(), e.what());
            scores.embed_missing = true;
          }
        } else {
          scores.embed_missing = true;
        }
        record["render_failed"] = false;
        record["original_shot"] = pair.original.sha256;
        record["modified_shot"] = pair.modified.sha256;
        record["hidden_edit"] = pair.original.sha256 == pair.modified.sha256 && c.original_html != c.edited.html;
        record["settle_timed_out"] = pair.original.settle_timed_out || pair.modified.settle_timed_out;
        record["settle_policy_id"] = pair.modified.settle_policy_id;
        record["viewport"] = {{"width", config_.viewport.width},
                              {"height", config_.viewport.height},
                              {"device_scale", config_.viewport.device_scale}};
        record["scores"] = to_json(scores);
        ++ok;
      } catch (const RenderFailed& e) {
        spdlog::warn("render: {} failed: {}", c.id(), e.what());
        record["render_failed"] = true;
        record["error"] = e.what();
        ++bad;
      }
      out.append(record);
    });
    s.processed = ok;
    s.failed = bad;
  }
  s.details["invalid_html"] = invalid;
  return s;
}

StageSummary Pipeline::verify() {
  require(path("renders/renders.jsonl"));
  auto candidates = load_candidates(false);
  const fs::path out_file = path("verdicts/verdicts.jsonl");
  fs::create_directories(out_file.parent_path());
  const auto existing = latest_by(out_file, "candidate_id");
  StageSummary s;
  std::vector<EditCandidate*> todo;
  for (auto& c : candidates) {
    if (!c.edited.validation.parse_ok || c.render_failed || c.modified_shot.empty()) continue;
    auto it = existing.find(c.id());
    if (it != existing.end() && !(options_.resume && failed(it->second))) {
      ++s.skipped;
      continue;
    }
    todo.push_back(&c);
  }
  if (!todo.empty()) {
    Gateway& gw = gateway(ModelRole::Verifier);
    const PromptTemplates& tmpl = templates();
    BlobStore blobs(path("blobs"));
    JsonlAppender out(out_file);
    std::atomic<std::size_t> ok{0}, bad{0};
    parallel_for(todo.size(), config_.workers, [&](std::size_t i) {
      EditCandidate& c = *todo[i];
      json record = {{"candidate_id", c.id()}};
      try {
        const Verdict v = verify_edit(c.id(), c.instruction, blobs.get(c.original_shot, "png"),
                                      blobs.get(c.modified_shot, "png"), gw, tmpl);
        record["verdict"] = to_json(v);
        ++ok;
      } catch (const Error& e) {
        spdlog::warn("verify: {} failed: {}", c.id(), e.what());
        record["error"] = e.what();
        ++bad;
      }
      out.append(record);
    });
    s.processed = ok;
    s.failed = bad;
  }
  return s;
}

StageSummary Pipeline::filter() {
  require(path("verdicts/verdicts.jsonl"));
  const auto candidates = load_candidates(true);
  const FilterResult fr = filter_accepted(candidates);

  BlobStore seed_blobs(path("blobs"));
  std::map<std::string, std::string> seed_html;
  for (auto& seed : load_sample(path("seeds/sample.jsonl"), seed_blobs)) seed_html[seed.id] = std::move(seed.html);
  DatasetStore store(run_dir_, [&](const std::string& id) -> std::optional<std::string> {
    auto it = seed_html.find(id);
    return it == seed_html.end() ? std::nullopt : std::optional<std::string>(it->second);
  });
  StageSummary s;
  for (std::size_t idx : fr.accepted) {
    const EditCandidate& c = candidates[idx];
    if (store.contains(c.id())) {
      ++s.skipped;
      continue;
    }
    DatasetRecord r;
    r.id = c.id();
    r.instruction = c.instruction;
    r.original_html = c.original_html;
    r.modified_html = c.edited.html;
    r.original_shot = c.original_shot;
    r.modified_shot = c.modified_shot;
    r.scores = c.scores;
    r.verdict = *c.verdict;
    r.pipeline_run_id = config_.run_id;
    store.store(r);
    ++s.processed;
  }
  if (!fs::exists(store.index_path())) write_file_atomic(store.index_path(), "");

  std::vector<json> outcomes;
  for (const auto& c : candidates) {
    json o = {{"candidate_id", c.id()}, {"outcome", to_string(classify(c))}};
    if (!c.failure.empty()) o["error"] = c.failure;
    if (c.hidden_edit) o["hidden_edit"] = true;
    outcomes.push_back(std::move(o));
  }
  fs::create_directories(path("filter"));
  write_jsonl(path("filter/outcomes.jsonl"), outcomes);
  write_file_atomic(path("filter/stats.json"), to_json(fr.stats).dump(2) + "\n");
  s.details = to_json(fr.stats);
  return s;
}

StageSummary Pipeline::export_dataset() {
  require(path("dataset/index.jsonl"));
  DatasetStore store(run_dir_);
  const ExportManifest m =
      export_training(store, ExportTemplate::builtin(config_.export_template), path("export/train.jsonl"));
  StageSummary s;
  s.processed = m.count;
  s.details = {{"template", m.template_id}, {"sha256", m.sha256}, {"file", m.path.string()}};
  return s;
}

namespace {

std::map<std::string, Decision> automatic_decisions(const std::vector<ReviewCase>& cases) {
  std::map<std::string, Decision> out;
  for (const auto& c : cases) {
    if (c.automatic) out.emplace(c.id, *c.automatic);
  }
  return out;
}

std::vector<ReviewCase> load_review_cases(const fs::path& file) {
  std::vector<ReviewCase> out;
  for (const auto& j : read_jsonl(file)) out.push_back(review_case_from_json(j));
  return out;
}

}  // namespace

StageSummary Pipeline::stats() {
  require(path("filter/stats.json"));
  const AcceptanceStats acceptance = acceptance_stats_from_json(json::parse(read_file(path("filter/stats.json"))));
  DatasetStore store(run_dir_);
  const auto records = store.records();
  json summary = {{"run_id", config_.run_id}, {"acceptance", to_json(acceptance)}, {"dataset_records", records.size()}};
  std::string text = format_stats_table(acceptance);
  text += fmt::format("{:<18}{:>8}\n", "dataset_records", records.size());
  if (!records.empty()) {
    const auto estimator = make_token_estimator(config_.token_estimator);
    const TokenStats t = compute_token_stats(records, *estimator);
    summary["tokens"] = {{"estimator", t.estimator_id}, {"mean", t.mean}, {"median", t.median}, {"max", t.max}};
    text += fmt::format("tokens ({}): mean {:.1f}, median {:.1f}, max {}\n", t.estimator_id, t.mean, t.median, t.max);
  }
  fs::create_directories(path("stats"));
  if (fs::exists(path("review/labels.jsonl")) && fs::exists(path("review/cases.jsonl"))) {
    const LabelStore labels(path("review/labels.jsonl"));
    const json agreement = agreement_summary(labels.labels(), automatic_decisions(load_review_cases(path("review/cases.jsonl"))),
                                             config_.review.rule);
    write_file_atomic(path("stats/agreement.json"), agreement.dump());
    summary["agreement"] = agreement;
    if (!agreement["kappa"].is_null()) {
      text += fmt::format("kappa: {:.4f} ({}), n={}\n", agreement["kappa"]["kappa"].get<double>(),
                          agreement["kappa"]["band"].get<std::string>(), agreement["kappa"]["n"].get<std::size_t>());
    }
    if (!agreement["human_auto"].is_null()) {
      text += fmt::format("human/verifier agreement: {}/{}\n", agreement["human_auto"]["matched"].get<std::size_t>(),
                          agreement["human_auto"]["n"].get<std::size_t>());
    }
  }
  write_file_atomic(path("stats/summary.txt"), text);
  write_file_atomic(path("stats/summary.jsonl"), summary.dump() + "\n");
  StageSummary s;
  s.processed = records.size();
  s.details = summary;
  return s;
}

StageSummary Pipeline::eval() {
  if (config_.eval.cases.empty()) throw InputError("config: eval.cases is not set");
  require(config_.eval.cases);
  const auto cases = read_eval_cases(config_.eval.cases);
  std::unique_ptr<EmbeddingCache> embeddings;
  if (config_.embedding) {
    embeddings = std::make_unique<EmbeddingCache>(make_embedding_provider(*config_.embedding), config_.embedding->dim);
  }
  RenderingScorer scorer(renderer(), config_.viewport, config_.settle, config_.ssim, embeddings.get());
  const EvalTable table = evaluate_models(cases, scorer);
  fs::create_directories(path("eval"));
  write_file_atomic(path("eval/metrics.txt"), format_eval_table(table));
  write_file_atomic(path("eval/metrics.jsonl"), eval_table_jsonl(table));
  StageSummary s;
  s.processed = cases.size();
  for (const auto& row : table.rows) s.failed += row.excluded;
  if (!config_.eval.labels.empty()) {
    require(config_.eval.labels);
    std::vector<ReviewLabel> labels;
    std::set<std::string> models;
    for (const auto& j : read_jsonl(config_.eval.labels)) {
      labels.push_back(review_label_from_json(j));
      models.insert(labels.back().model_id);
    }
    std::vector<PassRate> rows;
    for (const auto& m : models) rows.push_back(pass_rate(labels, m, config_.review.rule));
    write_file_atomic(path("eval/pass_rates.txt"), format_pass_rate_table(rows));
    write_file_atomic(path("eval/pass_rates.jsonl"), pass_rate_jsonl(rows));
  }
  if (config_.eval.split_eval > 0) {
    require(path("dataset/index.jsonl"));
    std::vector<std::string> ids;
    for (const auto& r : read_jsonl(path("dataset/index.jsonl"))) ids.push_back(r.at("id").get<std::string>());
    const EvalSplit split = split_eval(ids, config_.eval.split_eval, config_.seed);
    write_file_atomic(path("eval/split.json"), json({{"train", split.train}, {"eval", split.eval}}).dump(2) + "\n");
  }
  return s;
}

StageSummary Pipeline::review_serve() {
  require(path("dataset/index.jsonl"));
  fs::create_directories(path("review"));
  DatasetStore store(run_dir_);
  if (!fs::exists(path("review/cases.jsonl"))) {
    const auto records = store.records();
    const auto order = seeded_permutation(records.size(), config_.seed);
    const std::size_t n = std::min(config_.review.sample_size, records.size());
    std::vector<json> cases;
    for (std::size_t i = 0; i < n; ++i) {
      const DatasetRecord& r = records[order[i]];
      ReviewCase c;
      c.id = r.id;
      c.instruction = r.instruction.text;
      c.before_shot = r.original_shot;
      c.after_shot = r.modified_shot;
      c.original_html = r.original_html;
      c.modified_html = r.modified_html;
      c.automatic = r.verdict.decision;
      cases.push_back(to_json(c));
    }
    write_jsonl(path("review/cases.jsonl"), cases);
  }
  const auto cases = load_review_cases(path("review/cases.jsonl"));
  LabelStore labels(path("review/labels.jsonl"));
  ReviewServerOptions o;
  o.host = config_.review.host;
  o.port = config_.review.port;
  o.static_dir = config_.review.static_dir;
  o.rule = config_.review.rule;
  ReviewServer server(cases, labels, store.blobs(), o);
  server.run();
  StageSummary s;
  s.processed = labels.labels().size();
  s.details = {{"cases", cases.size()}};
  return s;
}

}  // namespace webedit
