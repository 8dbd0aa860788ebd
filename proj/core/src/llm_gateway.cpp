#include "webedit/llm_gateway.hpp"

#include <fmt/format.h>

#include <cmath>
#include <thread>

#include "webedit/digest.hpp"

namespace webedit {

namespace fs = std::filesystem;

std::string_view to_string(ModelRole role) {
  switch (role) {
    case ModelRole::InstructionGenerator:
      return "generator";
    case ModelRole::Editor:
      return "editor";
    case ModelRole::Verifier:
      return "verifier";
  }
  return "unknown";
}

ModelRole model_role_from_string(std::string_view name) {
  if (name == "generator" || name == "instruction_generator") return ModelRole::InstructionGenerator;
  if (name == "editor") return ModelRole::Editor;
  if (name == "verifier") return ModelRole::Verifier;
  throw InputError(fmt::format("unknown model role '{}'", name));
}

double default_temperature(ModelRole role) {
  switch (role) {
    case ModelRole::InstructionGenerator:
      return 0.9;
    case ModelRole::Editor:
      return 0.2;
    case ModelRole::Verifier:
      return 0.0;
  }
  return 0.0;
}

std::string request_hash(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json images = json::array();
    for (const auto& img : m.images) images.push_back(img.media_type + ":" + sha256_hex(img.bytes));
    messages.push_back({{"author", m.author}, {"text", m.text}, {"images", std::move(images)}});
  }
  const json canonical = {{"role", to_string(request.role)}, {"messages", std::move(messages)}};
  return sha256_hex(canonical.dump());
}

void validate(const ProviderConfig& config) {
  if (config.max_attempts < 1) throw InputError("provider config: max_attempts must be >= 1");
  if (!(config.timeout_s > 0)) throw InputError("provider config: timeout must be > 0");
  if (config.temperature < 0) throw InputError("provider config: temperature must be >= 0");
  if (!(config.rate_limit_per_minute > 0)) throw InputError("provider config: rate_limit must be > 0");
}

RoleCallFailed::RoleCallFailed(ModelRole role, int last_status, const std::string& detail)
    : Error(fmt::format("{} call failed (last status {}): {}", to_string(role), last_status, detail)),
      role_(role),
      last_status_(last_status) {}

MissingRecording::MissingRecording(const std::string& hash)
    : Error(fmt::format("no recorded response for request {}", hash)), hash_(hash) {}

namespace {

class SteadyClock : public Clock {
 public:
  time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_until(time_point t) override { std::this_thread::sleep_until(t); }
};

}  // namespace

Clock& steady_clock() {
  static SteadyClock clock;
  return clock;
}

Clock::time_point ManualClock::now() {
  std::lock_guard lock(mutex_);
  return now_;
}

void ManualClock::sleep_until(time_point t) {
  std::lock_guard lock(mutex_);
  if (t > now_) {
    sleeps_.push_back(std::chrono::duration_cast<std::chrono::milliseconds>(t - now_));
    now_ = t;
  }
}

void ManualClock::advance(std::chrono::milliseconds d) {
  std::lock_guard lock(mutex_);
  now_ += d;
}

std::vector<std::chrono::milliseconds> ManualClock::sleeps() const {
  std::lock_guard lock(mutex_);
  return sleeps_;
}

RateLimiter::RateLimiter(double limit, std::chrono::milliseconds window, Clock& clock)
    : limit_(static_cast<std::size_t>(std::max(1.0, std::floor(limit)))), window_(window), clock_(clock) {}

Clock::time_point RateLimiter::acquire() {
  std::lock_guard lock(mutex_);
  auto now = clock_.now();
  while (!issued_.empty() && issued_.front() + window_ <= now) issued_.pop_front();
  if (issued_.size() >= limit_) {
    clock_.sleep_until(issued_.front() + window_);
    now = clock_.now();
    while (!issued_.empty() && issued_.front() + window_ <= now) issued_.pop_front();
  }
  issued_.push_back(now);
  return now;
}

Transcript::Transcript(fs::path path) : appender_(std::move(path)) {}

void Transcript::record(const std::string& hash, ModelRole role, int attempt, int status,
                        const std::string& response_text, const std::string& error) {
  const auto ts = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
  json rec = {{"request_hash", hash},   {"role", to_string(role)}, {"timestamp", ts},
              {"attempt", attempt},     {"status", status},        {"response_text", response_text}};
  if (!error.empty()) rec["error"] = error;
  appender_.append(rec);
}

PlaybackProvider::PlaybackProvider(const fs::path& transcript_path) {
  // read_jsonl reports the failing line number.
  for (const auto& rec : read_jsonl(transcript_path)) {
    if (!rec.is_object() || !rec.contains("request_hash") || !rec.contains("response_text")) {
      throw IoError(fmt::format("{}: transcript record missing request_hash/response_text",
                                transcript_path.string()));
    }
    if (rec.value("status", 200) != 200) continue;
    responses_[rec.at("request_hash").get<std::string>()] = rec.at("response_text").get<std::string>();
  }
}

ProviderReply PlaybackProvider::send(const ProviderConfig&, const ChatRequest& request) {
  const std::string hash = request_hash(request);
  auto it = responses_.find(hash);
  if (it == responses_.end()) return {kStatusMissingRecording, {}, {}, "missing recording"};
  return {200, it->second, {}, {}};
}

std::shared_ptr<Provider> make_provider(const ProviderConfig& config) {
  if (config.kind == "playback") return std::make_shared<PlaybackProvider>(config.playback_transcript);
  if (config.kind == "http") return std::make_shared<HttpProvider>();
  throw InputError(fmt::format("unknown provider kind '{}'", config.kind));
}

bool is_retryable_status(int status) {
  return status == kStatusTransportError || status == 408 || status == 429 || (status >= 500 && status < 600);
}

Gateway::Gateway(fs::path transcript_path, Clock& clock) : clock_(clock), transcript_(std::move(transcript_path)) {}

void Gateway::bind(const ProviderConfig& config, std::shared_ptr<Provider> provider) {
  validate(config);
  Binding b{config, std::move(provider),
            std::make_unique<RateLimiter>(config.rate_limit_per_minute, std::chrono::minutes(1), clock_)};
  bindings_[config.role] = std::move(b);
}

bool Gateway::bound(ModelRole role) const { return bindings_.count(role) > 0; }

const ProviderConfig& Gateway::config(ModelRole role) const {
  auto it = bindings_.find(role);
  if (it == bindings_.end()) throw InputError(fmt::format("no provider bound for role {}", to_string(role)));
  return it->second.config;
}

std::chrono::milliseconds Gateway::backoff_delay(const ProviderConfig& config, int attempt) {
  const double base = static_cast<double>(config.backoff_base.count()) * std::pow(2.0, attempt - 1);
  const double capped = std::min(base, static_cast<double>(config.backoff_max.count()));
  double jitter = 0;
  {
    std::lock_guard lock(rng_mutex_);
    jitter = std::uniform_real_distribution<double>(0.5, 1.0)(jitter_rng_);
  }
  return std::chrono::milliseconds(static_cast<long long>(capped * jitter));
}

ChatResponse Gateway::complete(const ProviderConfig& config, const ChatRequest& request) {
  if (config.role != request.role) {
    throw InputError(fmt::format("request role {} does not match provider role {}", to_string(request.role),
                                 to_string(config.role)));
  }
  return complete(request);
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  auto it = bindings_.find(request.role);
  if (it == bindings_.end()) {
    throw InputError(fmt::format("no provider bound for role {}", to_string(request.role)));
  }
  Binding& binding = it->second;
  if (request.role != ModelRole::Verifier) {
    for (const auto& m : request.messages) {
      if (!m.images.empty()) throw InputError("only verifier requests may carry images");
    }
  }
  const std::string hash = request_hash(request);
  int last_status = kStatusTransportError;
  std::string last_error;
  for (int attempt = 1; attempt <= binding.config.max_attempts; ++attempt) {
    binding.limiter->acquire();
    const auto start = clock_.now();
    ProviderReply reply = binding.provider->send(binding.config, request);
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(clock_.now() - start);
    transcript_.record(hash, request.role, attempt, reply.status, reply.text, reply.error);

    if (reply.status == 200) return {std::move(reply.text), reply.usage, latency};
    last_status = reply.status;
    last_error = reply.error.empty() ? reply.text : reply.error;
    if (reply.status == kStatusMissingRecording) throw MissingRecording(hash);
    if (reply.status == kStatusProtocolError) throw ProtocolError(last_error);
    if (!is_retryable_status(reply.status)) break;
    if (attempt < binding.config.max_attempts) {
      clock_.sleep_until(clock_.now() + backoff_delay(binding.config, attempt));
    }
  }
  throw RoleCallFailed(request.role, last_status, last_error);
}

}  // namespace webedit
