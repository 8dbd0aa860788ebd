#include <fmt/format.h>
#include <httplib.h>

#include <cmath>
#include <cstdlib>

#include "http_util.hpp"
#include "webedit/digest.hpp"
#include "webedit/jsonl.hpp"
#include "webedit/metrics.hpp"

namespace webedit {

namespace {

EmbeddingVector vector_from_json(const json& values, const std::string& model_id) {
  if (!values.is_array()) throw MetricProviderError("embedding is not an array");
  EmbeddingVector v;
  v.model_id = model_id;
  v.values.reserve(values.size());
  for (const auto& x : values) {
    if (!x.is_number()) throw MetricProviderError("embedding holds a non-numeric entry");
    v.values.push_back(x.get<double>());
  }
  return v;
}

class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(EmbeddingConfig config) : config_(std::move(config)) {
    if (!config_.transcript.empty()) recorder_ = std::make_unique<JsonlAppender>(config_.transcript);
  }

  EmbeddingVector embed(const std::string& png, const std::string& sha256) override {
    const auto url = detail::split_url(config_.endpoint);
    httplib::Client client(url.origin);
    const auto timeout = std::chrono::microseconds(static_cast<long long>(config_.timeout_s * 1e6));
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
      if (const char* key = std::getenv(config_.api_key_env.c_str())) {
        headers.emplace("Authorization", fmt::format("Bearer {}", key));
      }
    }
    const json body = {{"model", config_.model_name}, {"image", base64_encode(png)}};
    auto res = client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) throw MetricProviderError(fmt::format("embedding request failed: {}", httplib::to_string(res.error())));
    if (res->status != 200) throw MetricProviderError(fmt::format("embedding provider returned HTTP {}", res->status));
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::parse_error&) {
      throw MetricProviderError("embedding reply is not JSON");
    }
    if (!reply.is_object() || !reply.contains("embedding")) throw MetricProviderError("embedding reply lacks 'embedding'");
    EmbeddingVector v = vector_from_json(reply["embedding"], config_.model_name);
    if (recorder_) recorder_->append({{"sha256", sha256}, {"model_id", v.model_id}, {"embedding", v.values}});
    return v;
  }

 private:
  EmbeddingConfig config_;
  std::unique_ptr<JsonlAppender> recorder_;
};

class PlaybackEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit PlaybackEmbeddingProvider(const EmbeddingConfig& config) {
    for (const auto& r : read_jsonl(config.transcript)) {
      const std::string model = r.value("model_id", config.model_name);
      vectors_[r.at("sha256").get<std::string>()] = vector_from_json(r.at("embedding"), model);
    }
  }

  EmbeddingVector embed(const std::string&, const std::string& sha256) override {
    auto it = vectors_.find(sha256);
    if (it == vectors_.end()) throw MetricProviderError(fmt::format("no recorded embedding for image {}", sha256));
    return it->second;
  }

 private:
  std::unordered_map<std::string, EmbeddingVector> vectors_;
};

}  // namespace

std::shared_ptr<EmbeddingProvider> make_embedding_provider(const EmbeddingConfig& config) {
  if (config.kind == "http") {
    if (config.endpoint.empty()) throw InputError("embedding config: endpoint is required");
    return std::make_shared<HttpEmbeddingProvider>(config);
  }
  if (config.kind == "playback") {
    if (config.transcript.empty()) throw InputError("embedding config: transcript is required for playback");
    return std::make_shared<PlaybackEmbeddingProvider>(config);
  }
  throw InputError(fmt::format("embedding config: unknown kind '{}'", config.kind));
}

EmbeddingCache::EmbeddingCache(std::shared_ptr<EmbeddingProvider> provider, std::size_t expected_dim)
    : provider_(std::move(provider)), expected_dim_(expected_dim) {}

EmbeddingVector EmbeddingCache::embed(const std::string& png) {
  const std::string hash = sha256_hex(png);
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(hash);
    if (it != cache_.end()) return it->second;
    ++calls_;
  }
  EmbeddingVector v = provider_->embed(png, hash);
  if (v.values.empty()) throw InvalidEmbedding("empty embedding");
  if (expected_dim_ != 0 && v.dim() != expected_dim_) {
    throw InvalidEmbedding(fmt::format("embedding has dim {}, expected {}", v.dim(), expected_dim_));
  }
  double norm = 0;
  for (double x : v.values) {
    if (!std::isfinite(x)) throw InvalidEmbedding("embedding has a non-finite entry");
    norm += x * x;
  }
  if (norm == 0.0) throw InvalidEmbedding("zero-norm embedding");
  std::lock_guard lock(mutex_);
  return cache_.emplace(hash, std::move(v)).first->second;
}

std::size_t EmbeddingCache::provider_calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

}  // namespace webedit
