#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "webedit/error.hpp"
#include "webedit/jsonl.hpp"

namespace webedit {

enum class ModelRole { InstructionGenerator, Editor, Verifier };

std::string_view to_string(ModelRole role);
ModelRole model_role_from_string(std::string_view name);

/// Sampling temperature used when a provider config does not set one.
double default_temperature(ModelRole role);

struct ImageAttachment {
  std::string media_type = "image/png";
  std::string bytes;
};

struct ChatMessage {
  std::string author;  // "system", "user", "assistant"
  std::string text;
  std::vector<ImageAttachment> images;
};

struct ChatRequest {
  ModelRole role = ModelRole::Editor;
  std::vector<ChatMessage> messages;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  TokenUsage usage;
  std::chrono::milliseconds latency{0};
};

/// Stable digest of a request: role, authors, texts and image digests.
std::string request_hash(const ChatRequest& request);

struct ProviderConfig {
  ModelRole role = ModelRole::Editor;
  std::string kind = "http";  // "http" or "playback"
  std::string endpoint;  // chat-completion URL
  std::string model_name;
  int max_attempts = 3;
  double rate_limit_per_minute = 60.0;
  double timeout_s = 120.0;
  double temperature = 0.0;
  std::string api_key_env;  // environment variable holding the bearer token
  std::filesystem::path playback_transcript;
  std::chrono::milliseconds backoff_base{1000};
  std::chrono::milliseconds backoff_max{30000};
};

void validate(const ProviderConfig& config);

/// Transport statuses beyond HTTP codes.
inline constexpr int kStatusTransportError = 0;  // connection failure or timeout
inline constexpr int kStatusProtocolError = -1;  // reply body did not match the wire contract
inline constexpr int kStatusMissingRecording = -2;  // playback has no answer for the hash

/// One attempt as seen by the transport.
struct ProviderReply {
  int status = kStatusTransportError;
  std::string text;  // decoded model text on success, raw body or error otherwise
  TokenUsage usage;
  std::string error;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ProviderReply send(const ProviderConfig& config, const ChatRequest& request) = 0;
};

/// Retries are exhausted or the provider returned a non-retryable status.
class RoleCallFailed : public Error {
 public:
  RoleCallFailed(ModelRole role, int last_status, const std::string& detail);
  ModelRole role() const { return role_; }
  int last_status() const { return last_status_; }

 private:
  ModelRole role_;
  int last_status_;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class MissingRecording : public Error {
 public:
  explicit MissingRecording(const std::string& hash);
  const std::string& hash() const { return hash_; }

 private:
  std::string hash_;
};

/// Time source for backoff and rate limiting; tests substitute a virtual clock.
class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_until(time_point t) = 0;
};

Clock& steady_clock();

/// Virtual clock: sleeping advances time instantly.
class ManualClock : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point t) override;
  void advance(std::chrono::milliseconds d);
  std::vector<std::chrono::milliseconds> sleeps() const;

 private:
  mutable std::mutex mutex_;
  time_point now_{};
  std::vector<std::chrono::milliseconds> sleeps_;
};

/// Admits at most `limit` requests in any trailing window.
class RateLimiter {
 public:
  RateLimiter(double limit, std::chrono::milliseconds window, Clock& clock);
  /// Blocks (through the clock) until a request may be issued; returns its issue time.
  Clock::time_point acquire();

 private:
  std::size_t limit_;
  std::chrono::milliseconds window_;
  Clock& clock_;
  std::mutex mutex_;
  std::deque<Clock::time_point> issued_;
};

/// Append-only log of every provider attempt.
class Transcript {
 public:
  explicit Transcript(std::filesystem::path path);
  void record(const std::string& hash, ModelRole role, int attempt, int status, const std::string& response_text,
              const std::string& error);
  const std::filesystem::path& path() const { return appender_.path(); }

 private:
  JsonlAppender appender_;
};

/// Answers from a transcript: the last successful record per request hash wins.
class PlaybackProvider : public Provider {
 public:
  /// Throws IoError naming the line number on a corrupt transcript line.
  explicit PlaybackProvider(const std::filesystem::path& transcript_path);
  ProviderReply send(const ProviderConfig& config, const ChatRequest& request) override;
  std::size_t size() const { return responses_.size(); }

 private:
  std::unordered_map<std::string, std::string> responses_;
};

/// Chat-completion HTTP contract (role-tagged messages in, one text out,
/// images as inline base64 data URLs).
class HttpProvider : public Provider {
 public:
  ProviderReply send(const ProviderConfig& config, const ChatRequest& request) override;

  static std::string encode_request(const ProviderConfig& config, const ChatRequest& request);
  /// Throws ProtocolError when the body does not carry a choices[0].message.content string.
  static ChatResponse decode_response(const std::string& body);
};

std::shared_ptr<Provider> make_provider(const ProviderConfig& config);

/// Routes requests to the provider bound to their role, enforcing retries,
/// exponential backoff with jitter, the per-role rate limit, and transcript
/// logging. Every attempt is persisted before a response is returned.
class Gateway {
 public:
  explicit Gateway(std::filesystem::path transcript_path, Clock& clock = steady_clock());

  void bind(const ProviderConfig& config, std::shared_ptr<Provider> provider);
  bool bound(ModelRole role) const;
  const ProviderConfig& config(ModelRole role) const;

  ChatResponse complete(const ChatRequest& request);
  /// Same as complete(request) but fails when `config.role` differs from the request role.
  ChatResponse complete(const ProviderConfig& config, const ChatRequest& request);

  const Transcript& transcript() const { return transcript_; }

 private:
  struct Binding {
    ProviderConfig config;
    std::shared_ptr<Provider> provider;
    std::unique_ptr<RateLimiter> limiter;
  };

  std::chrono::milliseconds backoff_delay(const ProviderConfig& config, int attempt);

  Clock& clock_;
  Transcript transcript_;
  std::map<ModelRole, Binding> bindings_;
  std::mutex rng_mutex_;
  std::mt19937_64 jitter_rng_{0x5eed};
};

bool is_retryable_status(int status);

}  // namespace webedit
