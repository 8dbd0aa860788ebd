#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "webedit/llm_gateway.hpp"
#include "webedit/metrics.hpp"
#include "webedit/pipeline.hpp"
#include "webedit/renderer.hpp"

namespace webedit::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "webedit-test");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

std::filesystem::path fixture_dir();
std::filesystem::path render_fixture_dir();

// ---- scripted model server ------------------------------------------------

/// The scripted pipeline corpus: five seed pages, five instructions each.
/// Instructions carrying a keyword get a scripted editor/verifier reaction:
///   "unchanged"  editor returns the seed verbatim  -> not_applied
///   "truncate"   editor returns a cut-off document -> invalid_html
///   "enormous"   editor pads past the size guard   -> render_failed
///   "flaky"      verifier answers HTTP 500         -> verify_failed
/// Any other instruction gets a visible banner and is accepted.
struct ScriptedCounts {
  std::size_t accepted = 0;
  std::size_t not_applied = 0;
  std::size_t invalid_html = 0;
  std::size_t render_failed = 0;
  std::size_t verify_failed = 0;
  std::size_t total() const { return accepted + not_applied + invalid_html + render_failed + verify_failed; }
};

inline constexpr std::size_t kScriptedSeeds = 5;
inline constexpr std::size_t kScriptedK = 5;
/// Render size guard used with the scripted corpus.
inline constexpr std::size_t kScriptedMaxDocumentBytes = 64 * 1024;

/// Seed page N (1-based) of the scripted corpus.
std::string scripted_seed(int n);
/// The five instruction lines the generator returns for seed N.
std::vector<std::string> scripted_instructions(int n);
/// Expected outcome tally, counted from the scripts above.
ScriptedCounts scripted_counts();
void write_scripted_corpus(const std::filesystem::path& dir);

/// HTTP stand-in for the model endpoints:
///   POST /generator, /editor, /verifier  chat-completion contract
///   POST /embed                          {"model","image"} -> {"embedding"}
class StubModelServer {
 public:
  StubModelServer();
  ~StubModelServer();

  int port() const { return port_; }
  std::string url(const std::string& path) const;
  std::size_t calls(const std::string& path) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

/// Run config over `corpus` that talks to `server` and records transcripts.
RunConfig scripted_http_config(const std::filesystem::path& corpus, const StubModelServer& server,
                               const std::filesystem::path& embed_transcript);
/// Same config answered from the transcripts a recorded run left behind.
RunConfig scripted_playback_config(const std::filesystem::path& corpus, const std::filesystem::path& gateway_transcript,
                                   const std::filesystem::path& embed_transcript);

/// Short settle policy for static fixtures.
SettlePolicy fast_settle();

// ---- renderers --------------------------------------------------------------

/// Deterministic stand-in: fills the viewport with a color derived from the
/// document digest. Throws RenderFailed above `max_bytes` or on an empty document.
class FakeRenderer : public Renderer {
 public:
  explicit FakeRenderer(std::size_t max_bytes = kScriptedMaxDocumentBytes) : max_bytes_(max_bytes) {}
  Screenshot render(const std::string& html, const Viewport& viewport, const SettlePolicy& settle) override;
  std::size_t renders() const { return renders_; }

 private:
  std::size_t max_bytes_;
  std::atomic<std::size_t> renders_{0};
};

/// Shared browser renderer for tests, or nullptr when no browser is installed.
std::shared_ptr<BrowserRenderer> shared_browser(std::size_t max_document_bytes = kScriptedMaxDocumentBytes);

// ---- oracles ----------------------------------------------------------------

/// SSIM evaluated window by window straight from the definition: two-pass
/// means, then centered variances and covariance.
double brute_force_ssim(const GrayImage& a, const GrayImage& b, int window, double c1, double c2);

GrayImage random_gray(int w, int h, std::uint64_t seed);

}  // namespace webedit::testing
