#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "webedit/blob_store.hpp"
#include "webedit/error.hpp"
#include "webedit/image.hpp"

namespace webedit {

struct Viewport {
  int width = 1280;
  int height = 800;
  double device_scale = 1.0;

  bool operator==(const Viewport&) const = default;
};

/// Wait for the load event, then for the network to stay idle for
/// `network_idle` (giving up after `idle_timeout`), then `quiesce`.
struct SettlePolicy {
  std::chrono::milliseconds load_timeout{10000};
  std::chrono::milliseconds network_idle{500};
  std::chrono::milliseconds idle_timeout{5000};
  std::chrono::milliseconds quiesce{100};

  /// Compact identifier recorded with every screenshot.
  std::string id() const;
};

struct Screenshot {
  Raster image;
  std::string png;  // deterministic re-encoding of `image`
  std::string sha256;  // digest of `png`
  Viewport viewport;
  std::int64_t render_wall_ms = 0;
  std::string settle_policy_id;
  bool settle_timed_out = false;
};

class RenderFailed : public Error {
 public:
  using Error::Error;
};

class Renderer {
 public:
  virtual ~Renderer() = default;
  /// Throws RenderFailed.
  virtual Screenshot render(const std::string& html, const Viewport& viewport, const SettlePolicy& settle) = 0;
};

struct BrowserRendererOptions {
  std::filesystem::path browser;
  std::size_t pool_size = 4;
  std::size_t recycle_after = 50;  // renders per browser process
  std::vector<std::string> allowlist;  // URL prefixes allowed to load besides file/data/blob/about
  std::size_t max_document_bytes = 4 * 1024 * 1024;
  std::string pinned_font = "DejaVu Sans";  // default family; empty leaves the browser default
  std::filesystem::path temp_dir;  // empty: system temp directory
  std::vector<std::string> extra_args;
};

/// Renders through a pool of headless browser processes. A render that loses
/// its browser is retried once on a fresh process before RenderFailed.
class BrowserRenderer : public Renderer {
 public:
  explicit BrowserRenderer(BrowserRendererOptions options);
  ~BrowserRenderer() override;

  Screenshot render(const std::string& html, const Viewport& viewport, const SettlePolicy& settle) override;

  std::size_t browsers_launched() const;

 private:
  class Worker;

  Worker& checkout();
  void checkin(Worker& worker);

  BrowserRendererOptions options_;
  std::filesystem::path temp_dir_;
  mutable std::mutex mutex_;
  std::condition_variable available_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::vector<Worker*> idle_;
  std::atomic<std::size_t> launched_{0};
};

/// Locates a browser: $WEBEDIT_BROWSER, then chromium/chrome names on PATH,
/// then ~/.cache/webedit/chromium.
std::optional<std::filesystem::path> find_browser();

/// Read-through cache over another renderer keyed by document digest,
/// viewport and settle policy, so a seed shared by several candidates renders
/// once. Holds at most `capacity` screenshots; the cache is flushed when full.
class CachingRenderer : public Renderer {
 public:
  explicit CachingRenderer(Renderer& inner, std::size_t capacity = 64);
  Screenshot render(const std::string& html, const Viewport& viewport, const SettlePolicy& settle) override;
  std::size_t misses() const;

 private:
  Renderer& inner_;
  mutable std::mutex mutex_;
  std::size_t capacity_;
  std::unordered_map<std::string, Screenshot> entries_;
  std::size_t misses_ = 0;
};

struct RenderedPair {
  Screenshot original;
  Screenshot modified;
};

/// Renders both sides under one viewport and settle policy and stores the PNGs
/// in `blobs` (when given).
RenderedPair render_pair(Renderer& renderer, const std::string& original_html, const std::string& modified_html,
                         const Viewport& viewport, const SettlePolicy& settle, BlobStore* blobs = nullptr);

}  // namespace webedit
