#include "webedit/renderer.hpp"

#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "webedit/cdp.hpp"
#include "webedit/digest.hpp"

namespace webedit {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string SettlePolicy::id() const {
  return fmt::format("load{}-idle{}of{}-q{}", load_timeout.count(), network_idle.count(), idle_timeout.count(),
                     quiesce.count());
}

namespace {

constexpr std::chrono::seconds kCommandTimeout{30};

std::string injected_style(const std::string& font) {
  std::string css =
      "*,*::before,*::after{animation:none!important;transition:none!important;caret-color:transparent!important}";
  if (!font.empty()) css += fmt::format(":where(html){{font-family:\"{}\"}}", font);
  return css;
}

bool allowed_url(const std::string& url, const std::vector<std::string>& allowlist) {
  for (const char* scheme : {"file:", "data:", "blob:", "about:"}) {
    if (url.rfind(scheme, 0) == 0) return true;
  }
  for (const auto& prefix : allowlist) {
    if (!prefix.empty() && url.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

}  // namespace

class BrowserRenderer::Worker {
 public:
  Worker(const BrowserRendererOptions& options, fs::path temp_dir, std::size_t index,
         std::atomic<std::size_t>& launched)
      : options_(options), temp_dir_(std::move(temp_dir)), index_(index), launched_(launched) {}

  ~Worker() { reset(); }

  void reset() {
    browser_.reset();
    session_.clear();
    renders_on_browser_ = 0;
  }

  Screenshot render(const std::string& html, const Viewport& viewport, const SettlePolicy& settle) {
    ensure_browser();
    const auto started = Clock::now();
    const fs::path file = temp_dir_ / fmt::format("webedit-render-{}-{}-{}.html", getpid(), index_, ++counter_);
    {
      std::ofstream out(file, std::ios::binary);
      out.write(html.data(), static_cast<std::streamsize>(html.size()));
      if (!out) throw RenderFailed(fmt::format("cannot write {}", file.string()));
    }
    struct Remove {
      fs::path p;
      ~Remove() {
        std::error_code ec;
        fs::remove(p, ec);
      }
    } remove_file{file};

    call("Emulation.setDeviceMetricsOverride", {{"width", viewport.width},
                                                {"height", viewport.height},
                                                {"deviceScaleFactor", viewport.device_scale},
                                                {"mobile", false}});
    {
      std::lock_guard lock(mutex_);
      load_fired_ = false;
      inflight_.clear();
      last_activity_ = Clock::now();
    }
    const json nav = call("Page.navigate", {{"url", "file://" + fs::absolute(file).string()}});
    if (nav.contains("errorText") && !nav["errorText"].get<std::string>().empty()) {
      throw RenderFailed(fmt::format("navigation failed: {}", nav["errorText"].get<std::string>()));
    }

    bool timed_out = false;
    {
      std::unique_lock lock(mutex_);
      if (!cv_.wait_for(lock, settle.load_timeout, [&] { return load_fired_; })) timed_out = true;
      const auto idle_deadline = Clock::now() + settle.idle_timeout;
      for (;;) {
        const auto now = Clock::now();
        if (inflight_.empty() && now - last_activity_ >= settle.network_idle) break;
        if (now >= idle_deadline) {
          timed_out = true;
          break;
        }
        cv_.wait_for(lock, std::chrono::milliseconds(20));
      }
    }

    const std::string style = injected_style(options_.pinned_font);
    call("Runtime.evaluate",
         {{"expression", fmt::format("(()=>{{const s=document.createElement('style');s.textContent={};"
                                     "(document.head||document.documentElement).appendChild(s);}})()",
                                     json(style).dump())}});
    call("Runtime.evaluate",
         {{"expression", "new Promise(r=>requestAnimationFrame(()=>requestAnimationFrame(()=>r(1))))"},
          {"awaitPromise", true}});
    std::this_thread::sleep_for(settle.quiesce);

    const json shot = call("Page.captureScreenshot",
                           {{"format", "png"}, {"fromSurface", true}, {"captureBeyondViewport", false}});
    const auto bytes = base64_decode(shot.at("data").get<std::string>());
    Screenshot s;
    try {
      s.image = decode_png(std::span<const std::uint8_t>(bytes));
    } catch (const IoError& e) {
      throw RenderFailed(fmt::format("unreadable screenshot: {}", e.what()));
    }
    const int want_w = static_cast<int>(std::lround(viewport.width * viewport.device_scale));
    const int want_h = static_cast<int>(std::lround(viewport.height * viewport.device_scale));
    if (s.image.width != want_w || s.image.height != want_h) {
      throw RenderFailed(
          fmt::format("screenshot is {}x{}, expected {}x{}", s.image.width, s.image.height, want_w, want_h));
    }
    s.png = encode_png(s.image);
    s.sha256 = sha256_hex(s.png);
    s.viewport = viewport;
    s.settle_policy_id = settle.id();
    s.settle_timed_out = timed_out;
    s.render_wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - started).count();
    ++renders_on_browser_;
    return s;
  }

 private:
  json call(const std::string& method, const json& params = json::object()) {
    return browser_->call(method, params, session_, kCommandTimeout);
  }

  void ensure_browser() {
    if (browser_ && (!browser_->alive() || renders_on_browser_ >= options_.recycle_after)) reset();
    if (browser_) return;
    browser_ = std::make_unique<cdp::Browser>(options_.browser, options_.extra_args);
    ++launched_;
    cdp::Browser* browser = browser_.get();
    browser_->set_event_handler([this, browser](const json& m) { on_event(*browser, m); });
    const json target = browser_->call("Target.createTarget", {{"url", "about:blank"}}, {}, kCommandTimeout);
    const json attached = browser_->call("Target.attachToTarget",
                                         {{"targetId", target.at("targetId")}, {"flatten", true}}, {}, kCommandTimeout);
    session_ = attached.at("sessionId").get<std::string>();
    call("Page.enable");
    call("Network.enable");
    call("Fetch.enable", {{"patterns", json::array({{{"urlPattern", "*"}}})}});
  }

  void on_event(cdp::Browser& browser, const json& m) {
    const std::string method = m.value("method", "");
    const json& params = m.contains("params") ? m["params"] : json::object();
    if (method == "Fetch.requestPaused") {
      const std::string url = params["request"].value("url", "");
      const std::string session = m.value("sessionId", "");
      if (allowed_url(url, options_.allowlist)) {
        browser.post("Fetch.continueRequest", {{"requestId", params["requestId"]}}, session);
      } else {
        browser.post("Fetch.failRequest", {{"requestId", params["requestId"]}, {"errorReason", "BlockedByClient"}},
                       session);
      }
      return;
    }
    std::lock_guard lock(mutex_);
    if (method == "Page.loadEventFired") {
      load_fired_ = true;
    } else if (method == "Network.requestWillBeSent") {
      inflight_.insert(params.value("requestId", ""));
    } else if (method == "Network.loadingFinished" || method == "Network.loadingFailed") {
      inflight_.erase(params.value("requestId", ""));
    } else {
      return;
    }
    last_activity_ = Clock::now();
    cv_.notify_all();
  }

  const BrowserRendererOptions& options_;
  fs::path temp_dir_;
  std::size_t index_;
  std::atomic<std::size_t>& launched_;
  std::unique_ptr<cdp::Browser> browser_;
  std::string session_;
  std::size_t renders_on_browser_ = 0;
  std::uint64_t counter_ = 0;

  std::mutex mutex_;
  std::condition_variable cv_;
  bool load_fired_ = false;
  std::set<std::string> inflight_;
  Clock::time_point last_activity_{};
};

BrowserRenderer::BrowserRenderer(BrowserRendererOptions options) : options_(std::move(options)) {
  if (options_.browser.empty()) throw InputError("renderer: no browser executable configured");
  if (!fs::exists(options_.browser)) {
    throw DependencyMissing(options_.browser, fmt::format("renderer: browser not found at {}", options_.browser.string()));
  }
  if (options_.pool_size == 0) throw InputError("renderer: pool size must be positive");
  if (options_.recycle_after == 0) throw InputError("renderer: recycle_after must be positive");
  temp_dir_ = options_.temp_dir.empty() ? fs::temp_directory_path() : options_.temp_dir;
  fs::create_directories(temp_dir_);
}

BrowserRenderer::~BrowserRenderer() = default;

BrowserRenderer::Worker& BrowserRenderer::checkout() {
  std::unique_lock lock(mutex_);
  if (idle_.empty() && workers_.size() < options_.pool_size) {
    workers_.push_back(std::make_unique<Worker>(options_, temp_dir_, workers_.size(), launched_));
    return *workers_.back();
  }
  available_.wait(lock, [&] { return !idle_.empty(); });
  Worker* w = idle_.back();
  idle_.pop_back();
  return *w;
}

void BrowserRenderer::checkin(Worker& worker) {
  {
    std::lock_guard lock(mutex_);
    idle_.push_back(&worker);
  }
  available_.notify_one();
}

std::size_t BrowserRenderer::browsers_launched() const { return launched_.load(); }

Screenshot BrowserRenderer::render(const std::string& html, const Viewport& viewport, const SettlePolicy& settle) {
  if (html.empty()) throw RenderFailed("empty document");
  if (html.size() > options_.max_document_bytes) {
    throw RenderFailed(
        fmt::format("document is {} bytes, limit is {}", html.size(), options_.max_document_bytes));
  }
  if (viewport.width <= 0 || viewport.height <= 0 || !(viewport.device_scale > 0)) {
    throw InputError("viewport dimensions must be positive");
  }
  std::string last_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Worker& worker = checkout();
    struct Checkin {
      BrowserRenderer* self;
      Worker& w;
      ~Checkin() { self->checkin(w); }
    } guard{this, worker};
    try {
      return worker.render(html, viewport, settle);
    } catch (const cdp::TransportError& e) {
      last_error = e.what();
      spdlog::warn("browser lost during render (attempt {}): {}", attempt + 1, last_error);
      worker.reset();
    } catch (const cdp::CommandError& e) {
      throw RenderFailed(e.what());
    }
  }
  throw RenderFailed(fmt::format("browser failed twice: {}", last_error));
}

std::optional<fs::path> find_browser() {
  auto executable = [](const fs::path& p) { return !p.empty() && fs::is_regular_file(p) && access(p.c_str(), X_OK) == 0; };
  if (const char* env = std::getenv("WEBEDIT_BROWSER")) {
    if (executable(env)) return fs::path(env);
  }
  if (const char* path = std::getenv("PATH")) {
    std::stringstream dirs(path);
    std::string dir;
    while (std::getline(dirs, dir, ':')) {
      for (const char* name : {"chromium", "chromium-browser", "google-chrome", "google-chrome-stable",
                               "chrome-headless-shell", "headless_shell"}) {
        const fs::path p = fs::path(dir) / name;
        if (executable(p)) return p;
      }
    }
  }
  if (const char* home = std::getenv("HOME")) {
    const fs::path p = fs::path(home) / ".cache" / "webedit" / "chromium";
    if (executable(p)) return p;
  }
  return std::nullopt;
}

CachingRenderer::CachingRenderer(Renderer& inner, std::size_t capacity) : inner_(inner), capacity_(capacity) {}

Screenshot CachingRenderer::render(const std::string& html, const Viewport& viewport, const SettlePolicy& settle) {
  const std::string key = fmt::format("{}|{}x{}@{}|{}", sha256_hex(html), viewport.width, viewport.height,
                                      viewport.device_scale, settle.id());
  {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
    ++misses_;
  }
  Screenshot s = inner_.render(html, viewport, settle);
  std::lock_guard lock(mutex_);
  if (entries_.size() >= capacity_) entries_.clear();
  entries_.emplace(key, s);
  return s;
}

std::size_t CachingRenderer::misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}

RenderedPair render_pair(Renderer& renderer, const std::string& original_html, const std::string& modified_html,
                         const Viewport& viewport, const SettlePolicy& settle, BlobStore* blobs) {
  RenderedPair pair{renderer.render(original_html, viewport, settle), renderer.render(modified_html, viewport, settle)};
  if (blobs != nullptr) {
    blobs->put(pair.original.png, "png");
    blobs->put(pair.modified.png, "png");
  }
  return pair;
}

}  // namespace webedit
