#include "support.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <regex>
#include <thread>

#include "webedit/digest.hpp"
#include "webedit/image.hpp"
#include "webedit/jsonl.hpp"

namespace webedit::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& prefix) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() / fmt::format("{}-{}-{}", prefix, ::getpid(), counter++);
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

fs::path fixture_dir() { return WEBEDIT_FIXTURE_DIR; }
fs::path render_fixture_dir() { return fixture_dir() / "render"; }

// ---- scripted corpus --------------------------------------------------------

namespace {

constexpr const char* kAccents[] = {"#1f6feb", "#8250df", "#1a7f37", "#bf3989", "#9a6700"};

const std::vector<std::string> kPlain = {
    "Make the main heading larger and easier to read.",
    "Add more breathing room between the paragraphs.",
    "Use a warmer background color for the whole page.",
    "Center the introduction text on the page.",
};
const std::string kUnchanged = "Leave the layout unchanged but make it feel calmer.";
const std::string kTruncate = "Truncate the long introduction to a single sentence.";
const std::string kEnormous = "Add an enormous banner image above the heading.";
const std::string kFlaky = "Give the flaky footer links a clearer hover style.";

struct SeedScript {
  std::size_t plain;
  bool unchanged, truncate, enormous, flaky;
};

constexpr SeedScript kScripts[kScriptedSeeds] = {
    {4, true, false, false, false},
    {3, true, true, false, false},
    {3, false, false, true, true},
    {3, true, true, false, false},
    {2, true, false, true, true},
};

}  // namespace

std::string scripted_seed(int n) {
  const char* accent = kAccents[(n - 1) % 5];
  return fmt::format(
      "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>Seed {0}</title>\n<style>\n"
      "body {{ margin: 0; font-family: sans-serif; background: #ffffff; color: #222222; }}\n"
      ".masthead {{ background: {1}; color: #ffffff; padding: 24px 32px; }}\n"
      ".lede {{ padding: 16px 32px; font-size: 18px; }}\n"
      ".panel {{ margin: 16px 32px; padding: 16px; border: 2px solid {1}; width: 300px; }}\n"
      "</style>\n</head>\n<body>\n"
      "<header class=\"masthead\" id=\"top\"><h1>Storefront {0}</h1></header>\n"
      "<p class=\"lede\">Welcome to shop number {0}. We sell simple things at fair prices.</p>\n"
      "<div class=\"panel\"><h2>Opening hours</h2><p>Monday to Friday, nine to five.</p></div>\n"
      "<footer class=\"panel\"><a href=\"#top\">Back to top</a></footer>\n"
      "</body>\n</html>",
      n, accent);
}

std::vector<std::string> scripted_instructions(int n) {
  const SeedScript& s = kScripts[n - 1];
  std::vector<std::string> out(kPlain.begin(), kPlain.begin() + static_cast<std::ptrdiff_t>(s.plain));
  if (s.unchanged) out.push_back(kUnchanged);
  if (s.truncate) out.push_back(kTruncate);
  if (s.enormous) out.push_back(kEnormous);
  if (s.flaky) out.push_back(kFlaky);
  return out;
}

ScriptedCounts scripted_counts() {
  ScriptedCounts c;
  for (const auto& s : kScripts) {
    c.accepted += s.plain;
    c.not_applied += s.unchanged;
    c.invalid_html += s.truncate;
    c.render_failed += s.enormous;
    c.verify_failed += s.flaky;
  }
  return c;
}

void write_scripted_corpus(const fs::path& dir) {
  fs::create_directories(dir);
  for (int n = 1; n <= static_cast<int>(kScriptedSeeds); ++n) {
    write_file_atomic(dir / fmt::format("seed_{:02}.html", n), scripted_seed(n));
  }
}

// ---- stub server ------------------------------------------------------------

namespace {

std::string message_text(const json& content) {
  if (content.is_string()) return content.get<std::string>();
  std::string out;
  for (const auto& part : content) {
    if (part.value("type", "") == "text") out += part.value("text", "");
  }
  return out;
}

std::vector<std::string> message_images(const json& content) {
  std::vector<std::string> out;
  if (!content.is_array()) return out;
  for (const auto& part : content) {
    if (part.value("type", "") == "image_url") out.push_back(part["image_url"].value("url", ""));
  }
  return out;
}

json chat_reply(const std::string& text) {
  return {{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
          {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 10}}}};
}

std::string between(const std::string& s, const std::string& start, const std::string& end) {
  auto a = s.find(start);
  if (a == std::string::npos) return {};
  a += start.size();
  auto b = end.empty() ? std::string::npos : s.find(end, a);
  return s.substr(a, b == std::string::npos ? std::string::npos : b - a);
}

std::string scripted_edit(const std::string& instruction, std::string html) {
  if (instruction.find("unchanged") != std::string::npos) return html;
  const auto body = html.find("<body>") + 6;
  if (instruction.find("truncate") != std::string::npos || instruction.find("Truncate") != std::string::npos) {
    return html.substr(0, body) + "\n<p class=\"lede\"";
  }
  if (instruction.find("enormous") != std::string::npos) {
    return html.insert(body, "\n<!--" + std::string(kScriptedMaxDocumentBytes + 1024, 'x') + "-->");
  }
  const std::string digest = sha256_hex(instruction);
  return html.insert(body, fmt::format("\n<div style=\"background:#{};color:#ffffff;padding:20px\">{}</div>",
                                       digest.substr(0, 6), instruction));
}

}  // namespace

struct StubModelServer::Impl {
  httplib::Server server;
  std::thread thread;
  mutable std::mutex mutex;
  std::map<std::string, std::size_t> calls;

  void count(const std::string& path) {
    std::lock_guard lock(mutex);
    ++calls[path];
  }
};

StubModelServer::StubModelServer() : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.Post("/generator", [this](const httplib::Request& req, httplib::Response& res) {
    impl_->count("/generator");
    const json body = json::parse(req.body);
    const std::string prompt = message_text(body["messages"][0]["content"]);
    static const std::regex title_re(R"(<title>Seed (\d+)</title>)");
    std::smatch m;
    if (!std::regex_search(prompt, m, title_re)) {
      res.status = 400;
      return;
    }
    std::string reply;
    int i = 1;
    for (const auto& line : scripted_instructions(std::stoi(m[1].str()))) reply += fmt::format("{}. {}\n", i++, line);
    res.set_content(chat_reply(reply).dump(), "application/json");
  });
  srv.Post("/editor", [this](const httplib::Request& req, httplib::Response& res) {
    impl_->count("/editor");
    const json body = json::parse(req.body);
    const std::string prompt = message_text(body["messages"][0]["content"]);
    const std::string instruction = between(prompt, "Change request: ", "\n");
    std::string html = between(prompt, "Original document:\n", "");
    if (!html.empty() && html.back() == '\n') html.pop_back();
    res.set_content(chat_reply("```html\n" + scripted_edit(instruction, html) + "\n```").dump(), "application/json");
  });
  srv.Post("/verifier", [this](const httplib::Request& req, httplib::Response& res) {
    impl_->count("/verifier");
    const json body = json::parse(req.body);
    const json& content = body["messages"][0]["content"];
    if (message_text(content).find("flaky") != std::string::npos) {
      res.status = 500;
      res.set_content("{\"error\":\"overloaded\"}", "application/json");
      return;
    }
    const auto images = message_images(content);
    const bool same = images.size() == 2 && images[0] == images[1];
    res.set_content(
        chat_reply(same ? "NOT_APPLIED: the two screenshots are identical." : "APPLIED: the change is visible.").dump(),
        "application/json");
  });
  srv.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
    impl_->count("/embed");
    const json body = json::parse(req.body);
    const auto png = base64_decode(body.at("image").get<std::string>());
    const std::string digest = sha256_hex(std::span<const std::uint8_t>(png));
    std::vector<double> v;
    for (int i = 0; i < 8; ++i) v.push_back(std::stoi(digest.substr(i * 2, 2), nullptr, 16) / 255.0 + 0.01);
    res.set_content(json({{"embedding", v}}).dump(), "application/json");
  });
  port_ = srv.bind_to_any_port("127.0.0.1");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  srv.wait_until_ready();
}

StubModelServer::~StubModelServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string StubModelServer::url(const std::string& path) const {
  return fmt::format("http://127.0.0.1:{}{}", port_, path);
}

std::size_t StubModelServer::calls(const std::string& path) const {
  std::lock_guard lock(impl_->mutex);
  auto it = impl_->calls.find(path);
  return it == impl_->calls.end() ? 0 : it->second;
}

SettlePolicy fast_settle() {
  SettlePolicy s;
  s.load_timeout = std::chrono::milliseconds(10000);
  s.network_idle = std::chrono::milliseconds(100);
  s.idle_timeout = std::chrono::milliseconds(2000);
  s.quiesce = std::chrono::milliseconds(50);
  return s;
}

namespace {

RunConfig scripted_base(const fs::path& corpus) {
  RunConfig c;
  c.run_id = "scripted";
  c.corpus = corpus;
  c.corpus_name = "scripted";
  c.sample_size = kScriptedSeeds;
  c.seed = 7;
  c.k = kScriptedK;
  c.repair_rounds = 1;
  c.workers = 2;
  c.settle = fast_settle();
  c.renderer.pool_size = 1;
  c.renderer.max_document_bytes = kScriptedMaxDocumentBytes;
  return c;
}

}  // namespace

RunConfig scripted_http_config(const fs::path& corpus, const StubModelServer& server, const fs::path& embed_transcript) {
  RunConfig c = scripted_base(corpus);
  for (const auto& [role, path] : {std::pair{ModelRole::InstructionGenerator, "/generator"},
                                   std::pair{ModelRole::Editor, "/editor"}, std::pair{ModelRole::Verifier, "/verifier"}}) {
    ProviderConfig p;
    p.role = role;
    p.kind = "http";
    p.endpoint = server.url(path);
    p.model_name = fmt::format("stub-{}", to_string(role));
    p.max_attempts = 2;
    p.rate_limit_per_minute = 100000;
    p.timeout_s = 10;
    p.temperature = default_temperature(role);
    p.backoff_base = std::chrono::milliseconds(1);
    p.backoff_max = std::chrono::milliseconds(5);
    c.providers[role] = p;
  }
  EmbeddingConfig e;
  e.kind = "http";
  e.endpoint = server.url("/embed");
  e.model_name = "stub-embed";
  e.dim = 8;
  e.transcript = embed_transcript;
  c.embedding = e;
  return c;
}

RunConfig scripted_playback_config(const fs::path& corpus, const fs::path& gateway_transcript,
                                   const fs::path& embed_transcript) {
  RunConfig c = scripted_base(corpus);
  for (auto role : {ModelRole::InstructionGenerator, ModelRole::Editor, ModelRole::Verifier}) {
    ProviderConfig p;
    p.role = role;
    p.kind = "playback";
    p.model_name = fmt::format("stub-{}", to_string(role));
    p.max_attempts = 1;
    p.rate_limit_per_minute = 100000;
    p.temperature = default_temperature(role);
    p.playback_transcript = gateway_transcript;
    c.providers[role] = p;
  }
  EmbeddingConfig e;
  e.kind = "playback";
  e.model_name = "stub-embed";
  e.dim = 8;
  e.transcript = embed_transcript;
  c.embedding = e;
  return c;
}

// ---- renderers --------------------------------------------------------------

Screenshot FakeRenderer::render(const std::string& html, const Viewport& viewport, const SettlePolicy& settle) {
  if (html.empty()) throw RenderFailed("empty document");
  if (html.size() > max_bytes_) throw RenderFailed("document exceeds the size limit");
  ++renders_;
  const std::string digest = sha256_hex(html);
  Raster r(viewport.width, viewport.height, 255);
  const auto shade = static_cast<std::uint8_t>(std::stoi(digest.substr(0, 2), nullptr, 16));
  for (int y = 0; y < std::min(40, r.height); ++y) {
    for (int x = 0; x < r.width; ++x) r.at(x, y)[0] = shade;
  }
  Screenshot s;
  s.image = std::move(r);
  s.png = encode_png(s.image);
  s.sha256 = sha256_hex(s.png);
  s.viewport = viewport;
  s.settle_policy_id = settle.id();
  return s;
}

std::shared_ptr<BrowserRenderer> shared_browser(std::size_t max_document_bytes) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<BrowserRenderer>> instances;
  std::lock_guard lock(mutex);
  auto& slot = instances[max_document_bytes];
  if (!slot) {
    const auto exe = find_browser();
    if (!exe) return nullptr;
    BrowserRendererOptions o;
    o.browser = *exe;
    o.pool_size = 1;
    o.max_document_bytes = max_document_bytes;
    slot = std::make_shared<BrowserRenderer>(std::move(o));
  }
  return slot;
}

// ---- oracles ----------------------------------------------------------------

double brute_force_ssim(const GrayImage& a, const GrayImage& b, int window, double c1, double c2) {
  const double n = static_cast<double>(window) * window;
  double total = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + window <= a.height; ++y0) {
    for (int x0 = 0; x0 + window <= a.width; ++x0) {
      double mx = 0.0, my = 0.0;
      for (int y = y0; y < y0 + window; ++y) {
        for (int x = x0; x < x0 + window; ++x) {
          mx += a.at(x, y);
          my += b.at(x, y);
        }
      }
      mx /= n;
      my /= n;
      double vx = 0.0, vy = 0.0, cxy = 0.0;
      for (int y = y0; y < y0 + window; ++y) {
        for (int x = x0; x < x0 + window; ++x) {
          const double dx = a.at(x, y) - mx;
          const double dy = b.at(x, y) - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      }
      vx /= n;
      vy /= n;
      cxy /= n;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

GrayImage random_gray(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GrayImage g(w, h);
  for (auto& p : g.pixels) p = u(rng);
  return g;
}

}  // namespace webedit::testing
