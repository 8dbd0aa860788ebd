#include "webedit/review_server.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <regex>
#include <thread>

namespace webedit {

namespace fs = std::filesystem;

json to_json(const ReviewCase& c) {
  json j = {{"id", c.id},
            {"model_id", c.model_id},
            {"instruction", c.instruction},
            {"before_shot", c.before_shot},
            {"after_shot", c.after_shot},
            {"original_html", c.original_html},
            {"modified_html", c.modified_html}};
  j["automatic"] = c.automatic ? json(to_string(*c.automatic)) : json(nullptr);
  return j;
}

ReviewCase review_case_from_json(const json& j) {
  ReviewCase c;
  c.id = j.at("id").get<std::string>();
  c.model_id = j.value("model_id", "dataset");
  c.instruction = j.at("instruction").get<std::string>();
  c.before_shot = j.at("before_shot").get<std::string>();
  c.after_shot = j.at("after_shot").get<std::string>();
  c.original_html = j.value("original_html", "");
  c.modified_html = j.value("modified_html", "");
  if (j.contains("automatic") && !j["automatic"].is_null()) {
    c.automatic = decision_from_string(j["automatic"].get<std::string>());
  }
  return c;
}

LabelStore::LabelStore(fs::path path) : path_(std::move(path)) {
  if (fs::exists(path_)) {
    for (const auto& j : read_jsonl(path_)) labels_.push_back(review_label_from_json(j));
  } else if (!path_.parent_path().empty()) {
    fs::create_directories(path_.parent_path());
  }
}

bool LabelStore::has(const std::string& case_id, const std::string& model_id, const std::string& reviewer_id) const {
  std::lock_guard lock(mutex_);
  return std::any_of(labels_.begin(), labels_.end(), [&](const ReviewLabel& l) {
    return l.case_id == case_id && l.model_id == model_id && l.reviewer_id == reviewer_id;
  });
}

bool LabelStore::add(const ReviewLabel& label) {
  std::lock_guard lock(mutex_);
  for (const auto& l : labels_) {
    if (l.case_id == label.case_id && l.model_id == label.model_id && l.reviewer_id == label.reviewer_id) return false;
  }
  JsonlAppender(path_).append(to_json(label));
  labels_.push_back(label);
  return true;
}

std::vector<ReviewLabel> LabelStore::labels() const {
  std::lock_guard lock(mutex_);
  return labels_;
}

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

struct ReviewServer::Impl {
  std::vector<ReviewCase> cases;
  std::map<std::string, std::size_t> index;
  LabelStore& labels;
  BlobStore& blobs;
  ReviewServerOptions options;
  httplib::Server server;
  std::thread thread;

  Impl(std::vector<ReviewCase> c, LabelStore& l, BlobStore& b, ReviewServerOptions o)
      : cases(std::move(c)), labels(l), blobs(b), options(std::move(o)) {
    for (std::size_t i = 0; i < cases.size(); ++i) {
      if (!index.emplace(cases[i].id, i).second) throw InputError(fmt::format("duplicate review case {}", cases[i].id));
    }
  }

  json payload(const ReviewCase& c, const std::string& reviewer, std::size_t position) const {
    json j = {{"case_id", c.id},
              {"model_id", c.model_id},
              {"instruction", c.instruction},
              {"before_image", fmt::format("/shots/{}.png", c.before_shot)},
              {"after_image", fmt::format("/shots/{}.png", c.after_shot)},
              {"original_html", c.original_html},
              {"modified_html", c.modified_html},
              {"position", position + 1},
              {"total", cases.size()}};
    // Other reviewers' verdicts only after the requester has labeled this case.
    if (!reviewer.empty() && labels.has(c.id, c.model_id, reviewer)) {
      json ls = json::array();
      for (const auto& l : labels.labels()) {
        if (l.case_id == c.id && l.model_id == c.model_id) ls.push_back(to_json(l));
      }
      j["labels"] = std::move(ls);
    }
    return j;
  }

  json agreement() const {
    std::map<std::string, Decision> automatic;
    for (const auto& c : cases) {
      if (c.automatic) automatic.emplace(c.id, *c.automatic);
    }
    return agreement_summary(labels.labels(), automatic, options.rule);
  }

  void routes() {
    server.Get("/api/cases/next", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string reviewer = req.get_param_value("reviewer");
      if (reviewer.empty()) return reply_json(res, 400, {{"error", "reviewer is required"}});
      std::size_t labeled = 0, pass = 0;
      for (std::size_t i = 0; i < cases.size(); ++i) {
        if (!labels.has(cases[i].id, cases[i].model_id, reviewer)) {
          return reply_json(res, 200, {{"done", false}, {"case", payload(cases[i], reviewer, i)}});
        }
      }
      for (const auto& l : labels.labels()) {
        if (l.reviewer_id != reviewer) continue;
        ++labeled;
        pass += l.verdict == LabelVerdict::Pass ? 1 : 0;
      }
      reply_json(res, 200,
                 {{"done", true},
                  {"summary", {{"total", cases.size()}, {"labeled", labeled}, {"pass", pass}, {"fail", labeled - pass}}}});
    });

    server.Get(R"(/api/cases/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1].str();
      auto it = index.find(id);
      if (it == index.end()) return reply_json(res, 404, {{"error", fmt::format("unknown case {}", id)}});
      reply_json(res, 200, payload(cases[it->second], req.get_param_value("reviewer"), it->second));
    });

    server.Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error&) {
        return reply_json(res, 400, {{"error", "body is not JSON"}});
      }
      ReviewLabel l;
      try {
        l.case_id = body.at("case_id").get<std::string>();
        l.reviewer_id = body.at("reviewer_id").get<std::string>();
        l.verdict = label_verdict_from_string(body.at("verdict").get<std::string>());
        l.note = body.value("note", "");
      } catch (const std::exception& e) {
        return reply_json(res, 400, {{"error", e.what()}});
      }
      if (l.reviewer_id.empty()) return reply_json(res, 400, {{"error", "reviewer_id is required"}});
      auto it = index.find(l.case_id);
      if (it == index.end()) return reply_json(res, 404, {{"error", fmt::format("unknown case {}", l.case_id)}});
      l.model_id = cases[it->second].model_id;
      l.timestamp = utc_timestamp();
      if (!labels.add(l)) {
        return reply_json(res, 409, {{"error", fmt::format("{} already labeled {}", l.reviewer_id, l.case_id)}});
      }
      reply_json(res, 201, {{"status", "accepted"}, {"label", to_json(l)}});
    });

    server.Get("/api/agreement", [this](const httplib::Request&, httplib::Response& res) {
      reply_json(res, 200, agreement());
    });

    server.Get("/api/disagreements", [this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      const auto all = labels.labels();
      for (const auto& c : cases) {
        std::map<std::string, LabelVerdict> by_reviewer;
        bool resolved = false;
        for (const auto& l : all) {
          if (l.case_id != c.id || l.model_id != c.model_id) continue;
          if (l.reviewer_id == kConsensusReviewer) resolved = true;
          else by_reviewer[l.reviewer_id] = l.verdict;
        }
        if (by_reviewer.size() < 2) continue;
        const bool split = std::any_of(by_reviewer.begin(), by_reviewer.end(),
                                       [&](const auto& kv) { return kv.second != by_reviewer.begin()->second; });
        if (!split) continue;
        json votes = json::object();
        for (const auto& [r, v] : by_reviewer) votes[r] = to_string(v);
        out.push_back({{"case_id", c.id}, {"model_id", c.model_id}, {"verdicts", votes}, {"resolved", resolved}});
      }
      reply_json(res, 200, out);
    });

    server.Get(R"(/shots/([0-9a-f]{64})\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string hash = req.matches[1].str();
      if (!blobs.contains(hash, "png")) return reply_json(res, 404, {{"error", "unknown screenshot"}});
      res.set_content(blobs.get(hash, "png"), "image/png");
    });

    if (!options.static_dir.empty()) server.set_mount_point("/", options.static_dir.string());
  }
};

ReviewServer::ReviewServer(std::vector<ReviewCase> cases, LabelStore& labels, BlobStore& blobs,
                           ReviewServerOptions options)
    : impl_(std::make_unique<Impl>(std::move(cases), labels, blobs, std::move(options))) {
  impl_->routes();
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::start() {
  int port = impl_->options.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->options.host);
  } else if (!impl_->server.bind_to_port(impl_->options.host, port)) {
    port = -1;
  }
  if (port < 0) throw IoError(fmt::format("cannot bind {}:{}", impl_->options.host, impl_->options.port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void ReviewServer::run() {
  spdlog::info("review server listening on http://{}:{}", impl_->options.host, impl_->options.port);
  if (!impl_->server.listen(impl_->options.host, impl_->options.port)) {
    throw IoError(fmt::format("cannot bind {}:{}", impl_->options.host, impl_->options.port));
  }
}

void ReviewServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

json ReviewServer::agreement() const { return impl_->agreement(); }

}  // namespace webedit
