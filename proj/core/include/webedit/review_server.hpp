#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "webedit/blob_store.hpp"
#include "webedit/evaluation.hpp"

namespace webedit {

/// A sample under human review: the instruction and both screenshots.
struct ReviewCase {
  std::string id;
  std::string model_id = "dataset";
  std::string instruction;
  std::string before_shot;  // PNG digests
  std::string after_shot;
  std::string original_html;
  std::string modified_html;
  std::optional<Decision> automatic;  // the verifier's decision, when known
};

json to_json(const ReviewCase& c);
ReviewCase review_case_from_json(const json& j);

/// Labels, persisted one per line; rejects a second label for the same
/// (case, model, reviewer).
class LabelStore {
 public:
  explicit LabelStore(std::filesystem::path path);
  /// Returns false on a duplicate.
  bool add(const ReviewLabel& label);
  std::vector<ReviewLabel> labels() const;
  bool has(const std::string& case_id, const std::string& model_id, const std::string& reviewer_id) const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::vector<ReviewLabel> labels_;
};

struct ReviewServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path static_dir;  // built review UI; empty serves the API only
  ReductionRule rule = ReductionRule::ConsensusRequired;
};

/// HTTP API for the review UI:
///   GET  /api/cases/next?reviewer=ID
///   GET  /api/cases/{id}[?reviewer=ID]
///   POST /api/labels {case_id, reviewer_id, verdict, note}
///   GET  /api/agreement
///   GET  /api/disagreements
///   GET  /shots/{hash}.png
/// No response to a reviewer carries another reviewer's verdict on a case the
/// requester has not labeled yet.
class ReviewServer {
 public:
  ReviewServer(std::vector<ReviewCase> cases, LabelStore& labels, BlobStore& blobs, ReviewServerOptions options);
  ~ReviewServer();

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();

  /// Same document /api/agreement returns.
  json agreement() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace webedit
