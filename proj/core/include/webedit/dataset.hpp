#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "webedit/blob_store.hpp"
#include "webedit/jsonl.hpp"
#include "webedit/verification.hpp"

namespace webedit {

/// An accepted (instruction, original, modified) triplet with provenance.
struct DatasetRecord {
  std::string id;
  EditInstruction instruction;
  std::string original_html;
  std::string modified_html;
  std::string original_shot;  // PNG digests in the blob store
  std::string modified_shot;
  CandidateScores scores;
  Verdict verdict;
  std::string pipeline_run_id;
};

class RecordInvalid : public InputError {
 public:
  RecordInvalid(std::string field, const std::string& detail);
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class TemplateError : public InputError {
 public:
  using InputError::InputError;
};

/// Returns the seed's HTML for an id, or nullopt when unknown.
using SeedLookup = std::function<std::optional<std::string>(const std::string& seed_id)>;

/// Append-only record index (`<run>/dataset/index.jsonl`) over a shared
/// content-addressed blob store (`<run>/blobs`). HTML lives in the blob store;
/// the index references it by digest.
class DatasetStore {
 public:
  /// Opens (or creates) the store under `run_dir`. When `seeds` is given,
  /// stored records must carry their seed's HTML byte for byte.
  explicit DatasetStore(const std::filesystem::path& run_dir, SeedLookup seeds = {});

  /// Validates and appends. Throws RecordInvalid naming the offending field.
  void store(const DatasetRecord& record);
  void store(const std::vector<DatasetRecord>& records);

  std::size_t count() const { return ids_.size(); }
  bool contains(const std::string& id) const { return ids_.count(id) > 0; }
  /// Records in append order, HTML loaded from the blob store.
  std::vector<DatasetRecord> records() const;

  BlobStore& blobs() { return blobs_; }
  const std::filesystem::path& index_path() const { return index_path_; }

 private:
  void validate(const DatasetRecord& record) const;

  std::filesystem::path index_path_;
  BlobStore blobs_;
  SeedLookup seeds_;
  std::set<std::string> ids_;
};

json record_to_json(const DatasetRecord& record, const std::string& original_digest,
                    const std::string& modified_digest);

class TokenEstimator {
 public:
  virtual ~TokenEstimator() = default;
  virtual std::string id() const = 0;
  virtual std::size_t count(std::string_view text) const = 0;
};

/// "approx-b4": ceil(bytes / 4). "whitespace-words": runs of non-space bytes.
std::unique_ptr<TokenEstimator> make_token_estimator(std::string_view id);

struct TokenStats {
  double mean = 0.0;
  double median = 0.0;
  std::size_t max = 0;
  std::size_t records = 0;
  std::string estimator_id;
};

/// Per record: estimator(instruction + "\n" + original_html). Throws EmptyDataset.
TokenStats compute_token_stats(const std::vector<DatasetRecord>& records, const TokenEstimator& estimator);
TokenStats compute_token_stats(const DatasetStore& store, const TokenEstimator& estimator);

/// Prompt skeleton for training export; must contain {instruction} and {html}.
struct ExportTemplate {
  std::string id;
  std::string prompt;

  /// "default" or "identity" (prompt is instruction, newline, html).
  static ExportTemplate builtin(std::string_view id);
  /// Throws TemplateError when a slot is missing.
  void validate() const;
  std::string fill(const std::string& instruction, const std::string& html) const;
  /// Inverse of fill() given the instruction; throws TemplateError on mismatch.
  std::string recover_html(const std::string& prompt_text, const std::string& instruction) const;
};

struct ExportManifest {
  std::string template_id;
  std::size_t count = 0;
  std::string sha256;  // digest of the export file
  std::filesystem::path path;
};

/// Writes one {id, prompt, completion, meta} line per record and a sibling
/// `<name>.manifest.json`. Output is byte-identical across repeated exports.
ExportManifest export_training(const DatasetStore& store, const ExportTemplate& tmpl,
                               const std::filesystem::path& out_path);
ExportManifest export_training(const std::vector<DatasetRecord>& records, const ExportTemplate& tmpl,
                               const std::filesystem::path& out_path);

struct TrainingTriplet {
  std::string id;
  std::string instruction;
  std::string original_html;
  std::string modified_html;

  bool operator==(const TrainingTriplet&) const = default;
};

/// Reads an export back into triplets.
std::vector<TrainingTriplet> read_training_export(const std::filesystem::path& path, const ExportTemplate& tmpl);

}  // namespace webedit
