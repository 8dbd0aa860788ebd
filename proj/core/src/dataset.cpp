#include "webedit/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <fstream>

#include "webedit/digest.hpp"

namespace webedit {

namespace fs = std::filesystem;

RecordInvalid::RecordInvalid(std::string field, const std::string& detail)
    : InputError(fmt::format("invalid record ({}): {}", field, detail)), field_(std::move(field)) {}

DatasetStore::DatasetStore(const fs::path& run_dir, SeedLookup seeds)
    : index_path_(run_dir / "dataset" / "index.jsonl"), blobs_(run_dir / "blobs"), seeds_(std::move(seeds)) {
  fs::create_directories(index_path_.parent_path());
  if (fs::exists(index_path_)) {
    for (const auto& r : read_jsonl(index_path_)) ids_.insert(r.at("id").get<std::string>());
  }
}

void DatasetStore::validate(const DatasetRecord& r) const {
  if (r.id.empty()) throw RecordInvalid("id", "empty id");
  if (contains(r.id)) throw RecordInvalid("id", fmt::format("duplicate id {}", r.id));
  if (r.instruction.text.empty()) throw RecordInvalid("instruction", "empty instruction text");
  if (r.verdict.decision != Decision::FullyApplied) throw RecordInvalid("verdict", "decision is not fully_applied");
  if (r.original_html.empty()) throw RecordInvalid("original_html", "empty document");
  if (r.modified_html.empty()) throw RecordInvalid("modified_html", "empty document");
  if (seeds_) {
    const auto seed = seeds_(r.instruction.seed_id);
    if (!seed) throw RecordInvalid("original_html", fmt::format("unknown seed {}", r.instruction.seed_id));
    if (*seed != r.original_html) throw RecordInvalid("original_html", "does not match the seed document");
  }
  for (const auto& [field, shot] : {std::pair{"original_shot", &r.original_shot}, {"modified_shot", &r.modified_shot}}) {
    if (shot->empty() || !blobs_.contains(*shot, "png")) {
      throw RecordInvalid(field, fmt::format("screenshot '{}' is not in the blob store", *shot));
    }
  }
}

json record_to_json(const DatasetRecord& r, const std::string& original_digest, const std::string& modified_digest) {
  return {{"id", r.id},
          {"pipeline_run_id", r.pipeline_run_id},
          {"instruction", to_json(r.instruction)},
          {"original_html", original_digest},
          {"modified_html", modified_digest},
          {"screenshots", {{"original", r.original_shot}, {"modified", r.modified_shot}}},
          {"scores", to_json(r.scores)},
          {"verdict", to_json(r.verdict)}};
}

void DatasetStore::store(const DatasetRecord& record) {
  validate(record);
  const std::string original = blobs_.put(record.original_html, "html");
  const std::string modified = blobs_.put(record.modified_html, "html");
  JsonlAppender(index_path_).append(record_to_json(record, original, modified));
  ids_.insert(record.id);
}

void DatasetStore::store(const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) store(r);
}

std::vector<DatasetRecord> DatasetStore::records() const {
  std::vector<DatasetRecord> out;
  if (!fs::exists(index_path_)) return out;
  for (const auto& j : read_jsonl(index_path_)) {
    DatasetRecord r;
    r.id = j.at("id").get<std::string>();
    r.pipeline_run_id = j.value("pipeline_run_id", "");
    r.instruction = instruction_from_json(j.at("instruction"));
    r.original_html = blobs_.get(j.at("original_html").get<std::string>(), "html");
    r.modified_html = blobs_.get(j.at("modified_html").get<std::string>(), "html");
    r.original_shot = j.at("screenshots").at("original").get<std::string>();
    r.modified_shot = j.at("screenshots").at("modified").get<std::string>();
    r.scores = candidate_scores_from_json(j.at("scores"));
    r.verdict = verdict_from_json(j.at("verdict"));
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

class ApproxBytes4 : public TokenEstimator {
 public:
  std::string id() const override { return "approx-b4"; }
  std::size_t count(std::string_view text) const override { return (text.size() + 3) / 4; }
};

class WhitespaceWords : public TokenEstimator {
 public:
  std::string id() const override { return "whitespace-words"; }
  std::size_t count(std::string_view text) const override {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : text) {
      const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
      if (!space && !in_word) ++n;
      in_word = !space;
    }
    return n;
  }
};

}  // namespace

std::unique_ptr<TokenEstimator> make_token_estimator(std::string_view id) {
  if (id == "approx-b4") return std::make_unique<ApproxBytes4>();
  if (id == "whitespace-words") return std::make_unique<WhitespaceWords>();
  throw InputError(fmt::format("unknown token estimator '{}'", id));
}

TokenStats compute_token_stats(const std::vector<DatasetRecord>& records, const TokenEstimator& estimator) {
  if (records.empty()) throw EmptyDataset("token statistics need at least one record");
  std::vector<std::size_t> counts;
  counts.reserve(records.size());
  for (const auto& r : records) counts.push_back(estimator.count(r.instruction.text + "\n" + r.original_html));
  std::sort(counts.begin(), counts.end());
  TokenStats s;
  s.records = counts.size();
  s.estimator_id = estimator.id();
  double sum = 0;
  for (auto c : counts) sum += static_cast<double>(c);
  s.mean = sum / static_cast<double>(counts.size());
  const std::size_t mid = counts.size() / 2;
  s.median = counts.size() % 2 == 1 ? static_cast<double>(counts[mid])
                                    : (static_cast<double>(counts[mid - 1]) + static_cast<double>(counts[mid])) / 2.0;
  s.max = counts.back();
  return s;
}

TokenStats compute_token_stats(const DatasetStore& store, const TokenEstimator& estimator) {
  return compute_token_stats(store.records(), estimator);
}

ExportTemplate ExportTemplate::builtin(std::string_view id) {
  if (id == "default") {
    return {"default",
            "Apply the following design change to the HTML document and return the full rewritten document.\n\n"
            "Change request: {instruction}\n\nOriginal document:\n{html}\n"};
  }
  if (id == "identity") return {"identity", "{instruction}\n{html}"};
  throw TemplateError(fmt::format("unknown export template '{}'", id));
}

namespace {

struct Piece {
  bool slot;
  std::string text;  // literal text, or the slot name
};

std::vector<Piece> split_template(std::string_view tmpl) {
  std::vector<Piece> out;
  std::string literal;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool matched = false;
    for (std::string_view slot : {"instruction", "html"}) {
      const std::string token = fmt::format("{{{}}}", slot);
      if (tmpl.substr(i, token.size()) == token) {
        if (!literal.empty()) out.push_back({false, std::move(literal)});
        literal.clear();
        out.push_back({true, std::string(slot)});
        i += token.size();
        matched = true;
        break;
      }
    }
    if (!matched) literal.push_back(tmpl[i++]);
  }
  if (!literal.empty()) out.push_back({false, std::move(literal)});
  return out;
}

}  // namespace

void ExportTemplate::validate() const {
  for (std::string_view slot : {"{instruction}", "{html}"}) {
    if (prompt.find(slot) == std::string::npos) {
      throw TemplateError(fmt::format("export template '{}' lacks the {} slot", id, slot));
    }
  }
}

std::string ExportTemplate::fill(const std::string& instruction, const std::string& html) const {
  std::string out;
  for (const auto& p : split_template(prompt)) {
    out += !p.slot ? p.text : (p.text == "instruction" ? instruction : html);
  }
  return out;
}

std::string ExportTemplate::recover_html(const std::string& prompt_text, const std::string& instruction) const {
  const auto pieces = split_template(prompt);
  std::size_t fixed = 0;
  std::size_t html_slots = 0;
  for (const auto& p : pieces) {
    if (!p.slot) fixed += p.text.size();
    else if (p.text == "instruction") fixed += instruction.size();
    else ++html_slots;
  }
  if (html_slots == 0 || prompt_text.size() < fixed || (prompt_text.size() - fixed) % html_slots != 0) {
    throw TemplateError("prompt does not match the export template");
  }
  const std::size_t html_len = (prompt_text.size() - fixed) / html_slots;
  std::string html;
  std::size_t pos = 0;
  bool have_html = false;
  for (const auto& p : pieces) {
    const std::size_t len = !p.slot ? p.text.size() : (p.text == "instruction" ? instruction.size() : html_len);
    const std::string_view part = std::string_view(prompt_text).substr(pos, len);
    if (!p.slot && part != p.text) throw TemplateError("prompt does not match the export template");
    if (p.slot && p.text == "instruction" && part != instruction) {
      throw TemplateError("prompt instruction differs from the record");
    }
    if (p.slot && p.text == "html") {
      if (have_html && part != html) throw TemplateError("prompt html slots disagree");
      html = std::string(part);
      have_html = true;
    }
    pos += len;
  }
  return html;
}

ExportManifest export_training(const std::vector<DatasetRecord>& records, const ExportTemplate& tmpl,
                               const fs::path& out_path) {
  tmpl.validate();
  std::string body;
  for (const auto& r : records) {
    const json line = {{"id", r.id},
                       {"prompt", tmpl.fill(r.instruction.text, r.original_html)},
                       {"completion", r.modified_html},
                       {"meta",
                        {{"instruction", r.instruction.text},
                         {"instruction_id", r.instruction.id},
                         {"seed_id", r.instruction.seed_id},
                         {"category", to_string(r.instruction.category)},
                         {"pipeline_run_id", r.pipeline_run_id},
                         {"template_id", tmpl.id}}}};
    body += line.dump();
    body.push_back('\n');
  }
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  write_file_atomic(out_path, body);
  ExportManifest m{tmpl.id, records.size(), sha256_hex(body), out_path};
  const json manifest = {{"template_id", m.template_id}, {"count", m.count}, {"sha256", m.sha256},
                         {"file", out_path.filename().string()}};
  write_file_atomic(fs::path(out_path).replace_extension(".manifest.json"), manifest.dump(2) + "\n");
  return m;
}

ExportManifest export_training(const DatasetStore& store, const ExportTemplate& tmpl, const fs::path& out_path) {
  return export_training(store.records(), tmpl, out_path);
}

std::vector<TrainingTriplet> read_training_export(const fs::path& path, const ExportTemplate& tmpl) {
  std::vector<TrainingTriplet> out;
  for (const auto& j : read_jsonl(path)) {
    TrainingTriplet t;
    t.id = j.at("id").get<std::string>();
    t.instruction = j.at("meta").at("instruction").get<std::string>();
    t.original_html = tmpl.recover_html(j.at("prompt").get<std::string>(), t.instruction);
    t.modified_html = j.at("completion").get<std::string>();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace webedit
