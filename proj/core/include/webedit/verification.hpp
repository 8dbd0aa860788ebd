#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "webedit/jsonl.hpp"
#include "webedit/llm_gateway.hpp"
#include "webedit/renderer.hpp"
#include "webedit/synthesis.hpp"

namespace webedit {

enum class Decision { FullyApplied, NotApplied };

std::string_view to_string(Decision decision);
Decision decision_from_string(std::string_view name);

struct Verdict {
  std::string candidate_id;
  Decision decision = Decision::NotApplied;
  std::string rationale;
  std::string raw_response;
  bool parse_fallback = false;  // no decision token found; treated as NotApplied

  bool operator==(const Verdict&) const = default;
};

json to_json(const Verdict& verdict);
Verdict verdict_from_json(const json& j);

/// Reads the decision token at the start of the first non-empty line
/// (APPLIED, FULLY_APPLIED, NOT_APPLIED; spaces or hyphens may replace the
/// underscore, case-insensitive, optional markdown emphasis). Anything else
/// yields NotApplied with parse_fallback set.
Verdict parse_verdict(std::string candidate_id, std::string_view raw_response);

/// Asks the verifier role whether `instruction` is visible in `after` relative
/// to `before`. Throws InputError when the screenshots disagree on viewport and
/// RoleCallFailed / MissingRecording from the gateway.
Verdict verify_edit(const std::string& candidate_id, const EditInstruction& instruction, const Screenshot& before,
                    const Screenshot& after, Gateway& gateway, const PromptTemplates& templates);
/// Same, with already-encoded PNG screenshots.
Verdict verify_edit(const std::string& candidate_id, const EditInstruction& instruction, const std::string& before_png,
                    const std::string& after_png, Gateway& gateway, const PromptTemplates& templates);

struct CandidateScores {
  std::optional<double> ssim;
  std::optional<double> embed_sim;
  std::optional<double> preservation;
  bool embed_missing = false;
};

json to_json(const CandidateScores& scores);
CandidateScores candidate_scores_from_json(const json& j);

/// One instruction applied to one seed, carried through rendering and verification.
struct EditCandidate {
  EditInstruction instruction;
  std::string original_html;
  EditedDocument edited;
  std::string original_shot;  // screenshot digests, empty until rendered
  std::string modified_shot;
  CandidateScores scores;
  std::optional<Verdict> verdict;
  bool render_failed = false;
  bool verify_failed = false;
  std::string failure;  // message for render or verify failures
  bool hidden_edit = false;  // documents differ but renders are pixel-identical

  const std::string& id() const { return edited.candidate_id; }
};

enum class Outcome { Accepted, NotApplied, RenderFailed, VerifyFailed, InvalidHtml };

std::string_view to_string(Outcome outcome);

/// Precedence: invalid_html, render_failed, verify_failed, then the verdict.
/// A candidate that reached verification without a verdict counts as
/// verify_failed.
Outcome classify(const EditCandidate& candidate);

struct AcceptanceStats {
  std::size_t candidates_total = 0;
  std::size_t invalid_html = 0;
  std::size_t render_failed = 0;
  std::size_t verify_failed = 0;
  std::size_t verified = 0;  // candidates with a verdict
  std::size_t not_applied = 0;
  std::size_t accepted = 0;
  std::size_t parse_fallbacks = 0;
  std::size_t hidden_edits = 0;
  double acceptance_rate = 0.0;  // accepted / candidates_total, 0 when empty
  bool empty = true;

  bool operator==(const AcceptanceStats&) const = default;
};

struct FilterResult {
  std::vector<std::size_t> accepted;  // indices into the input, input order
  AcceptanceStats stats;
};

FilterResult filter_accepted(const std::vector<EditCandidate>& candidates);

json to_json(const AcceptanceStats& stats);
AcceptanceStats acceptance_stats_from_json(const json& j);
/// Human-readable rejection tally.
std::string format_stats_table(const AcceptanceStats& stats);

}  // namespace webedit
