#include "webedit/verification.hpp"

#include <fmt/format.h>

#include <cctype>

namespace webedit {

std::string_view to_string(Decision decision) {
  return decision == Decision::FullyApplied ? "fully_applied" : "not_applied";
}

Decision decision_from_string(std::string_view name) {
  if (name == "fully_applied") return Decision::FullyApplied;
  if (name == "not_applied") return Decision::NotApplied;
  throw InputError(fmt::format("unknown decision '{}'", name));
}

json to_json(const Verdict& v) {
  return {{"candidate_id", v.candidate_id},
          {"decision", to_string(v.decision)},
          {"rationale", v.rationale},
          {"raw_response", v.raw_response},
          {"parse_fallback", v.parse_fallback}};
}

Verdict verdict_from_json(const json& j) {
  Verdict v;
  v.candidate_id = j.at("candidate_id").get<std::string>();
  v.decision = decision_from_string(j.at("decision").get<std::string>());
  v.rationale = j.value("rationale", "");
  v.raw_response = j.value("raw_response", "");
  v.parse_fallback = j.value("parse_fallback", false);
  return v;
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_null(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

json to_json(const CandidateScores& s) {
  return {{"ssim", optional_number(s.ssim)},
          {"embed_sim", optional_number(s.embed_sim)},
          {"preservation", optional_number(s.preservation)},
          {"embed_missing", s.embed_missing}};
}

CandidateScores candidate_scores_from_json(const json& j) {
  CandidateScores s;
  s.ssim = number_or_null(j, "ssim");
  s.embed_sim = number_or_null(j, "embed_sim");
  s.preservation = number_or_null(j, "preservation");
  s.embed_missing = j.value("embed_missing", false);
  return s;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

// Length of the decision token `word` ("NOT_APPLIED" etc.) at the start of
// `line`, or 0. Separators inside the token may be '_', ' ' or '-'.
std::size_t match_token(std::string_view line, std::string_view word) {
  std::size_t i = 0;
  for (char w : word) {
    if (i >= line.size()) return 0;
    const char c = line[i];
    if (w == '_') {
      if (c != '_' && c != ' ' && c != '-') return 0;
    } else if (std::toupper(static_cast<unsigned char>(c)) != w) {
      return 0;
    }
    ++i;
  }
  if (i < line.size() && (std::isalnum(static_cast<unsigned char>(line[i])) || line[i] == '_')) return 0;
  return i;
}

}  // namespace

Verdict parse_verdict(std::string candidate_id, std::string_view raw_response) {
  Verdict v;
  v.candidate_id = std::move(candidate_id);
  v.raw_response = std::string(raw_response);

  std::string_view rest = raw_response;
  std::string_view line;
  while (!rest.empty()) {
    const std::size_t nl = rest.find('\n');
    line = trim(rest.substr(0, nl));
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (!line.empty()) break;
  }
  std::string_view head = line;
  while (!head.empty() && (head.front() == '*' || head.front() == '_' || head.front() == '#' || head.front() == '`')) {
    head.remove_prefix(1);
  }
  head = trim(head);

  std::size_t len = 0;
  if ((len = match_token(head, "NOT_APPLIED")) > 0) {
    v.decision = Decision::NotApplied;
  } else if ((len = match_token(head, "FULLY_APPLIED")) > 0 || (len = match_token(head, "APPLIED")) > 0) {
    v.decision = Decision::FullyApplied;
  } else {
    v.decision = Decision::NotApplied;
    v.parse_fallback = true;
    v.rationale = std::string(trim(raw_response));
    return v;
  }
  std::string_view reason = head.substr(len);
  while (!reason.empty() && (reason.front() == '*' || reason.front() == '_' || reason.front() == '`' ||
                             reason.front() == ':' || reason.front() == '-' || reason.front() == '.' ||
                             std::isspace(static_cast<unsigned char>(reason.front())))) {
    reason.remove_prefix(1);
  }
  std::string rationale(trim(reason));
  const std::string_view more = trim(rest);
  if (!more.empty()) rationale += rationale.empty() ? std::string(more) : "\n" + std::string(more);
  v.rationale = std::move(rationale);
  return v;
}

Verdict verify_edit(const std::string& candidate_id, const EditInstruction& instruction, const Screenshot& before,
                    const Screenshot& after, Gateway& gateway, const PromptTemplates& templates) {
  if (!(before.viewport == after.viewport)) throw InputError("screenshots were taken at different viewports");
  return verify_edit(candidate_id, instruction, before.png, after.png, gateway, templates);
}

Verdict verify_edit(const std::string& candidate_id, const EditInstruction& instruction, const std::string& before_png,
                    const std::string& after_png, Gateway& gateway, const PromptTemplates& templates) {
  ChatRequest request;
  request.role = ModelRole::Verifier;
  request.messages.push_back({"user",
                              fill_template(templates.verifier, {{"instruction", instruction.text}}),
                              {{"image/png", before_png}, {"image/png", after_png}}});
  const ChatResponse reply = gateway.complete(request);
  return parse_verdict(candidate_id, reply.text);
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Accepted:
      return "accepted";
    case Outcome::NotApplied:
      return "not_applied";
    case Outcome::RenderFailed:
      return "render_failed";
    case Outcome::VerifyFailed:
      return "verify_failed";
    case Outcome::InvalidHtml:
      return "invalid_html";
  }
  return "unknown";
}

Outcome classify(const EditCandidate& c) {
  if (!c.edited.validation.parse_ok) return Outcome::InvalidHtml;
  if (c.render_failed) return Outcome::RenderFailed;
  if (c.verify_failed || !c.verdict) return Outcome::VerifyFailed;
  return c.verdict->decision == Decision::FullyApplied ? Outcome::Accepted : Outcome::NotApplied;
}

FilterResult filter_accepted(const std::vector<EditCandidate>& candidates) {
  FilterResult r;
  AcceptanceStats& s = r.stats;
  s.candidates_total = candidates.size();
  s.empty = candidates.empty();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const EditCandidate& c = candidates[i];
    if (c.hidden_edit) ++s.hidden_edits;
    switch (classify(c)) {
      case Outcome::InvalidHtml:
        ++s.invalid_html;
        continue;
      case Outcome::RenderFailed:
        ++s.render_failed;
        continue;
      case Outcome::VerifyFailed:
        ++s.verify_failed;
        continue;
      case Outcome::NotApplied:
        ++s.not_applied;
        break;
      case Outcome::Accepted:
        ++s.accepted;
        r.accepted.push_back(i);
        break;
    }
    ++s.verified;
    if (c.verdict->parse_fallback) ++s.parse_fallbacks;
  }
  s.acceptance_rate = s.empty ? 0.0 : static_cast<double>(s.accepted) / static_cast<double>(s.candidates_total);
  return r;
}

json to_json(const AcceptanceStats& s) {
  return {{"candidates_total", s.candidates_total},
          {"accepted", s.accepted},
          {"not_applied", s.not_applied},
          {"render_failed", s.render_failed},
          {"verify_failed", s.verify_failed},
          {"invalid_html", s.invalid_html},
          {"verified", s.verified},
          {"parse_fallbacks", s.parse_fallbacks},
          {"hidden_edits", s.hidden_edits},
          {"acceptance_rate", s.acceptance_rate},
          {"empty", s.empty}};
}

AcceptanceStats acceptance_stats_from_json(const json& j) {
  AcceptanceStats s;
  s.candidates_total = j.at("candidates_total").get<std::size_t>();
  s.accepted = j.at("accepted").get<std::size_t>();
  s.not_applied = j.at("not_applied").get<std::size_t>();
  s.render_failed = j.at("render_failed").get<std::size_t>();
  s.verify_failed = j.at("verify_failed").get<std::size_t>();
  s.invalid_html = j.at("invalid_html").get<std::size_t>();
  s.verified = j.at("verified").get<std::size_t>();
  s.parse_fallbacks = j.value("parse_fallbacks", std::size_t{0});
  s.hidden_edits = j.value("hidden_edits", std::size_t{0});
  s.acceptance_rate = j.at("acceptance_rate").get<double>();
  s.empty = j.at("empty").get<bool>();
  return s;
}

std::string format_stats_table(const AcceptanceStats& s) {
  std::string out;
  auto row = [&](std::string_view name, std::size_t n) { out += fmt::format("{:<18}{:>8}\n", name, n); };
  row("candidates", s.candidates_total);
  row("accepted", s.accepted);
  row("not_applied", s.not_applied);
  row("render_failed", s.render_failed);
  row("verify_failed", s.verify_failed);
  row("invalid_html", s.invalid_html);
  out += fmt::format("{:<18}{:>8.4f}{}\n", "acceptance_rate", s.acceptance_rate, s.empty ? "  (empty)" : "");
  row("parse_fallbacks", s.parse_fallbacks);
  row("hidden_edits", s.hidden_edits);
  return out;
}

}  // namespace webedit
