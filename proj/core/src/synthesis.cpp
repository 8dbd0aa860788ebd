#include "webedit/synthesis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <unordered_set>

#include "webedit/html.hpp"
#include "webedit/jsonl.hpp"

namespace webedit {

namespace fs = std::filesystem;

std::string_view to_string(EditCategory category) {
  switch (category) {
    case EditCategory::Layout:
      return "layout";
    case EditCategory::Spacing:
      return "spacing";
    case EditCategory::Styling:
      return "styling";
    case EditCategory::Color:
      return "color";
    case EditCategory::Other:
      return "other";
  }
  return "other";
}

EditCategory edit_category_from_string(std::string_view name) {
  if (name == "layout") return EditCategory::Layout;
  if (name == "spacing") return EditCategory::Spacing;
  if (name == "styling") return EditCategory::Styling;
  if (name == "color") return EditCategory::Color;
  if (name == "other") return EditCategory::Other;
  throw InputError(fmt::format("unknown edit category '{}'", name));
}

json to_json(const EditInstruction& ins) {
  return {{"id", ins.id}, {"seed_id", ins.seed_id}, {"text", ins.text}, {"category", to_string(ins.category)}};
}

EditInstruction instruction_from_json(const json& j) {
  return {j.at("id").get<std::string>(), j.at("seed_id").get<std::string>(), j.at("text").get<std::string>(),
          edit_category_from_string(j.value("category", "other"))};
}

json to_json(const ValidationReport& r) {
  return {{"parse_ok", r.parse_ok},
          {"node_count", r.node_count},
          {"new_external_refs", r.new_external_refs},
          {"truncated", r.truncated}};
}

ValidationReport validation_report_from_json(const json& j) {
  ValidationReport r;
  r.parse_ok = j.at("parse_ok").get<bool>();
  r.node_count = j.value("node_count", std::size_t{0});
  r.new_external_refs = j.value("new_external_refs", std::vector<std::string>{});
  r.truncated = j.value("truncated", false);
  return r;
}

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
}

std::vector<std::string> ident_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !is_ident_char(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && is_ident_char(text[j])) ++j;
    if (j > i) {
      std::string_view tok = text.substr(i, j - i);
      // Hyphens at token edges are punctuation ("- like this"), not part of a name.
      while (!tok.empty() && tok.front() == '-') tok.remove_prefix(1);
      while (!tok.empty() && tok.back() == '-') tok.remove_suffix(1);
      if (!tok.empty()) out.emplace_back(tok);
    }
    i = j;
  }
  return out;
}

std::string normalize_for_dedup(std::string_view text) {
  std::string out;
  bool space = false;
  for (char c : trim(text)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  while (!out.empty() && (out.back() == '.' || out.back() == '!')) out.pop_back();
  return out;
}

bool has_tag_syntax(std::string_view text) {
  static const std::regex tag_re(R"(<\s*/?\s*[A-Za-z][A-Za-z0-9-]*(\s|>|/|$))");
  return std::regex_search(text.begin(), text.end(), tag_re);
}

bool has_selector_syntax(std::string_view text) {
  static const std::regex selector_re(R"((^|[\s(,])[.#][A-Za-z_][A-Za-z0-9_-]*)");
  return std::regex_search(text.begin(), text.end(), selector_re);
}

std::string render_exemplars(const ExemplarSet& exemplars) {
  std::string out;
  for (const auto& ex : exemplars.items) {
    out += fmt::format("- \"{}\" (before: {}; after: {})\n", ex.instruction, ex.before_summary, ex.after_summary);
  }
  return out;
}

constexpr std::string_view kGeneratorTemplate =
    R"(You are a product designer reviewing an existing web page. Propose {k} distinct visual design changes that a stakeholder might ask for on this page.

Rules:
- Write each request as one plain-English sentence, the way a non-technical person would say it.
- Describe what should change visually. Never mention code, HTML tags, CSS properties, selectors, class names or id names.
- Vary the kind of change: layout, spacing, typography and color.
- Output exactly {k} lines, numbered 1 to {k}, with no other text.

Examples of well-phrased requests:
{exemplars}
Page source:
{html}
)";

constexpr std::string_view kGeneratorRepairTemplate =
    R"(These requests mentioned code or markup and were discarded:
{rejected}
Write {k} new requests that follow the rules, numbered 1 to {k}, with no other text.
)";

constexpr std::string_view kEditorTemplate =
    R"(You are a front-end developer. Apply the following design change to the web page below.

Change request: {instruction}

Return the complete, fully rewritten HTML document with the change applied. Keep everything unrelated to the request exactly as it is. Do not return a diff or a fragment and do not add explanations.

Original document:
{html}
)";

constexpr std::string_view kVerifierTemplate =
    R"(You are a strict visual reviewer. The first image shows a web page before an edit; the second image shows the same page after the edit.

Edit request: {instruction}

Decide whether the request is fully visible in the second image. Start the first line with APPLIED or NOT_APPLIED, then a colon and a one-sentence reason. Partial or invisible changes count as NOT_APPLIED.
)";

struct CategoryKeywords {
  EditCategory category;
  std::vector<std::string_view> words;    // whole-token matches
  std::vector<std::string_view> phrases;  // substring matches on normalized text
};

const std::array<CategoryKeywords, 4>& category_keywords() {
  // Array order is the tie-break order.
  static const std::array<CategoryKeywords, 4> table{{
      {EditCategory::Spacing,
       {"padding", "margin", "margins", "spacing", "space", "spaced", "gap", "gaps", "whitespace", "indent",
        "tighter", "roomier"},
       {"breathing room", "white space", "closer together", "further apart", "line height"}},
      {EditCategory::Color,
       {"color", "colors", "colour", "colours", "background", "palette", "hue", "tint", "shade", "contrast",
        "darker", "lighter", "softer", "warmer", "cooler", "red", "blue", "green", "yellow", "orange", "purple",
        "pink", "gray", "grey", "black", "teal", "navy", "gradient", "monochrome", "pastel"},
       {}},
      {EditCategory::Styling,
       {"font", "fonts", "typeface", "typography", "bold", "bolder", "italic", "underline", "underlined",
        "border", "borders", "rounded", "corners", "shadow", "shadows", "uppercase", "style", "styling",
        "modern", "elegant", "smaller", "larger", "bigger"},
       {"text size"}},
      {EditCategory::Layout,
       {"layout", "align", "aligned", "alignment", "center", "centre", "centered", "left", "right", "column",
        "columns", "grid", "row", "position", "move", "reorder", "minimalist", "stack", "stacked", "arrange",
        "sidebar", "width", "swap"},
       {"side by side", "full width"}},
  }};
  return table;
}

}  // namespace

ExemplarSet ExemplarSet::defaults() {
  return {{
      {"Make the navigation bar feel less cluttered.", "eight links packed tightly in the top bar",
       "fewer links with even gaps between them"},
      {"Add more breathing room between the product cards.", "cards nearly touching each other",
       "cards separated by generous gaps"},
      {"Make the main headline bolder and more modern.", "thin serif headline", "heavy sans-serif headline"},
      {"Use a softer, warmer background color for the page.", "stark white background",
       "light cream background"},
      {"Center the welcome text and the button below it.", "text and button hugging the left edge",
       "text and button centered in the banner"},
  }};
}

ExemplarSet ExemplarSet::load(const fs::path& path) {
  ExemplarSet set;
  for (const auto& r : read_jsonl(path)) {
    set.items.push_back({r.at("instruction").get<std::string>(), r.value("before", std::string{}),
                         r.value("after", std::string{})});
  }
  return set;
}

void ExemplarSet::validate() const {
  if (items.empty()) throw InputError("exemplar set is empty");
  for (const auto& ex : items) {
    if (trim(ex.instruction).empty()) throw InputError("exemplar with empty instruction");
    if (mentions_code(ex.instruction, {}) || has_selector_syntax(ex.instruction)) {
      throw InputError(fmt::format("exemplar mentions code: {}", ex.instruction));
    }
  }
}

PromptTemplates PromptTemplates::defaults() {
  return {std::string(kGeneratorTemplate), std::string(kGeneratorRepairTemplate), std::string(kEditorTemplate),
          std::string(kVerifierTemplate)};
}

PromptTemplates PromptTemplates::load(const fs::path& dir) {
  PromptTemplates t = defaults();
  auto maybe = [&](const char* name, std::string& slot) {
    const fs::path p = dir / name;
    if (fs::exists(p)) slot = read_file(p);
  };
  maybe("generator.txt", t.generator);
  maybe("generator_repair.txt", t.generator_repair);
  maybe("editor.txt", t.editor);
  maybe("verifier.txt", t.verifier);
  return t;
}

std::string fill_template(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string_view name = tmpl.substr(i + 1, close - i - 1);
        auto it = std::find_if(values.begin(), values.end(), [&](const auto& kv) { return kv.first == name; });
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::set<std::string> extract_identifiers(std::string_view html) {
  std::set<std::string> out;
  const html::Document doc = html::parse(html);
  html::walk(doc.root(), [&](const html::Node& node) {
    if (node.kind != html::NodeKind::Element) return;
    if (const std::string* id = node.attribute("id")) {
      const std::string_view v = trim(*id);
      if (!v.empty()) out.emplace(v);
    }
    if (const std::string* cls = node.attribute("class")) {
      std::size_t i = 0;
      const std::string& s = *cls;
      while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace(s.substr(i, j - i));
        i = j;
      }
    }
  });
  return out;
}

std::set<std::string> extract_identifiers(const SeedPage& seed) { return extract_identifiers(seed.html); }

bool mentions_code(std::string_view text, const std::set<std::string>& identifiers) {
  if (has_tag_syntax(text)) return true;
  if (identifiers.empty()) return false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '.' && text[i] != '#') continue;
    std::size_t j = i + 1;
    while (j < text.size() && is_ident_char(text[j])) ++j;
    if (j > i + 1 && identifiers.count(std::string(text.substr(i + 1, j - i - 1))) > 0) return true;
  }
  for (const auto& tok : ident_tokens(text)) {
    if (identifiers.count(tok) > 0) return true;
  }
  return false;
}

EditCategory categorize_instruction(std::string_view text) {
  const std::string lower = lowercase(text);
  const auto tokens = ident_tokens(lower);
  const std::unordered_set<std::string> token_set(tokens.begin(), tokens.end());
  EditCategory best = EditCategory::Other;
  int best_hits = 0;
  for (const auto& entry : category_keywords()) {
    int hits = 0;
    for (auto w : entry.words) hits += token_set.count(std::string(w)) > 0 ? 1 : 0;
    for (auto p : entry.phrases) hits += lower.find(p) != std::string::npos ? 1 : 0;
    if (hits > best_hits) {
      best = entry.category;
      best_hits = hits;
    }
  }
  return best;
}

std::vector<std::string> parse_instruction_lines(std::string_view reply) {
  static const std::regex bullet_re(R"(^(\(?\d+\s*[.):\-]\)?|[-*•])\s*)");
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    std::size_t nl = reply.find('\n', pos);
    if (nl == std::string_view::npos) nl = reply.size();
    std::string line(trim(reply.substr(pos, nl - pos)));
    pos = nl + 1;
    if (line.empty() || line.rfind("```", 0) == 0) continue;
    line = std::regex_replace(line, bullet_re, "", std::regex_constants::format_first_only);
    if (line.rfind("\xE2\x80\xA2", 0) == 0) line.erase(0, 3);  // UTF-8 bullet
    std::string_view v = trim(line);
    while (v.size() >= 2 && v.substr(0, 2) == "**") v.remove_prefix(2);
    while (v.size() >= 2 && v.substr(v.size() - 2) == "**") v.remove_suffix(2);
    v = trim(v);
    for (std::string_view q : {std::string_view("\""), std::string_view("'"), std::string_view("\xE2\x80\x9C")}) {
      if (v.size() >= q.size() && v.substr(0, q.size()) == q) v.remove_prefix(q.size());
    }
    for (std::string_view q : {std::string_view("\""), std::string_view("'"), std::string_view("\xE2\x80\x9D")}) {
      if (v.size() >= q.size() && v.substr(v.size() - q.size()) == q) v.remove_suffix(q.size());
    }
    v = trim(v);
    if (v.empty() || v.back() == ':') continue;
    out.emplace_back(v);
  }
  return out;
}

GenerationResult generate_instructions(const SeedPage& seed, const ExemplarSet& exemplars, Gateway& gateway,
                                       const PromptTemplates& templates, const SynthesisOptions& options) {
  exemplars.validate();
  if (options.k == 0) throw InputError("instructions per seed must be positive");
  const std::set<std::string> identifiers = extract_identifiers(seed);

  GenerationResult result;
  std::set<std::string> seen;
  std::vector<std::string> accepted;

  ChatRequest request;
  request.role = ModelRole::InstructionGenerator;
  request.messages.push_back(
      {"user",
       fill_template(templates.generator, {{"k", std::to_string(options.k)},
                                           {"exemplars", render_exemplars(exemplars)},
                                           {"html", seed.html}}),
       {}});

  for (int round = 0;; ++round) {
    ChatResponse reply = gateway.complete(request);
    ++result.rounds;
    std::vector<std::string> round_rejected;
    for (auto& line : parse_instruction_lines(reply.text)) {
      if (mentions_code(line, identifiers)) {
        round_rejected.push_back(line);
        continue;
      }
      if (accepted.size() >= options.k) continue;
      if (seen.insert(normalize_for_dedup(line)).second) accepted.push_back(std::move(line));
    }
    result.rejected.insert(result.rejected.end(), round_rejected.begin(), round_rejected.end());
    if (accepted.size() >= options.k || round_rejected.empty() || round >= options.repair_rounds) break;

    std::string rejected_list;
    for (const auto& r : round_rejected) rejected_list += "- " + r + "\n";
    request.messages.push_back({"assistant", reply.text, {}});
    request.messages.push_back(
        {"user",
         fill_template(templates.generator_repair,
                       {{"k", std::to_string(options.k - accepted.size())}, {"rejected", rejected_list}}),
         {}});
  }

  for (std::size_t i = 0; i < accepted.size(); ++i) {
    EditInstruction ins;
    ins.id = fmt::format("{}-i{}", seed.id, i + 1);
    ins.seed_id = seed.id;
    ins.category = categorize_instruction(accepted[i]);
    ins.text = std::move(accepted[i]);
    result.instructions.push_back(std::move(ins));
  }
  result.short_result = result.instructions.size() < options.k;
  return result;
}

namespace {

std::size_t find_ci(std::string_view s, std::string_view needle, std::size_t from = 0) {
  if (needle.size() > s.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= s.size(); ++i) {
    bool eq = true;
    for (std::size_t k = 0; k < needle.size() && eq; ++k) {
      eq = std::tolower(static_cast<unsigned char>(s[i + k])) == std::tolower(static_cast<unsigned char>(needle[k]));
    }
    if (eq) return i;
  }
  return std::string_view::npos;
}

std::size_t rfind_ci(std::string_view s, std::string_view needle) {
  std::size_t last = std::string_view::npos;
  for (std::size_t at = find_ci(s, needle); at != std::string_view::npos; at = find_ci(s, needle, at + 1)) last = at;
  return last;
}

}  // namespace

std::string extract_html_document(std::string_view reply) {
  std::size_t start = find_ci(reply, "<!doctype");
  if (start == std::string_view::npos) start = find_ci(reply, "<html");
  if (start != std::string_view::npos) {
    const std::size_t end = rfind_ci(reply, "</html>");
    if (end != std::string_view::npos && end > start) return std::string(reply.substr(start, end + 7 - start));
    std::string_view rest = reply.substr(start);
    const std::size_t fence = rest.find("\n```");
    if (fence != std::string_view::npos) rest = rest.substr(0, fence);
    return std::string(rest);
  }
  const std::size_t fence = reply.find("```");
  if (fence != std::string_view::npos) {
    const std::size_t body = reply.find('\n', fence);
    if (body != std::string_view::npos) {
      const std::size_t close = reply.find("```", body + 1);
      std::string_view inner = trim(reply.substr(body + 1, close == std::string_view::npos ? std::string_view::npos
                                                                                              : close - body - 1));
      if (!inner.empty() && inner.front() == '<') return std::string(inner);
    }
  }
  std::string_view t = trim(reply);
  if (!t.empty() && t.front() == '<') return std::string(t);
  return {};
}

namespace {

bool is_absolute_url(std::string_view v) {
  v = trim(v);
  const std::string lower = lowercase(v.substr(0, 8));
  return lower.rfind("http://", 0) == 0 || lower.rfind("https://", 0) == 0 || lower.rfind("//", 0) == 0;
}

void collect_css_urls(std::string_view css, std::set<std::string>& out) {
  static const std::regex url_re(R"(url\(\s*['"]?([^'")\s]+))", std::regex::icase);
  static const std::regex import_re(R"(@import\s+['"]([^'"]+)['"])", std::regex::icase);
  for (const auto* re : {&url_re, &import_re}) {
    for (std::cregex_iterator it(css.begin(), css.end(), *re), end; it != end; ++it) {
      const std::string v = (*it)[1].str();
      if (is_absolute_url(v)) out.insert(std::string(trim(v)));
    }
  }
}

}  // namespace

std::vector<std::string> external_references(std::string_view html_text) {
  std::set<std::string> refs;
  const html::Document doc = html::parse(html_text);
  html::walk(doc.root(), [&](const html::Node& node) {
    if (node.kind != html::NodeKind::Element) return;
    for (const auto& a : node.attributes) {
      if (a.name == "src" || a.name == "href" || a.name == "poster" || a.name == "action" || a.name == "data" ||
          a.name == "background") {
        if (is_absolute_url(a.value)) refs.insert(std::string(trim(a.value)));
      } else if (a.name == "srcset") {
        std::size_t i = 0;
        while (i < a.value.size()) {
          std::size_t comma = a.value.find(',', i);
          if (comma == std::string::npos) comma = a.value.size();
          std::string_view cand = trim(std::string_view(a.value).substr(i, comma - i));
          cand = cand.substr(0, cand.find_first_of(" \t"));
          if (is_absolute_url(cand)) refs.insert(std::string(cand));
          i = comma + 1;
        }
      } else if (a.name == "style") {
        collect_css_urls(a.value, refs);
      }
    }
    if (node.name == "style") {
      for (const auto& c : node.children) {
        if (c->kind == html::NodeKind::Text) collect_css_urls(c->text, refs);
      }
    }
  });
  return {refs.begin(), refs.end()};
}

ValidationReport validate_edit(std::string_view original_html, std::string_view edited_html) {
  ValidationReport report;
  if (trim(edited_html).empty()) return report;
  const html::Document doc = html::parse(edited_html);
  const html::SourceFacts& facts = doc.facts();
  // A missing </html> only signals truncation when the original document closed it.
  const bool original_closed = html::parse(original_html).facts().html_end_tag;
  report.truncated = facts.unterminated_markup || (facts.html_start_tag && !facts.html_end_tag && original_closed);
  report.node_count = doc.element_count();
  report.parse_ok = !doc.empty() && !report.truncated;

  const auto before = external_references(original_html);
  for (auto& ref : external_references(edited_html)) {
    if (!std::binary_search(before.begin(), before.end(), ref)) report.new_external_refs.push_back(std::move(ref));
  }
  return report;
}

std::string candidate_id_for(const EditInstruction& instruction) { return instruction.id; }

EditedDocument apply_edit(const SeedPage& seed, const EditInstruction& instruction, Gateway& gateway,
                          const PromptTemplates& templates) {
  if (instruction.seed_id != seed.id) {
    throw InputError(fmt::format("instruction {} belongs to seed {}, not {}", instruction.id, instruction.seed_id,
                                 seed.id));
  }
  ChatRequest request;
  request.role = ModelRole::Editor;
  request.messages.push_back(
      {"user", fill_template(templates.editor, {{"instruction", instruction.text}, {"html", seed.html}}), {}});
  const ChatResponse reply = gateway.complete(request);

  EditedDocument doc;
  doc.candidate_id = candidate_id_for(instruction);
  doc.seed_id = seed.id;
  doc.instruction_id = instruction.id;
  doc.html = extract_html_document(reply.text);
  doc.validation = validate_edit(seed.html, doc.html);
  return doc;
}

}  // namespace webedit
