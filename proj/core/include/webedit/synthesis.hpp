#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "webedit/corpus.hpp"
#include "webedit/jsonl.hpp"
#include "webedit/llm_gateway.hpp"

namespace webedit {

enum class EditCategory { Layout, Spacing, Styling, Color, Other };

std::string_view to_string(EditCategory category);
EditCategory edit_category_from_string(std::string_view name);

struct EditInstruction {
  std::string id;
  std::string seed_id;
  std::string text;
  EditCategory category = EditCategory::Other;
};

json to_json(const EditInstruction& instruction);
EditInstruction instruction_from_json(const json& j);

/// A few-shot design edit shown to the instruction generator.
struct Exemplar {
  std::string instruction;
  std::string before_summary;
  std::string after_summary;
};

struct ExemplarSet {
  std::vector<Exemplar> items;

  /// Built-in exemplars covering the layout, spacing, styling and color categories.
  static ExemplarSet defaults();
  /// Reads line-delimited {instruction, before, after} records.
  static ExemplarSet load(const std::filesystem::path& path);
  /// Throws InputError when empty or when an exemplar mentions code.
  void validate() const;
};

struct ValidationReport {
  bool parse_ok = false;
  std::size_t node_count = 0;
  std::vector<std::string> new_external_refs;
  bool truncated = false;
};

struct EditedDocument {
  std::string candidate_id;
  std::string seed_id;
  std::string instruction_id;
  std::string html;
  ValidationReport validation;
};

json to_json(const ValidationReport& report);
ValidationReport validation_report_from_json(const json& j);

/// Prompt templates with named placeholders: {html}, {exemplars}, {instruction}, {k}.
struct PromptTemplates {
  std::string generator;
  std::string generator_repair;
  std::string editor;
  std::string verifier;

  static PromptTemplates defaults();
  /// Files named generator.txt, generator_repair.txt, editor.txt and verifier.txt
  /// override the defaults; missing files keep the default text.
  static PromptTemplates load(const std::filesystem::path& dir);
};

/// Replaces `{name}` placeholders. Unknown placeholders are left untouched.
std::string fill_template(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& values);

struct SynthesisOptions {
  std::size_t k = 5;
  int repair_rounds = 2;
};

struct GenerationResult {
  std::vector<EditInstruction> instructions;
  bool short_result = false;  // fewer than k valid instructions after repair rounds
  std::vector<std::string> rejected;  // lines dropped by the code-token filter
  int rounds = 0;  // generator calls made, including repairs
};

/// Class names and id values in the seed DOM, case-sensitive.
std::set<std::string> extract_identifiers(const SeedPage& seed);
std::set<std::string> extract_identifiers(std::string_view html);

/// True when `text` names markup: an angle-bracket tag, a selector such as
/// ".nav" or "#top" naming a seed identifier, or any seed identifier as a
/// whole token.
bool mentions_code(std::string_view text, const std::set<std::string>& identifiers);

/// Keyword heuristic; Other when nothing matches.
EditCategory categorize_instruction(std::string_view text);

/// Splits a generator reply into candidate instruction lines, stripping list
/// numbering, bullets and surrounding quotes.
std::vector<std::string> parse_instruction_lines(std::string_view reply);

GenerationResult generate_instructions(const SeedPage& seed, const ExemplarSet& exemplars, Gateway& gateway,
                                       const PromptTemplates& templates, const SynthesisOptions& options = {});

/// Isolates the HTML document in an editor reply: drops markdown fences and
/// surrounding prose, keeping the first doctype/html tag through the last
/// </html>. Returns an empty string when no document is present.
std::string extract_html_document(std::string_view reply);

/// Absolute URLs referenced from src/href/srcset/poster/action/data attributes
/// and CSS url()/@import, sorted and de-duplicated.
std::vector<std::string> external_references(std::string_view html);

ValidationReport validate_edit(std::string_view original_html, std::string_view edited_html);

std::string candidate_id_for(const EditInstruction& instruction);

EditedDocument apply_edit(const SeedPage& seed, const EditInstruction& instruction, Gateway& gateway,
                          const PromptTemplates& templates);

}  // namespace webedit
