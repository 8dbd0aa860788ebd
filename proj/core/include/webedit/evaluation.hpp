#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "webedit/jsonl.hpp"
#include "webedit/metrics.hpp"
#include "webedit/renderer.hpp"
#include "webedit/verification.hpp"

namespace webedit {

/// One edit request with an expert reference and the outputs of several models.
struct EvalCase {
  std::string id;
  std::string instruction;
  std::string original_html;
  std::string reference_html;
  std::map<std::string, std::string> model_outputs;  // model id -> generated html
};

/// Line-delimited {id, instruction, original_html, reference_html, model_outputs}.
/// Throws InputError naming the case when the reference is missing.
std::vector<EvalCase> read_eval_cases(const std::filesystem::path& path);

struct CaseScores {
  double ssim_vs_original = 0.0;
  double ssim_vs_reference = 0.0;
  std::optional<double> embed_vs_original;
  std::optional<double> embed_vs_reference;
  double preservation = 0.0;  // output against the original document
};

class CaseScorer {
 public:
  virtual ~CaseScorer() = default;
  /// nullopt excludes the output (e.g. it failed to render).
  virtual std::optional<CaseScores> score(const EvalCase& c, const std::string& model_id,
                                          const std::string& output_html) = 0;
};

/// Renders the output, the original and the reference, then scores SSIM
/// (clamped), optional embedding similarity and structural preservation.
class RenderingScorer : public CaseScorer {
 public:
  RenderingScorer(Renderer& renderer, Viewport viewport, SettlePolicy settle, SsimParams ssim = {},
                  EmbeddingCache* embeddings = nullptr);
  std::optional<CaseScores> score(const EvalCase& c, const std::string& model_id,
                                  const std::string& output_html) override;

 private:
  Renderer& renderer_;
  Viewport viewport_;
  SettlePolicy settle_;
  SsimParams ssim_;
  EmbeddingCache* embeddings_;
};

struct ModelMetrics {
  std::string model_id;
  std::size_t cases = 0;  // outputs scored
  std::size_t excluded = 0;  // outputs that could not be scored
  double ssim_vs_original = 0.0;
  double ssim_vs_reference = 0.0;
  std::optional<double> embed_vs_original;  // mean over outputs with an embedding
  std::optional<double> embed_vs_reference;
  std::size_t embed_missing = 0;
  double preservation = 0.0;
};

struct EvalTable {
  std::vector<ModelMetrics> rows;  // ordered by model id
};

EvalTable evaluate_models(const std::vector<EvalCase>& cases, CaseScorer& scorer);
std::string format_eval_table(const EvalTable& table);
std::string eval_table_jsonl(const EvalTable& table);

enum class LabelVerdict { Pass, Fail };

std::string_view to_string(LabelVerdict verdict);
LabelVerdict label_verdict_from_string(std::string_view name);

inline constexpr std::string_view kConsensusReviewer = "consensus";

struct ReviewLabel {
  std::string case_id;
  std::string model_id;
  std::string reviewer_id;
  LabelVerdict verdict = LabelVerdict::Fail;
  std::string note;
  std::string timestamp;
};

json to_json(const ReviewLabel& label);
ReviewLabel review_label_from_json(const json& j);

class EmptyLabels : public Error {
 public:
  using Error::Error;
};

/// How several reviewers' labels on one case collapse into one verdict. A
/// label from the "consensus" reviewer always decides its case.
enum class ReductionRule {
  ConsensusRequired,  // unanimous labels decide; disagreements without a consensus label stay unresolved
  BothMustPass,
  AnyPass,
};

std::string_view to_string(ReductionRule rule);
ReductionRule reduction_rule_from_string(std::string_view name);

/// Per-case verdicts for one model, keyed by case id; unresolved cases are absent.
std::map<std::string, LabelVerdict> reduce_labels(const std::vector<ReviewLabel>& labels, const std::string& model_id,
                                                  ReductionRule rule, std::size_t* unresolved = nullptr);

struct PassRate {
  std::string model_id;
  std::size_t passes = 0;
  std::size_t fails = 0;
  std::size_t unresolved = 0;
  double rate = 0.0;

  /// passes * 100 / (passes + fails), computed without an intermediate rate.
  double percent() const;
};

/// Throws EmptyLabels when the model has no resolved labels.
PassRate pass_rate(const std::vector<ReviewLabel>& labels, const std::string& model_id,
                   ReductionRule rule = ReductionRule::ConsensusRequired);

std::string format_pass_rate_table(const std::vector<PassRate>& rows);
std::string pass_rate_jsonl(const std::vector<PassRate>& rows);

struct AgreementReport {
  double kappa = 0.0;
  double observed = 0.0;  // p_o
  double expected = 0.0;  // p_e
  std::size_t n = 0;
  bool degenerate = false;  // p_e = 1: both raters used a single class
};

/// Throws InputError on a length mismatch or empty input.
AgreementReport cohens_kappa(const std::vector<LabelVerdict>& a, const std::vector<LabelVerdict>& b);

/// Landis and Koch interpretation, e.g. "almost perfect agreement".
std::string_view agreement_band(double kappa);

struct HumanAutoAgreement {
  std::size_t matched = 0;
  std::size_t n = 0;
  double fraction = 0.0;
};

/// Share of shared cases where FullyApplied meets Pass or NotApplied meets
/// Fail. Throws EmptyLabels when no case is in both maps.
HumanAutoAgreement human_auto_agreement(const std::map<std::string, Decision>& automatic,
                                        const std::map<std::string, LabelVerdict>& human);

struct EvalSplit {
  std::vector<std::string> train;
  std::vector<std::string> eval;
};

/// Seeded partition; both halves sorted. Throws InputError unless n_eval < ids.size().
EvalSplit split_eval(std::vector<std::string> ids, std::size_t n_eval, std::uint64_t rng_seed);

/// Review statistics shared by the `stats` stage and the review server:
/// kappa between the two human reviewers over doubly labeled cases, per-model
/// pass rates, and human-vs-verifier agreement.
json agreement_summary(const std::vector<ReviewLabel>& labels, const std::map<std::string, Decision>& automatic,
                       ReductionRule rule = ReductionRule::ConsensusRequired);

}  // namespace webedit
