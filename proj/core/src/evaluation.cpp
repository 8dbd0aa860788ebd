#include "webedit/evaluation.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <set>

#include "webedit/corpus.hpp"

namespace webedit {

std::vector<EvalCase> read_eval_cases(const std::filesystem::path& path) {
  std::vector<EvalCase> out;
  std::set<std::string> seen;
  for (const auto& j : read_jsonl(path)) {
    EvalCase c;
    c.id = j.at("id").get<std::string>();
    if (!seen.insert(c.id).second) throw InputError(fmt::format("duplicate eval case {}", c.id));
    c.instruction = j.at("instruction").get<std::string>();
    c.original_html = j.at("original_html").get<std::string>();
    c.reference_html = j.value("reference_html", "");
    if (c.reference_html.empty()) throw InputError(fmt::format("eval case {} has no reference", c.id));
    if (j.contains("model_outputs")) {
      for (const auto& [model, html] : j["model_outputs"].items()) c.model_outputs[model] = html.get<std::string>();
    }
    out.push_back(std::move(c));
  }
  return out;
}

RenderingScorer::RenderingScorer(Renderer& renderer, Viewport viewport, SettlePolicy settle, SsimParams ssim,
                                 EmbeddingCache* embeddings)
    : renderer_(renderer), viewport_(viewport), settle_(settle), ssim_(ssim), embeddings_(embeddings) {}

std::optional<CaseScores> RenderingScorer::score(const EvalCase& c, const std::string&, const std::string& output) {
  Screenshot out, original, reference;
  try {
    out = renderer_.render(output, viewport_, settle_);
    original = renderer_.render(c.original_html, viewport_, settle_);
    reference = renderer_.render(c.reference_html, viewport_, settle_);
  } catch (const RenderFailed&) {
    return std::nullopt;
  }
  CaseScores s;
  const GrayImage g_out = to_gray(out.image);
  s.ssim_vs_original = compute_ssim(g_out, to_gray(original.image), ssim_).clamped();
  s.ssim_vs_reference = compute_ssim(g_out, to_gray(reference.image), ssim_).clamped();
  if (embeddings_ != nullptr) {
    try {
      const EmbeddingVector e_out = embeddings_->embed(out.png);
      s.embed_vs_original = embed_similarity(e_out, embeddings_->embed(original.png));
      s.embed_vs_reference = embed_similarity(e_out, embeddings_->embed(reference.png));
    } catch (const MetricProviderError&) {
      s.embed_vs_original.reset();
      s.embed_vs_reference.reset();
    }
  }
  s.preservation = structural_preservation(c.original_html, output).score;
  return s;
}

EvalTable evaluate_models(const std::vector<EvalCase>& cases, CaseScorer& scorer) {
  struct Acc {
    ModelMetrics m;
    double eo = 0, er = 0;
    std::size_t embedded = 0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& c : cases) {
    for (const auto& [model, html] : c.model_outputs) {
      Acc& a = acc[model];
      a.m.model_id = model;
      const auto s = scorer.score(c, model, html);
      if (!s) {
        ++a.m.excluded;
        continue;
      }
      ++a.m.cases;
      a.m.ssim_vs_original += s->ssim_vs_original;
      a.m.ssim_vs_reference += s->ssim_vs_reference;
      a.m.preservation += s->preservation;
      if (s->embed_vs_original && s->embed_vs_reference) {
        a.eo += *s->embed_vs_original;
        a.er += *s->embed_vs_reference;
        ++a.embedded;
      } else {
        ++a.m.embed_missing;
      }
    }
  }
  EvalTable t;
  for (auto& [model, a] : acc) {
    if (a.m.cases > 0) {
      const auto n = static_cast<double>(a.m.cases);
      a.m.ssim_vs_original /= n;
      a.m.ssim_vs_reference /= n;
      a.m.preservation /= n;
    }
    if (a.embedded > 0) {
      a.m.embed_vs_original = a.eo / static_cast<double>(a.embedded);
      a.m.embed_vs_reference = a.er / static_cast<double>(a.embedded);
    }
    t.rows.push_back(a.m);
  }
  return t;
}

namespace {

std::string opt4(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("-"); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string format_eval_table(const EvalTable& table) {
  std::string out = fmt::format("{:<28}{:>7}{:>9}{:>12}{:>12}{:>12}{:>12}{:>14}\n", "model", "cases", "excluded",
                                "ssim_vs_C0", "ssim_vs_ref", "embed_vs_C0", "embed_vs_ref", "preservation");
  for (const auto& r : table.rows) {
    out += fmt::format("{:<28}{:>7}{:>9}{:>12.4f}{:>12.4f}{:>12}{:>12}{:>14.4f}\n", r.model_id, r.cases, r.excluded,
                       r.ssim_vs_original, r.ssim_vs_reference, opt4(r.embed_vs_original),
                       opt4(r.embed_vs_reference), r.preservation);
  }
  return out;
}

std::string eval_table_jsonl(const EvalTable& table) {
  std::string out;
  for (const auto& r : table.rows) {
    const json j = {{"model_id", r.model_id},
                    {"cases", r.cases},
                    {"excluded", r.excluded},
                    {"ssim_vs_original", r.ssim_vs_original},
                    {"ssim_vs_reference", r.ssim_vs_reference},
                    {"embed_vs_original", opt_json(r.embed_vs_original)},
                    {"embed_vs_reference", opt_json(r.embed_vs_reference)},
                    {"embed_missing", r.embed_missing},
                    {"preservation", r.preservation}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string_view to_string(LabelVerdict verdict) { return verdict == LabelVerdict::Pass ? "pass" : "fail"; }

LabelVerdict label_verdict_from_string(std::string_view name) {
  if (name == "pass") return LabelVerdict::Pass;
  if (name == "fail") return LabelVerdict::Fail;
  throw InputError(fmt::format("verdict must be 'pass' or 'fail', got '{}'", name));
}

json to_json(const ReviewLabel& l) {
  return {{"case_id", l.case_id},   {"model_id", l.model_id}, {"reviewer_id", l.reviewer_id},
          {"verdict", to_string(l.verdict)}, {"note", l.note}, {"timestamp", l.timestamp}};
}

ReviewLabel review_label_from_json(const json& j) {
  ReviewLabel l;
  l.case_id = j.at("case_id").get<std::string>();
  l.model_id = j.value("model_id", "");
  l.reviewer_id = j.at("reviewer_id").get<std::string>();
  l.verdict = label_verdict_from_string(j.at("verdict").get<std::string>());
  l.note = j.value("note", "");
  l.timestamp = j.value("timestamp", "");
  return l;
}

std::string_view to_string(ReductionRule rule) {
  switch (rule) {
    case ReductionRule::ConsensusRequired:
      return "consensus-required";
    case ReductionRule::BothMustPass:
      return "both-must-pass";
    case ReductionRule::AnyPass:
      return "any-pass";
  }
  return "consensus-required";
}

ReductionRule reduction_rule_from_string(std::string_view name) {
  if (name == "consensus-required") return ReductionRule::ConsensusRequired;
  if (name == "both-must-pass") return ReductionRule::BothMustPass;
  if (name == "any-pass") return ReductionRule::AnyPass;
  throw InputError(fmt::format("unknown reduction rule '{}'", name));
}

std::map<std::string, LabelVerdict> reduce_labels(const std::vector<ReviewLabel>& labels, const std::string& model_id,
                                                  ReductionRule rule, std::size_t* unresolved) {
  std::map<std::string, std::vector<const ReviewLabel*>> by_case;
  for (const auto& l : labels) {
    if (l.model_id == model_id) by_case[l.case_id].push_back(&l);
  }
  std::map<std::string, LabelVerdict> out;
  std::size_t open = 0;
  for (const auto& [case_id, ls] : by_case) {
    auto consensus = std::find_if(ls.begin(), ls.end(), [](const ReviewLabel* l) {
      return l->reviewer_id == kConsensusReviewer;
    });
    if (consensus != ls.end()) {
      out[case_id] = (*consensus)->verdict;
      continue;
    }
    const bool all_pass = std::all_of(ls.begin(), ls.end(), [](auto* l) { return l->verdict == LabelVerdict::Pass; });
    const bool any_pass = std::any_of(ls.begin(), ls.end(), [](auto* l) { return l->verdict == LabelVerdict::Pass; });
    switch (rule) {
      case ReductionRule::ConsensusRequired:
        if (all_pass) out[case_id] = LabelVerdict::Pass;
        else if (!any_pass) out[case_id] = LabelVerdict::Fail;
        else ++open;
        break;
      case ReductionRule::BothMustPass:
        out[case_id] = all_pass ? LabelVerdict::Pass : LabelVerdict::Fail;
        break;
      case ReductionRule::AnyPass:
        out[case_id] = any_pass ? LabelVerdict::Pass : LabelVerdict::Fail;
        break;
    }
  }
  if (unresolved != nullptr) *unresolved = open;
  return out;
}

double PassRate::percent() const {
  const std::size_t total = passes + fails;
  return total == 0 ? 0.0 : static_cast<double>(passes) * 100.0 / static_cast<double>(total);
}

PassRate pass_rate(const std::vector<ReviewLabel>& labels, const std::string& model_id, ReductionRule rule) {
  PassRate r;
  r.model_id = model_id;
  const auto reduced = reduce_labels(labels, model_id, rule, &r.unresolved);
  if (reduced.empty()) throw EmptyLabels(fmt::format("no resolved labels for model '{}'", model_id));
  for (const auto& [case_id, v] : reduced) (v == LabelVerdict::Pass ? r.passes : r.fails)++;
  r.rate = static_cast<double>(r.passes) / static_cast<double>(r.passes + r.fails);
  return r;
}

std::string format_pass_rate_table(const std::vector<PassRate>& rows) {
  std::string out = fmt::format("{:<28}{:>8}{:>8}{:>10}\n", "model", "pass", "fail", "pass_rate");
  for (const auto& r : rows) {
    out += fmt::format("{:<28}{:>8}{:>8}{:>9.0f}%\n", r.model_id, r.passes, r.fails, r.percent());
  }
  return out;
}

std::string pass_rate_jsonl(const std::vector<PassRate>& rows) {
  std::string out;
  for (const auto& r : rows) {
    const json j = {{"model_id", r.model_id}, {"pass", r.passes},      {"fail", r.fails},
                    {"unresolved", r.unresolved}, {"rate", r.rate}, {"percent", r.percent()}};
    out += j.dump() + "\n";
  }
  return out;
}

AgreementReport cohens_kappa(const std::vector<LabelVerdict>& a, const std::vector<LabelVerdict>& b) {
  if (a.size() != b.size()) {
    throw InputError(fmt::format("label vectors differ in length: {} vs {}", a.size(), b.size()));
  }
  if (a.empty()) throw InputError("kappa needs at least one labeled case");
  AgreementReport r;
  r.n = a.size();
  std::size_t equal = 0, a_pass = 0, b_pass = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    equal += a[i] == b[i] ? 1 : 0;
    a_pass += a[i] == LabelVerdict::Pass ? 1 : 0;
    b_pass += b[i] == LabelVerdict::Pass ? 1 : 0;
  }
  const double n = static_cast<double>(r.n);
  r.observed = static_cast<double>(equal) / n;
  const double pa = static_cast<double>(a_pass) / n;
  const double pb = static_cast<double>(b_pass) / n;
  r.expected = pa * pb + (1.0 - pa) * (1.0 - pb);
  if (r.expected >= 1.0) {
    r.degenerate = true;
    r.kappa = r.observed == 1.0 ? 1.0 : 0.0;
  } else {
    r.kappa = (r.observed - r.expected) / (1.0 - r.expected);
  }
  return r;
}

std::string_view agreement_band(double kappa) {
  if (kappa < 0.0) return "poor agreement";
  if (kappa <= 0.20) return "slight agreement";
  if (kappa <= 0.40) return "fair agreement";
  if (kappa <= 0.60) return "moderate agreement";
  if (kappa <= 0.80) return "substantial agreement";
  return "almost perfect agreement";
}

HumanAutoAgreement human_auto_agreement(const std::map<std::string, Decision>& automatic,
                                        const std::map<std::string, LabelVerdict>& human) {
  HumanAutoAgreement r;
  for (const auto& [case_id, decision] : automatic) {
    auto it = human.find(case_id);
    if (it == human.end()) continue;
    ++r.n;
    const bool pass = it->second == LabelVerdict::Pass;
    if (pass == (decision == Decision::FullyApplied)) ++r.matched;
  }
  if (r.n == 0) throw EmptyLabels("no case carries both a verifier verdict and a human label");
  r.fraction = static_cast<double>(r.matched) / static_cast<double>(r.n);
  return r;
}

EvalSplit split_eval(std::vector<std::string> ids, std::size_t n_eval, std::uint64_t rng_seed) {
  if (n_eval >= ids.size()) {
    throw InputError(fmt::format("eval size {} must be smaller than the dataset ({})", n_eval, ids.size()));
  }
  std::sort(ids.begin(), ids.end());
  const auto order = seeded_permutation(ids.size(), rng_seed);
  EvalSplit s;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_eval ? s.eval : s.train).push_back(ids[order[i]]);
  std::sort(s.eval.begin(), s.eval.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

json agreement_summary(const std::vector<ReviewLabel>& labels, const std::map<std::string, Decision>& automatic,
                       ReductionRule rule) {
  std::set<std::string> reviewers, models;
  for (const auto& l : labels) {
    models.insert(l.model_id);
    if (l.reviewer_id != kConsensusReviewer) reviewers.insert(l.reviewer_id);
  }
  json out = {{"labels", labels.size()},
              {"reviewers", json(std::vector<std::string>(reviewers.begin(), reviewers.end()))},
              {"rule", to_string(rule)}};

  json kappa = nullptr;
  if (reviewers.size() >= 2) {
    const std::string a = *reviewers.begin();
    const std::string b = *std::next(reviewers.begin());
    std::map<std::pair<std::string, std::string>, std::pair<std::optional<LabelVerdict>, std::optional<LabelVerdict>>>
        pairs;
    for (const auto& l : labels) {
      auto& slot = pairs[{l.model_id, l.case_id}];
      if (l.reviewer_id == a) slot.first = l.verdict;
      if (l.reviewer_id == b) slot.second = l.verdict;
    }
    std::vector<LabelVerdict> va, vb;
    for (const auto& [key, p] : pairs) {
      if (p.first && p.second) {
        va.push_back(*p.first);
        vb.push_back(*p.second);
      }
    }
    if (!va.empty()) {
      const AgreementReport r = cohens_kappa(va, vb);
      kappa = {{"reviewers", {a, b}}, {"n", r.n},       {"p_o", r.observed}, {"p_e", r.expected},
               {"kappa", r.kappa},    {"degenerate", r.degenerate}, {"band", agreement_band(r.kappa)}};
    }
  }
  out["kappa"] = kappa;

  json rates = json::array();
  std::map<std::string, LabelVerdict> human;
  for (const auto& model : models) {
    try {
      const PassRate p = pass_rate(labels, model, rule);
      rates.push_back({{"model_id", p.model_id}, {"pass", p.passes},      {"fail", p.fails},
                       {"unresolved", p.unresolved}, {"rate", p.rate}, {"percent", p.percent()}});
    } catch (const EmptyLabels&) {
    }
    for (const auto& [case_id, v] : reduce_labels(labels, model, rule)) human.emplace(case_id, v);
  }
  out["pass_rates"] = std::move(rates);

  json agreement = nullptr;
  try {
    const HumanAutoAgreement h = human_auto_agreement(automatic, human);
    agreement = {{"matched", h.matched}, {"n", h.n}, {"fraction", h.fraction}};
  } catch (const EmptyLabels&) {
  }
  out["human_auto"] = agreement;
  return out;
}

}  // namespace webedit
