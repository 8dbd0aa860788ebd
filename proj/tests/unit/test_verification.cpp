#include <gtest/gtest.h>

#include "support.hpp"
#include "webedit/verification.hpp"

using namespace webedit;

TEST(Verdict, ParsesDecisionTokens) {
  struct Case {
    const char* reply;
    Decision decision;
    bool fallback;
  };
  const Case cases[] = {
      {"APPLIED: the header is blue", Decision::FullyApplied, false},
      {"fully_applied", Decision::FullyApplied, false},
      {"Fully applied - looks right", Decision::FullyApplied, false},
      {"\n\n**NOT_APPLIED** nothing changed", Decision::NotApplied, false},
      {"not applied", Decision::NotApplied, false},
      {"Not-Applied.", Decision::NotApplied, false},
      {"## APPLIED", Decision::FullyApplied, false},
      {"APPLIEDX", Decision::NotApplied, true},
      {"I think the change was applied", Decision::NotApplied, true},
      {"", Decision::NotApplied, true},
  };
  for (const auto& c : cases) {
    const Verdict v = parse_verdict("c1", c.reply);
    EXPECT_EQ(v.decision, c.decision) << c.reply;
    EXPECT_EQ(v.parse_fallback, c.fallback) << c.reply;
    EXPECT_EQ(v.raw_response, c.reply);
  }
  EXPECT_EQ(parse_verdict("c", "APPLIED: header is blue").rationale.find("header is blue") != std::string::npos, true);
}

TEST(Verdict, JsonRoundTrip) {
  const Verdict v = parse_verdict("c1", "NOT_APPLIED: no change");
  EXPECT_EQ(verdict_from_json(to_json(v)), v);
  CandidateScores s;
  s.ssim = 0.5;
  s.embed_missing = true;
  const auto back = candidate_scores_from_json(to_json(s));
  EXPECT_EQ(back.ssim, 0.5);
  EXPECT_FALSE(back.embed_sim.has_value());
  EXPECT_TRUE(back.embed_missing);
}

namespace {

EditCandidate candidate(int i) {
  EditCandidate c;
  c.edited.candidate_id = "c" + std::to_string(i);
  c.edited.validation.parse_ok = true;
  return c;
}

Verdict decided(Decision d, bool fallback = false) {
  Verdict v;
  v.decision = d;
  v.parse_fallback = fallback;
  return v;
}

}  // namespace

TEST(Filter, TenCandidateTally) {
  // 2 render failures, 8 verified of which 5 applied.
  std::vector<EditCandidate> cs;
  for (int i = 0; i < 10; ++i) {
    EditCandidate c = candidate(i);
    if (i < 2) {
      c.render_failed = true;
    } else {
      c.verdict = decided(i < 7 ? Decision::FullyApplied : Decision::NotApplied);
    }
    cs.push_back(c);
  }
  const auto r = filter_accepted(cs);
  EXPECT_EQ(r.accepted, (std::vector<std::size_t>{2, 3, 4, 5, 6}));
  EXPECT_EQ(r.stats.accepted, 5u);
  EXPECT_EQ(r.stats.render_failed, 2u);
  EXPECT_EQ(r.stats.not_applied, 3u);
  EXPECT_EQ(r.stats.verified, 8u);
  EXPECT_EQ(r.stats.acceptance_rate, 0.5);
  EXPECT_FALSE(r.stats.empty);
  EXPECT_EQ(acceptance_stats_from_json(to_json(r.stats)), r.stats);
}

TEST(Filter, Precedence) {
  EditCandidate c = candidate(0);
  c.verdict = decided(Decision::FullyApplied);
  EXPECT_EQ(classify(c), Outcome::Accepted);
  c.verify_failed = true;
  EXPECT_EQ(classify(c), Outcome::VerifyFailed);
  c.render_failed = true;
  EXPECT_EQ(classify(c), Outcome::RenderFailed);
  c.edited.validation.parse_ok = false;
  EXPECT_EQ(classify(c), Outcome::InvalidHtml);
  EditCandidate pending = candidate(1);
  EXPECT_EQ(classify(pending), Outcome::VerifyFailed);
}

TEST(Filter, CountsFallbacksAndHiddenEdits) {
  std::vector<EditCandidate> cs{candidate(0), candidate(1)};
  cs[0].verdict = decided(Decision::NotApplied, true);
  cs[1].verdict = decided(Decision::NotApplied);
  cs[1].hidden_edit = true;
  const auto r = filter_accepted(cs);
  EXPECT_EQ(r.stats.parse_fallbacks, 1u);
  EXPECT_EQ(r.stats.hidden_edits, 1u);
  EXPECT_TRUE(r.accepted.empty());
  EXPECT_TRUE(filter_accepted({}).stats.empty);
  EXPECT_EQ(filter_accepted({}).stats.acceptance_rate, 0.0);
}

TEST(Filter, StatsTableMentionsEveryOutcome) {
  std::vector<EditCandidate> cs{candidate(0)};
  const auto table = format_stats_table(filter_accepted(cs).stats);
  for (const char* key : {"accepted", "not_applied", "render_failed", "verify_failed", "invalid_html"}) {
    EXPECT_NE(table.find(key), std::string::npos) << key;
  }
}

TEST(Verify, SendsBothScreenshotsToVerifier) {
  webedit::testing::StubModelServer server;
  webedit::testing::TempDir dir;
  ProviderConfig c;
  c.role = ModelRole::Verifier;
  c.endpoint = server.url("/verifier");
  Gateway gw(dir / "t.jsonl");
  gw.bind(c, make_provider(c));
  EditInstruction ins{"s-i1", "s", "Make it blue", EditCategory::Color};
  EXPECT_EQ(verify_edit("s-i1", ins, std::string("A"), std::string("B"), gw, PromptTemplates::defaults()).decision,
            Decision::FullyApplied);
  EXPECT_EQ(verify_edit("s-i1", ins, std::string("A"), std::string("A"), gw, PromptTemplates::defaults()).decision,
            Decision::NotApplied);
  Screenshot a, b;
  b.viewport.width = 100;
  EXPECT_THROW(verify_edit("s-i1", ins, a, b, gw, PromptTemplates::defaults()), InputError);
}
