#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "support.hpp"
#include "webedit/pipeline.hpp"

using namespace webedit;
using namespace webedit::testing;

namespace {

struct FakeRun {
  TempDir dir;
  StubModelServer server;
  std::shared_ptr<FakeRenderer> renderer = std::make_shared<FakeRenderer>();
  RunConfig config;

  FakeRun() {
    write_scripted_corpus(dir / "corpus");
    config = scripted_http_config(dir / "corpus", server, dir / "embeddings.jsonl");
  }

  std::unique_ptr<Pipeline> open(bool resume = false) {
    PipelineOptions o;
    o.resume = resume;
    o.renderer = renderer;
    return std::make_unique<Pipeline>(config, dir / "run", o);
  }
};

std::size_t line_count(const std::filesystem::path& p) { return read_jsonl(p).size(); }

}  // namespace

TEST(RunConfig, ParsesResolvesAndRejectsUnknownKeys) {
  TempDir dir;
  const json j = {{"corpus", "pages"},
                  {"k", 3},
                  {"viewport", {{"width", 800}}},
                  {"providers", {{"editor", {{"kind", "http"}, {"endpoint", "http://x/e"}}}}}};
  const RunConfig c = run_config_from_json(j, dir.path());
  EXPECT_EQ(c.corpus, dir / "pages");
  EXPECT_EQ(c.k, 3u);
  EXPECT_EQ(c.viewport.width, 800);
  EXPECT_EQ(c.viewport.height, 800);
  EXPECT_EQ(c.providers.at(ModelRole::Editor).temperature, default_temperature(ModelRole::Editor));

  EXPECT_THROW(run_config_from_json({{"corpus", "x"}, {"sampel_size", 3}}, dir.path()), InputError);
  EXPECT_THROW(run_config_from_json({{"viewport", {{"depth", 1}}}}, dir.path()), InputError);
  EXPECT_THROW(run_config_from_json({{"providers", {{"editor", {{"kind", "playback"}}}}}}, dir.path()), InputError);
  EXPECT_THROW(run_config_from_json({{"token_estimator", "bpe"}}, dir.path()), InputError);

  const RunConfig again = run_config_from_json(to_json(c), "/elsewhere");
  EXPECT_EQ(to_json(again), to_json(c));
}

TEST(Pipeline, DependencyGates) {
  FakeRun run;
  auto p = run.open();
  try {
    p->run(Stage::Filter);
    FAIL();
  } catch (const DependencyMissing& e) {
    EXPECT_EQ(e.path().filename(), "verdicts.jsonl");
    EXPECT_NE(std::string(e.what()).find("verdicts.jsonl"), std::string::npos);
  }
  EXPECT_THROW(p->run(Stage::Sample), DependencyMissing);
  EXPECT_THROW(p->run(Stage::Export), DependencyMissing);
  EXPECT_TRUE(std::filesystem::exists(run.dir / "run/config.effective.json"));
}

TEST(Pipeline, OneProcessPerRunDirectory) {
  FakeRun run;
  auto p = run.open();
  EXPECT_THROW(run.open(), InputError);
  p.reset();
  EXPECT_NO_THROW(run.open());
}

TEST(Pipeline, FullRunAccountsForEveryCandidate) {
  FakeRun run;
  auto p = run.open();
  for (Stage s : build_stages()) p->run(s);
  const auto expected = scripted_counts();
  const auto stats = acceptance_stats_from_json(json::parse(read_file(run.dir / "run/filter/stats.json")));
  EXPECT_EQ(stats.candidates_total, kScriptedSeeds * kScriptedK);
  EXPECT_EQ(stats.accepted, expected.accepted);
  EXPECT_EQ(stats.not_applied, expected.not_applied);
  EXPECT_EQ(stats.invalid_html, expected.invalid_html);
  EXPECT_EQ(stats.render_failed, expected.render_failed);
  EXPECT_EQ(stats.verify_failed, expected.verify_failed);
  EXPECT_EQ(line_count(run.dir / "run/dataset/index.jsonl"), expected.accepted);
  EXPECT_EQ(line_count(run.dir / "run/export/train.jsonl"), expected.accepted);
  EXPECT_TRUE(std::filesystem::exists(run.dir / "run/stats/summary.txt"));
  EXPECT_TRUE(std::filesystem::exists(run.dir / "run/summaries/render.txt"));
  EXPECT_EQ(run.server.calls("/generator"), kScriptedSeeds);
  EXPECT_EQ(run.server.calls("/editor"), kScriptedSeeds * kScriptedK);

  // Each accepted record carries all three scores.
  for (const auto& r : read_jsonl(run.dir / "run/dataset/index.jsonl")) {
    EXPECT_TRUE(r["scores"]["ssim"].is_number());
    EXPECT_TRUE(r["scores"]["embed_sim"].is_number());
    EXPECT_TRUE(r["scores"]["preservation"].is_number());
  }
}

TEST(Pipeline, RerunsSkipCompletedWork) {
  FakeRun run;
  auto p = run.open();
  for (Stage s : build_stages()) p->run(s);
  const std::string renders = read_file(run.dir / "run/renders/renders.jsonl");
  const std::string index = read_file(run.dir / "run/dataset/index.jsonl");
  const std::size_t fake_renders = run.renderer->renders();
  const std::size_t editor_calls = run.server.calls("/editor");

  for (Stage s : {Stage::Gen, Stage::Edit, Stage::Render, Stage::Verify, Stage::Filter}) {
    const auto summary = p->run(s);
    EXPECT_EQ(summary.failed, 0u) << to_string(s);
    if (s != Stage::Filter) EXPECT_EQ(summary.processed, 0u) << to_string(s);
  }
  const auto render = p->run(Stage::Render);
  const auto expected = scripted_counts();
  // Failed renders stay recorded and are only retried under --resume.
  EXPECT_EQ(render.skipped, expected.total() - expected.invalid_html);
  EXPECT_EQ(read_file(run.dir / "run/renders/renders.jsonl"), renders);
  EXPECT_EQ(read_file(run.dir / "run/dataset/index.jsonl"), index);
  EXPECT_EQ(run.renderer->renders(), fake_renders);
  EXPECT_EQ(run.server.calls("/editor"), editor_calls);
}

TEST(Pipeline, ResumeRetriesFailures) {
  FakeRun run;
  {
    auto p = run.open();
    for (Stage s : build_stages()) p->run(s);
  }
  const std::size_t verifier_calls = run.server.calls("/verifier");
  const auto expected = scripted_counts();
  auto p = run.open(true);
  const auto verify = p->run(Stage::Verify);
  EXPECT_EQ(verify.failed, expected.verify_failed);
  // Two attempts per still-failing candidate.
  EXPECT_EQ(run.server.calls("/verifier"), verifier_calls + 2 * expected.verify_failed);
  const auto render = p->run(Stage::Render);
  EXPECT_EQ(render.failed, expected.render_failed);
}

TEST(Pipeline, ReviewCasesSampledFromDataset) {
  FakeRun run;
  run.config.review.sample_size = 4;
  run.config.review.port = -1;  // invalid port: the server fails to bind after cases are written
  auto p = run.open();
  for (Stage s : build_stages()) p->run(s);
  EXPECT_THROW(p->run(Stage::ReviewServe), Error);
  const auto cases = read_jsonl(run.dir / "run/review/cases.jsonl");
  ASSERT_EQ(cases.size(), 4u);
  for (const auto& c : cases) EXPECT_EQ(c["automatic"], "fully_applied");
}

#ifdef WEBEDIT_CLI_PATH
namespace {

int run_cli(const std::string& args) {
  const int status = std::system((std::string(WEBEDIT_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir;
  write_scripted_corpus(dir / "corpus");
  write_file_atomic(dir / "config.json", json({{"corpus", "corpus"}, {"sample_size", 3}}).dump());
  const std::string base = "--config " + (dir / "config.json").string() + " --run-dir " + (dir / "run").string();
  EXPECT_EQ(run_cli(base + " --stage filter"), 2);
  EXPECT_EQ(run_cli(base + " --stage nonsense"), 2);
  EXPECT_EQ(run_cli("--config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("--bogus-flag"), 2);
  EXPECT_EQ(run_cli(base + " --stage ingest"), 0);
  EXPECT_EQ(run_cli(base + " --stage sample --n 2 --seed 9"), 0);
  EXPECT_EQ(read_jsonl(dir / "run/seeds/sample.jsonl").size(), 2u);
  EXPECT_EQ(json::parse(read_file(dir / "run/config.effective.json"))["seed"], 9);
  EXPECT_EQ(run_cli(base + " --stage gen"), 2);  // no generator provider configured
  write_file_atomic(dir / "bad.json", "{\"corpus\": \"corpus\", \"typo\": 1}");
  EXPECT_EQ(run_cli("--config " + (dir / "bad.json").string()), 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "run/summaries/stages.jsonl"));
}
#endif
