// Runs every primary acceptance criterion and prints one PASS/FAIL line each.
// Exit status is 0 only when all of them pass.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <random>

#include "support.hpp"
#include "webedit/dataset.hpp"
#include "webedit/digest.hpp"
#include "webedit/evaluation.hpp"
#include "webedit/metrics.hpp"
#include "webedit/pipeline.hpp"

using namespace webedit;
using namespace webedit::testing;
namespace fs = std::filesystem;

namespace {

struct Result {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

Result ssim_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> side(7, 32);
  SsimParams p;
  p.window = 7;
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const int w = side(rng), h = side(rng);
    const auto a = random_gray(w, h, rng());
    const auto b = random_gray(w, h, rng());
    worst = std::max(worst, std::abs(compute_ssim(a, b, p).mean_ssim - brute_force_ssim(a, b, 7, p.c1(), p.c2())));
  }
  const double t = seconds_since(start);
  return {worst <= 1e-9 && t < 60.0, fmt::format("max |diff| {:.3g} over 200 pairs, {:.2f} s", worst, t)};
}

Result ssim_identity_symmetry() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> side(7, 32);
  SsimParams p;
  p.window = 7;
  double worst_identity = 0.0;
  int asymmetric = 0;
  for (int i = 0; i < 100; ++i) {
    const int w = side(rng), h = side(rng);
    const auto a = random_gray(w, h, rng());
    const auto b = random_gray(w, h, rng());
    worst_identity = std::max(worst_identity, std::abs(compute_ssim(a, a, p).mean_ssim - 1.0));
    asymmetric += compute_ssim(a, b, p).mean_ssim != compute_ssim(b, a, p).mean_ssim;
  }
  return {worst_identity <= 1e-9 && asymmetric == 0,
          fmt::format("max |SSIM(a,a)-1| {:.3g}, asymmetric pairs {}/100", worst_identity, asymmetric)};
}

Result embedding_normalization() {
  const EmbeddingVector x{{1, 0}, "m"}, opposite{{-1, 0}, "m"}, orthogonal{{0, 1}, "m"};
  const double lo = embed_similarity(x, opposite), mid = embed_similarity(x, orthogonal), hi = embed_similarity(x, x);
  return {lo == 0.0 && mid == 0.5 && hi == 1.0, fmt::format("cos -1,0,1 -> {}, {}, {}", lo, mid, hi)};
}

Result kappa() {
  constexpr auto P = LabelVerdict::Pass;
  constexpr auto F = LabelVerdict::Fail;
  const auto chance = cohens_kappa({P, P, F, F}, {P, F, P, F});
  const auto identical = cohens_kappa({P, F, F, P, P}, {P, F, F, P, P});
  const std::string band(agreement_band(0.84));
  std::map<std::string, Decision> automatic;
  std::map<std::string, LabelVerdict> human;
  for (int i = 0; i < 50; ++i) {
    automatic["c" + std::to_string(i)] = Decision::FullyApplied;
    human["c" + std::to_string(i)] = i < 44 ? P : F;
  }
  const auto agreement = human_auto_agreement(automatic, human);
  const double percent = agreement.matched * 100.0 / agreement.n;
  const bool pass = chance.observed == 0.5 && chance.expected == 0.5 && chance.kappa == 0.0 &&
                    identical.kappa == 1.0 && band == "almost perfect agreement" && agreement.matched == 44 &&
                    percent == 88.0;
  return {pass, fmt::format("p_o=.5/p_e=.5 -> {}, identical -> {}, 0.84 -> \"{}\", 44/50 -> {}%", chance.kappa,
                            identical.kappa, band, percent)};
}

Result pass_rate_table() {
  struct Row {
    const char* model;
    int pass, fail;
    double percent;
  };
  const Row rows[] = {{"GPT-4o-mini", 29, 21, 58},
                      {"Gemini", 26, 24, 52},
                      {"Qwen-VL", 18, 32, 36},
                      {"Qwen-Base", 24, 26, 48},
                      {"Qwen-Instruct", 28, 22, 56}};
  std::vector<ReviewLabel> labels;
  for (const auto& r : rows) {
    for (int i = 0; i < r.pass + r.fail; ++i) {
      for (const char* reviewer : {"r1", "r2"}) {
        labels.push_back({fmt::format("case-{}", i), r.model, reviewer, i < r.pass ? LabelVerdict::Pass : LabelVerdict::Fail,
                          "", ""});
      }
    }
  }
  bool pass = true;
  std::string detail;
  for (const auto& r : rows) {
    const double got = pass_rate(labels, r.model).percent();
    pass &= got == r.percent;
    detail += fmt::format("{}{} {}/{} -> {}%", detail.empty() ? "" : ", ", r.model, r.pass, r.pass + r.fail, got);
  }
  return {pass, detail};
}

// Recording run against the stub server, then playback runs from its transcripts.
struct ScriptedRuns {
  TempDir dir{"webedit-acceptance"};
  bool browser = find_browser().has_value();
  std::string error;
  bool ready = false;

  fs::path corpus() const { return dir / "corpus"; }
  fs::path recorded() const { return dir / "recorded"; }

  RunConfig playback() const {
    return scripted_playback_config(corpus(), recorded() / "transcripts/gateway.jsonl", dir / "embeddings.jsonl");
  }

  void run_all(const RunConfig& config, const fs::path& run_dir) {
    Pipeline p(config, run_dir);
    for (Stage s : build_stages()) p.run(s);
  }

  void record() {
    if (!browser) {
      error = "no headless browser installed";
      return;
    }
    try {
      write_scripted_corpus(corpus());
      StubModelServer server;
      run_all(scripted_http_config(corpus(), server, dir / "embeddings.jsonl"), recorded());
      ready = true;
    } catch (const std::exception& e) {
      error = e.what();
    }
  }
};

Result pipeline_accounting(ScriptedRuns& runs) {
  if (!runs.ready) return {false, runs.error};
  try {
    runs.run_all(runs.playback(), runs.dir / "playback-a");
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  const auto s = acceptance_stats_from_json(json::parse(read_file(runs.dir / "playback-a/filter/stats.json")));
  const auto expected = scripted_counts();
  const std::size_t sum = s.accepted + s.not_applied + s.render_failed + s.verify_failed + s.invalid_html;
  const double hand_rate = static_cast<double>(expected.accepted) / static_cast<double>(expected.total());
  const bool pass = s.candidates_total == 25 && sum == 25 && s.accepted == expected.accepted &&
                    s.not_applied == expected.not_applied && s.render_failed == expected.render_failed &&
                    s.verify_failed == expected.verify_failed && s.invalid_html == expected.invalid_html &&
                    s.acceptance_rate == hand_rate;
  return {pass, fmt::format("accepted {} (expected {}), not_applied {}, render_failed {}, verify_failed {}, "
                            "invalid_html {}, sum {}, rate {} (hand {}/{}={})",
                            s.accepted, expected.accepted, s.not_applied, s.render_failed, s.verify_failed,
                            s.invalid_html, sum, s.acceptance_rate, expected.accepted, expected.total(), hand_rate)};
}

Result replay(ScriptedRuns& runs) {
  if (!runs.ready) return {false, runs.error};
  if (!fs::exists(runs.dir / "playback-a/dataset/index.jsonl")) return {false, "first playback run did not finish"};
  try {
    runs.run_all(runs.playback(), runs.dir / "playback-b");
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  const std::string a = read_file(runs.dir / "playback-a/dataset/index.jsonl");
  const std::string b = read_file(runs.dir / "playback-b/dataset/index.jsonl");
  const std::size_t records = read_jsonl(runs.dir / "playback-a/dataset/index.jsonl").size();
  return {a == b && records > 0,
          fmt::format("index files {} ({} records, sha256 {} vs {})", a == b ? "identical" : "differ", records,
                      sha256_hex(a).substr(0, 12), sha256_hex(b).substr(0, 12))};
}

Result render_determinism() {
  auto browser = shared_browser();
  if (!browser) return {false, "no headless browser installed"};
  const auto start = Clock::now();
  std::vector<fs::path> fixtures;
  for (const auto& e : fs::directory_iterator(render_fixture_dir())) fixtures.push_back(e.path());
  std::sort(fixtures.begin(), fixtures.end());
  int unstable = 0;
  bool block_ok = false;
  try {
    for (const auto& f : fixtures) {
      const std::string html = read_file(f);
      const Screenshot first = browser->render(html, {}, fast_settle());
      for (int i = 0; i < 2; ++i) unstable += browser->render(html, {}, fast_settle()).sha256 != first.sha256;
      if (f.filename() == "01_red_block.html") {
        // Block spans x 40..139, y 30..129.
        auto red = [&](int x, int y) {
          const auto* p = first.image.at(x, y);
          return p[0] == 255 && p[1] == 0 && p[2] == 0;
        };
        block_ok = red(40, 30) && red(139, 129) && !red(39, 30) && !red(40, 29) && !red(140, 129) && !red(139, 130);
      }
    }
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  const double t = seconds_since(start);
  return {fixtures.size() == 10 && unstable == 0 && block_ok && t < 120.0,
          fmt::format("{} fixtures x 3 renders, {} unstable, red block at (40,30): {}, {:.1f} s", fixtures.size(),
                      unstable, block_ok ? "yes" : "no", t)};
}

Result preservation() {
  const fs::path dir = fixture_dir() / "preservation";
  const std::string before = read_file(dir / "before.html");
  const auto same = structural_preservation(before, before);
  const auto added = structural_preservation(before, read_file(dir / "after_added_node.html"));
  const auto bad = structural_preservation(before, read_file(dir / "unparseable.txt"));
  const bool pass = same.score == 1.0 && added.score == 8.0 / 9.0 && added.total_nodes_before == 4 &&
                    added.total_nodes_after == 5 && bad.score == 0.0 && bad.unparseable;
  return {pass, fmt::format("identical {}, added node {}/{}+{} = {:.6f}, unparseable {} (flag {})", same.score,
                            2 * added.matched_nodes, added.total_nodes_before, added.total_nodes_after, added.score,
                            bad.score, bad.unparseable)};
}

Result dataset_round_trip() {
  TempDir dir("webedit-roundtrip");
  const std::string shot = BlobStore(dir / "blobs").put(std::string_view("png"), "png");
  const std::vector<std::pair<std::string, std::string>> seeds = {
      {"s1", "<!DOCTYPE html>\n<html><body><p>caf\xc3\xa9 {html}</p></body></html>\n"},
      {"s2", "<html>\r\n<body>\r\n<h1>CRLF</h1>\r\n</body>\r\n</html>"},
      {"s3", "<p>fragment with {instruction} and trailing spaces   </p>"}};
  DatasetStore store(dir.path());
  int n = 0;
  for (const auto& [id, html] : seeds) {
    for (int i = 1; i <= 2; ++i) {
      DatasetRecord r;
      r.instruction = {fmt::format("{}-i{}", id, i), id,
                       i == 1 ? "Make the heading {html} larger\nand bolder" : "Use a \"warmer\" palette", EditCategory::Other};
      r.id = r.instruction.id;
      r.original_html = html;
      r.modified_html = html + fmt::format("<div>edit {}</div>", ++n);
      r.original_shot = r.modified_shot = shot;
      r.verdict = parse_verdict(r.id, "APPLIED");
      r.pipeline_run_id = "acceptance";
      store.store(r);
    }
  }
  bool pass = true;
  std::size_t recovered = 0;
  for (const char* id : {"default", "identity"}) {
    const auto tmpl = ExportTemplate::builtin(id);
    export_training(store, tmpl, dir / "train.jsonl");
    const std::string first = read_file(dir / "train.jsonl");
    export_training(store, tmpl, dir / "train.jsonl");
    pass &= read_file(dir / "train.jsonl") == first;
    const auto triplets = read_training_export(dir / "train.jsonl", tmpl);
    const auto records = store.records();
    pass &= triplets.size() == records.size();
    for (std::size_t i = 0; i < std::min(triplets.size(), records.size()); ++i) {
      const bool same = triplets[i].instruction == records[i].instruction.text &&
                        triplets[i].original_html == records[i].original_html &&
                        triplets[i].modified_html == records[i].modified_html;
      recovered += same;
      pass &= same;
    }
  }
  return {pass, fmt::format("{}/{} triplets recovered byte-exactly over 2 templates, repeated export identical: {}",
                            recovered, 2 * store.count(), pass ? "yes" : "no")};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  ScriptedRuns runs;
  std::vector<std::pair<std::string, std::function<Result()>>> criteria = {
      {"ssim_oracle_equivalence", ssim_oracle},
      {"ssim_identity_symmetry", ssim_identity_symmetry},
      {"embedding_normalization", embedding_normalization},
      {"kappa_fixtures", kappa},
      {"pass_rate_table", pass_rate_table},
      {"pipeline_accounting", [&] {
         runs.record();
         return pipeline_accounting(runs);
       }},
      {"render_determinism", render_determinism},
      {"structural_preservation", preservation},
      {"dataset_round_trip", dataset_round_trip},
      {"replay_property", [&] { return replay(runs); }},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Result r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, fmt::format("exception: {}", e.what())};
    }
    failures += !r.pass;
    fmt::print("{} {:<26} {}\n", r.pass ? "PASS" : "FAIL", name, r.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
