#include <gtest/gtest.h>

#include <deque>

#include "support.hpp"
#include "webedit/synthesis.hpp"

using namespace webedit;
using webedit::testing::TempDir;

namespace {

class QueueProvider : public Provider {
 public:
  explicit QueueProvider(std::deque<std::string> replies) : replies_(std::move(replies)) {}
  ProviderReply send(const ProviderConfig&, const ChatRequest& r) override {
    requests.push_back(r);
    std::string text = replies_.front();
    if (replies_.size() > 1) replies_.pop_front();
    return {200, text, {}, ""};
  }
  std::vector<ChatRequest> requests;

 private:
  std::deque<std::string> replies_;
};

struct Harness {
  TempDir dir;
  Gateway gateway{dir / "t.jsonl"};
  std::shared_ptr<QueueProvider> provider;

  Harness(ModelRole role, std::deque<std::string> replies)
      : provider(std::make_shared<QueueProvider>(std::move(replies))) {
    ProviderConfig c;
    c.role = role;
    c.endpoint = "http://unused/";
    c.rate_limit_per_minute = 10000;
    gateway.bind(c, provider);
  }
};

SeedPage seed_page() {
  SeedPage s;
  s.id = "corpus-0001";
  s.html = R"(<html><body><nav class="navbar main-nav" id="top"><a href="/">Home</a></nav><p class="lede">Hi</p></body></html>)";
  s.byte_len = s.html.size();
  return s;
}

}  // namespace

TEST(Synthesis, ParsesInstructionLines) {
  const auto lines = parse_instruction_lines(
      "Here are some ideas:\n1. Make the title bigger.\n2) **Use a darker footer.**\n- \"Add space below the menu\"\n"
      "```\n* Round the button corners\n\n");
  EXPECT_EQ(lines, (std::vector<std::string>{"Make the title bigger.", "Use a darker footer.",
                                             "Add space below the menu", "Round the button corners"}));
}

TEST(Synthesis, DetectsCodeMentions) {
  const auto ids = extract_identifiers(seed_page());
  EXPECT_EQ(ids, (std::set<std::string>{"lede", "main-nav", "navbar", "top"}));
  EXPECT_TRUE(mentions_code("Wrap the title in an <h1> element", ids));
  EXPECT_TRUE(mentions_code("Make .navbar sticky", ids));
  EXPECT_TRUE(mentions_code("Change the navbar color", ids));
  EXPECT_TRUE(mentions_code("Hide #top", ids));
  EXPECT_FALSE(mentions_code("Move the menu to the top of the page", {"lede", "navbar"}));
  EXPECT_FALSE(mentions_code("Make the navigation bar sticky", ids));
  EXPECT_FALSE(mentions_code("Use a 2 < 3 column layout", ids));
}

TEST(Synthesis, Categorizes) {
  EXPECT_EQ(categorize_instruction("Add more padding around the cards"), EditCategory::Spacing);
  EXPECT_EQ(categorize_instruction("Make the header background dark blue"), EditCategory::Color);
  EXPECT_EQ(categorize_instruction("Use a bolder font for the headings"), EditCategory::Styling);
  EXPECT_EQ(categorize_instruction("Center the logo and align the menu to the right"), EditCategory::Layout);
  EXPECT_EQ(categorize_instruction("Make it pop"), EditCategory::Other);
}

TEST(Synthesis, GenerationFiltersDedupsAndRepairs) {
  Harness h(ModelRole::InstructionGenerator,
            {"1. Make the title bigger.\n2. Make the title  bigger!\n3. Recolor the navbar\n4. Use a dark footer.\n",
             "1. Add space under the menu.\n2. Round the corners of the buttons.\n3. Center the heading.\n"});
  const auto r = generate_instructions(seed_page(), ExemplarSet::defaults(), h.gateway, PromptTemplates::defaults(),
                                       {4, 2});
  ASSERT_EQ(r.instructions.size(), 4u);
  EXPECT_FALSE(r.short_result);
  EXPECT_EQ(r.rounds, 2);
  EXPECT_EQ(r.rejected, (std::vector<std::string>{"Recolor the navbar"}));
  EXPECT_EQ(r.instructions[0].text, "Make the title bigger.");
  EXPECT_EQ(r.instructions[0].id, "corpus-0001-i1");
  EXPECT_EQ(r.instructions[2].text, "Add space under the menu.");
  // The repair round carries the conversation and asks for the remainder.
  ASSERT_EQ(h.provider->requests.size(), 2u);
  ASSERT_EQ(h.provider->requests[1].messages.size(), 3u);
  EXPECT_NE(h.provider->requests[1].messages[2].text.find("Recolor the navbar"), std::string::npos);
}

TEST(Synthesis, ShortResultAfterRepairRounds) {
  Harness h(ModelRole::InstructionGenerator, {"1. Shrink .lede\n2. Make the title bigger.\n"});
  const auto r = generate_instructions(seed_page(), ExemplarSet::defaults(), h.gateway, PromptTemplates::defaults(),
                                       {3, 2});
  EXPECT_TRUE(r.short_result);
  EXPECT_EQ(r.instructions.size(), 1u);
  EXPECT_EQ(r.rounds, 3);
}

TEST(Synthesis, ExemplarsMustBeCodeFree) {
  ExemplarSet::defaults().validate();
  ExemplarSet bad{{{"Set .header to red", "", ""}}};
  EXPECT_THROW(bad.validate(), InputError);
  EXPECT_THROW(ExemplarSet{}.validate(), InputError);
}

TEST(Synthesis, ExtractsHtmlDocument) {
  const std::string doc = "<!DOCTYPE html><html><body>x</body></html>";
  EXPECT_EQ(extract_html_document("```html\n" + doc + "\n```"), doc);
  EXPECT_EQ(extract_html_document("Sure! Here it is:\n" + doc + "\nLet me know."), doc);
  EXPECT_EQ(extract_html_document("```\n<div>partial</div>\n```"), "<div>partial</div>");
  EXPECT_EQ(extract_html_document("I cannot do that."), "");
}

TEST(Synthesis, ExternalReferences) {
  const auto refs = external_references(
      R"(<img src="https://a.test/x.png"><link href="//cdn.test/s.css"><a href="/local">l</a>)"
      R"(<style>@import "http://b.test/i.css"; div{background:url('https://c.test/bg.png')}</style>)");
  EXPECT_EQ(refs, (std::vector<std::string>{"//cdn.test/s.css", "http://b.test/i.css", "https://a.test/x.png",
                                            "https://c.test/bg.png"}));
}

TEST(Synthesis, ValidatesEdits) {
  const std::string original = "<html><body><p>a</p></body></html>";
  auto ok = validate_edit(original, "<html><body><p>b</p><img src=\"https://x.test/a.png\"></body></html>");
  EXPECT_TRUE(ok.parse_ok);
  EXPECT_FALSE(ok.truncated);
  EXPECT_EQ(ok.new_external_refs, (std::vector<std::string>{"https://x.test/a.png"}));
  EXPECT_GT(ok.node_count, 0u);

  EXPECT_TRUE(validate_edit(original, "<html><body><p class=").truncated);
  EXPECT_TRUE(validate_edit(original, "<html><body><p>cut off").truncated);
  EXPECT_FALSE(validate_edit("<p>a</p>", "<p>b</p>").truncated);
  EXPECT_FALSE(validate_edit(original, "").parse_ok);
}

TEST(Synthesis, ApplyEditUsesEditorRole) {
  Harness h(ModelRole::Editor, {"```html\n<html><body><p>B</p></body></html>\n```"});
  const SeedPage seed = seed_page();
  EditInstruction ins{"corpus-0001-i1", "corpus-0001", "Make the text bold", EditCategory::Styling};
  const auto doc = apply_edit(seed, ins, h.gateway, PromptTemplates::defaults());
  EXPECT_EQ(doc.html, "<html><body><p>B</p></body></html>");
  EXPECT_TRUE(doc.validation.parse_ok);
  EXPECT_EQ(doc.candidate_id, candidate_id_for(ins));
  EXPECT_NE(h.provider->requests[0].messages[0].text.find(seed.html), std::string::npos);

  ins.seed_id = "other";
  EXPECT_THROW(apply_edit(seed, ins, h.gateway, PromptTemplates::defaults()), InputError);
}

TEST(Synthesis, TemplatesAndJson) {
  EXPECT_EQ(fill_template("{a} and {b} and {c}", {{"a", "1"}, {"b", "{a}"}}), "1 and {a} and {c}");
  TempDir dir;
  write_file_atomic(dir / "editor.txt", "EDIT {instruction}");
  const auto t = PromptTemplates::load(dir.path());
  EXPECT_EQ(t.editor, "EDIT {instruction}");
  EXPECT_EQ(t.verifier, PromptTemplates::defaults().verifier);

  EditInstruction ins{"s-i1", "s", "Do it", EditCategory::Color};
  const auto back = instruction_from_json(to_json(ins));
  EXPECT_EQ(back.text, ins.text);
  EXPECT_EQ(back.category, EditCategory::Color);
}
