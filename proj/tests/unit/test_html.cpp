#include <gtest/gtest.h>

#include "webedit/html.hpp"

using namespace webedit;

namespace {

std::vector<std::string> element_names(const html::Document& doc) {
  std::vector<std::string> out;
  html::walk(doc.root(), [&](const html::Node& n) {
    if (n.kind == html::NodeKind::Element) out.push_back(n.name);
  });
  return out;
}

}  // namespace

TEST(Html, ImpliesSkeleton) {
  const auto doc = html::parse("<p>hi");
  EXPECT_EQ(element_names(doc), (std::vector<std::string>{"html", "head", "body", "p"}));
  ASSERT_NE(doc.body(), nullptr);
  EXPECT_TRUE(doc.head()->implied);
  EXPECT_FALSE(doc.empty());
}

TEST(Html, SelfClosingNonVoidDoesNotClose) {
  // <p/> is an ordinary start tag; the following <div> closes the paragraph.
  const auto doc = html::parse("<html><body><p/><div/></body></html>");
  const auto* body = doc.body();
  ASSERT_EQ(body->children.size(), 2u);
  EXPECT_TRUE(body->children[0]->is_element("p"));
  EXPECT_TRUE(body->children[1]->is_element("div"));
}

TEST(Html, AttributesAndEntities) {
  const auto doc = html::parse(R"(<a HREF="x?a=1&amp;b=2" class='c d'>Tom &amp; Jerry &#39;s</a>)");
  const html::Node* a = nullptr;
  html::walk(doc.root(), [&](const html::Node& n) {
    if (n.is_element("a")) a = &n;
  });
  ASSERT_NE(a, nullptr);
  ASSERT_NE(a->attribute("href"), nullptr);
  EXPECT_EQ(*a->attribute("href"), "x?a=1&b=2");
  EXPECT_EQ(*a->attribute("class"), "c d");
  EXPECT_EQ(a->children.at(0)->text, "Tom & Jerry 's");
}

TEST(Html, RawTextElements) {
  const auto doc = html::parse("<script>if (a < b) { x = '<p>'; }</script><style>p>a{}</style><p>x</p>");
  std::size_t paragraphs = 0;
  html::walk(doc.root(), [&](const html::Node& n) { paragraphs += n.is_element("p"); });
  EXPECT_EQ(paragraphs, 1u);
}

TEST(Html, SourceFacts) {
  EXPECT_TRUE(html::parse("<<<>>>").empty());
  EXPECT_TRUE(html::parse("<div class=").facts().unterminated_markup);
  EXPECT_TRUE(html::parse("<!-- open").facts().unterminated_markup);
  const auto doc = html::parse("<html><body></body></html>");
  EXPECT_TRUE(doc.facts().html_start_tag);
  EXPECT_TRUE(doc.facts().html_end_tag);
  EXPECT_FALSE(doc.facts().unterminated_markup);
}

TEST(Html, StrayEndTagsDropped) {
  const auto doc = html::parse("<div></span>text</div></div>");
  EXPECT_EQ(element_names(doc), (std::vector<std::string>{"html", "head", "body", "div"}));
}
