#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace webedit::html {

enum class NodeKind { Document, Doctype, Element, Text, Comment };

struct Attribute {
  std::string name;  // lowercased
  std::string value;  // entity-decoded
};

struct Node {
  NodeKind kind = NodeKind::Element;
  std::string name;  // tag name (lowercase) or doctype name
  std::string text;  // text or comment data
  std::vector<Attribute> attributes;
  std::vector<std::unique_ptr<Node>> children;
  Node* parent = nullptr;
  // Created by tree construction rather than by a tag in the source.
  bool implied = false;

  const std::string* attribute(std::string_view attr_name) const;
  bool is_element(std::string_view tag) const { return kind == NodeKind::Element && name == tag; }
};

/// Facts the tokenizer observed while reading the source.
struct SourceFacts {
  std::size_t source_elements = 0;  // start tags that produced an element
  bool unterminated_markup = false;  // input ended inside a tag, comment, or raw-text element
  bool html_start_tag = false;
  bool html_end_tag = false;
};

/// A parsed document. Parsing never fails: malformed input is recovered the
/// way browsers do (implied html/head/body, auto-closed paragraphs, stray end
/// tags dropped), so the tree always has a single html root element.
class Document {
 public:
  explicit Document(std::unique_ptr<Node> root, SourceFacts facts)
      : root_(std::move(root)), facts_(facts) {}

  const Node& root() const { return *root_; }
  const Node* html_element() const;
  const Node* body() const;
  const Node* head() const;
  const SourceFacts& facts() const { return facts_; }

  std::size_t element_count() const;
  /// True when no tag in the source produced an element (e.g. "<<<").
  bool empty() const { return facts_.source_elements == 0; }

 private:
  std::unique_ptr<Node> root_;
  SourceFacts facts_;
};

Document parse(std::string_view source);

/// Pre-order traversal over every node below (and including) `node`.
void walk(const Node& node, const std::function<void(const Node&)>& visit);

/// Decodes character references (&amp; &#39; &#x27; and the common named set).
std::string decode_entities(std::string_view text);

bool is_void_element(std::string_view tag);

}  // namespace webedit::html
