#include "webedit/html.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <unordered_set>

namespace webedit::html {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }
bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), lower);
  return out;
}

bool starts_with_ci(std::string_view s, std::size_t pos, std::string_view prefix) {
  if (pos + prefix.size() > s.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (lower(s[pos + i]) != lower(prefix[i])) return false;
  }
  return true;
}

std::size_t find_ci(std::string_view s, std::size_t from, std::string_view needle) {
  for (std::size_t i = from; i + needle.size() <= s.size(); ++i) {
    if (starts_with_ci(s, i, needle)) return i;
  }
  return std::string_view::npos;
}

bool whitespace_only(std::string_view s) {
  return std::all_of(s.begin(), s.end(), is_space);
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

struct NamedEntity {
  std::string_view name;
  std::uint32_t codepoint;
  bool legacy;  // recognized without a trailing semicolon
};

constexpr std::array<NamedEntity, 24> kEntities{{
    {"amp", '&', true},       {"lt", '<', true},         {"gt", '>', true},
    {"quot", '"', true},      {"apos", '\'', false},     {"nbsp", 0xA0, true},
    {"copy", 0xA9, true},     {"reg", 0xAE, true},       {"trade", 0x2122, false},
    {"hellip", 0x2026, false}, {"mdash", 0x2014, false}, {"ndash", 0x2013, false},
    {"laquo", 0xAB, true},    {"raquo", 0xBB, true},     {"middot", 0xB7, true},
    {"bull", 0x2022, false},  {"euro", 0x20AC, false},   {"times", 0xD7, true},
    {"lsquo", 0x2018, false}, {"rsquo", 0x2019, false},  {"ldquo", 0x201C, false},
    {"rdquo", 0x201D, false}, {"deg", 0xB0, true},       {"para", 0xB6, true},
}};

// Element categories used by tree construction.
const std::unordered_set<std::string_view>& void_elements() {
  static const std::unordered_set<std::string_view> set{
      "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param",
      "source", "track", "wbr", "basefont", "bgsound", "frame", "keygen"};
  return set;
}

bool closes_paragraph(std::string_view tag) {
  static const std::unordered_set<std::string_view> set{
      "address", "article", "aside", "blockquote", "center", "details", "dialog", "dir",
      "div", "dl", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3",
      "h4", "h5", "h6", "header", "hgroup", "hr", "li", "dd", "dt", "main", "menu", "nav",
      "ol", "p", "pre", "section", "summary", "table", "ul", "listing", "plaintext", "xmp"};
  return set.count(tag) > 0;
}

bool belongs_in_head(std::string_view tag) {
  return tag == "meta" || tag == "link" || tag == "title" || tag == "style" || tag == "script" ||
         tag == "base" || tag == "noscript" || tag == "template";
}

bool is_heading(std::string_view tag) {
  return tag.size() == 2 && tag[0] == 'h' && tag[1] >= '1' && tag[1] <= '6';
}

bool is_scope_boundary(std::string_view tag) {
  return tag == "html" || tag == "body" || tag == "table" || tag == "td" || tag == "th" ||
         tag == "caption" || tag == "button" || tag == "object" || tag == "marquee" ||
         tag == "applet" || tag == "template";
}

enum class TextMode { Normal, RawText, Rcdata };

TextMode text_mode_for(std::string_view tag) {
  if (tag == "script" || tag == "style" || tag == "xmp" || tag == "iframe" || tag == "noembed" ||
      tag == "noframes") {
    return TextMode::RawText;
  }
  if (tag == "textarea" || tag == "title") return TextMode::Rcdata;
  return TextMode::Normal;
}

class TreeBuilder {
 public:
  TreeBuilder() : document_(std::make_unique<Node>()) { document_->kind = NodeKind::Document; }

  SourceFacts facts;

  void doctype(std::string name) {
    if (html_ != nullptr) return;
    auto node = std::make_unique<Node>();
    node->kind = NodeKind::Doctype;
    node->name = std::move(name);
    adopt(*document_, std::move(node));
  }

  void comment(std::string data) {
    auto node = std::make_unique<Node>();
    node->kind = NodeKind::Comment;
    node->text = std::move(data);
    adopt(html_ == nullptr ? *document_ : current(), std::move(node));
  }

  void text(std::string_view data) {
    if (data.empty()) return;
    if (whitespace_only(data)) {
      if (body_ != nullptr) {
        append_text(current(), data);
      } else if (head_ != nullptr && head_open()) {
        append_text(*head_, data);
      }
      return;
    }
    ensure_body();
    append_text(current(), data);
  }

  // Appends text verbatim to the current node (raw-text element contents).
  void raw_text(std::string_view data) {
    if (!data.empty()) append_text(current(), data);
  }

  void start_tag(const std::string& tag, std::vector<Attribute> attrs, bool self_closing) {
    if (tag == "html") {
      facts.html_start_tag = true;
      if (html_ == nullptr) {
        html_ = create_element(*document_, tag, std::move(attrs), false);
        stack_.push_back(html_);
        ++facts.source_elements;
      } else {
        merge_attributes(*html_, std::move(attrs));
        if (html_->implied) {
          html_->implied = false;
          ++facts.source_elements;
        }
      }
      return;
    }
    if (tag == "head") {
      if (head_ == nullptr && body_ == nullptr) {
        ensure_html();
        head_ = create_element(*html_, tag, std::move(attrs), false);
        stack_.push_back(head_);
        ++facts.source_elements;
      }
      return;
    }
    if (tag == "body") {
      if (body_ == nullptr) {
        ensure_head();
        pop_to(html_);
        body_ = create_element(*html_, tag, std::move(attrs), false);
        stack_.push_back(body_);
        ++facts.source_elements;
      } else {
        merge_attributes(*body_, std::move(attrs));
      }
      return;
    }
    if (body_ == nullptr && belongs_in_head(tag)) {
      ensure_head();
      Node* el = create_element(*head_, tag, std::move(attrs), false);
      ++facts.source_elements;
      if (!is_void_element(tag)) {
        if (!head_open()) stack_.push_back(head_);
        stack_.push_back(el);
      }
      return;
    }

    ensure_body();
    apply_implied_end_tags(tag);
    Node* el = create_element(current(), tag, std::move(attrs), false);
    ++facts.source_elements;
    const bool foreign = in_foreign_content() || tag == "svg" || tag == "math";
    if (is_void_element(tag) || (self_closing && foreign)) return;
    stack_.push_back(el);
  }

  void end_tag(const std::string& tag) {
    if (tag == "html") {
      facts.html_end_tag = true;
      return;
    }
    if (tag == "body") return;
    if (tag == "head") {
      if (head_open()) pop_to(html_);
      return;
    }
    if (tag == "br") {
      start_tag("br", {}, false);
      return;
    }
    if (tag == "p" && find_in_scope("p") == nullptr) {
      ensure_body();
      create_element(current(), "p", {}, true);
      return;
    }
    for (std::size_t i = stack_.size(); i-- > 0;) {
      Node* n = stack_[i];
      if (n == html_ || n == body_) break;
      if (n->name == tag) {
        stack_.resize(i);
        return;
      }
    }
  }

  Document finish() {
    ensure_body();
    return Document(std::move(document_), facts);
  }

  Node& current() { return stack_.empty() ? *document_ : *stack_.back(); }

 private:
  std::unique_ptr<Node> document_;
  Node* html_ = nullptr;
  Node* head_ = nullptr;
  Node* body_ = nullptr;
  std::vector<Node*> stack_;

  static Node* adopt(Node& parent, std::unique_ptr<Node> child) {
    child->parent = &parent;
    parent.children.push_back(std::move(child));
    return parent.children.back().get();
  }

  static Node* create_element(Node& parent, const std::string& tag, std::vector<Attribute> attrs,
                              bool implied) {
    auto node = std::make_unique<Node>();
    node->kind = NodeKind::Element;
    node->name = tag;
    node->attributes = std::move(attrs);
    node->implied = implied;
    return adopt(parent, std::move(node));
  }

  static void merge_attributes(Node& node, std::vector<Attribute> attrs) {
    for (auto& a : attrs) {
      if (node.attribute(a.name) == nullptr) node.attributes.push_back(std::move(a));
    }
  }

  static void append_text(Node& parent, std::string_view data) {
    if (!parent.children.empty() && parent.children.back()->kind == NodeKind::Text) {
      parent.children.back()->text.append(data);
      return;
    }
    auto node = std::make_unique<Node>();
    node->kind = NodeKind::Text;
    node->text = std::string(data);
    adopt(parent, std::move(node));
  }

  bool head_open() const { return std::find(stack_.begin(), stack_.end(), head_) != stack_.end(); }

  void pop_to(Node* node) {
    auto it = std::find(stack_.begin(), stack_.end(), node);
    if (it != stack_.end()) stack_.erase(it + 1, stack_.end());
  }

  void ensure_html() {
    if (html_ != nullptr) return;
    html_ = create_element(*document_, "html", {}, true);
    stack_.push_back(html_);
  }

  void ensure_head() {
    ensure_html();
    if (head_ != nullptr) return;
    head_ = create_element(*html_, "head", {}, true);
  }

  void ensure_body() {
    if (body_ != nullptr) return;
    ensure_head();
    pop_to(html_);
    body_ = create_element(*html_, "body", {}, true);
    stack_.push_back(body_);
  }

  Node* find_in_scope(std::string_view tag, std::string_view extra_boundary = {}) const {
    for (std::size_t i = stack_.size(); i-- > 0;) {
      Node* n = stack_[i];
      if (n->name == tag) return n;
      if (is_scope_boundary(n->name)) return nullptr;
      if (!extra_boundary.empty() && n->name == extra_boundary) return nullptr;
    }
    return nullptr;
  }

  void close_element(Node* node) {
    auto it = std::find(stack_.begin(), stack_.end(), node);
    if (it != stack_.end()) stack_.erase(it, stack_.end());
  }

  bool in_foreign_content() const {
    return std::any_of(stack_.begin(), stack_.end(),
                       [](const Node* n) { return n->name == "svg" || n->name == "math"; });
  }

  void apply_implied_end_tags(std::string_view tag) {
    if (closes_paragraph(tag)) {
      if (Node* p = find_in_scope("p")) close_element(p);
    }
    if (is_heading(tag) && is_heading(current().name)) stack_.pop_back();
    if (tag == "li") {
      for (std::size_t i = stack_.size(); i-- > 0;) {
        const std::string& n = stack_[i]->name;
        if (n == "li") {
          stack_.resize(i);
          break;
        }
        if (n == "ul" || n == "ol" || is_scope_boundary(n)) break;
      }
    } else if (tag == "dd" || tag == "dt") {
      for (std::size_t i = stack_.size(); i-- > 0;) {
        const std::string& n = stack_[i]->name;
        if (n == "dd" || n == "dt") {
          stack_.resize(i);
          break;
        }
        if (n == "dl" || is_scope_boundary(n)) break;
      }
    } else if (tag == "option") {
      if (current().name == "option") stack_.pop_back();
    } else if (tag == "optgroup") {
      if (current().name == "option") stack_.pop_back();
      if (current().name == "optgroup") stack_.pop_back();
    } else if (tag == "tr") {
      for (std::size_t i = stack_.size(); i-- > 0;) {
        const std::string& n = stack_[i]->name;
        if (n == "tr") {
          stack_.resize(i);
          break;
        }
        if (n == "table" || n == "tbody" || n == "thead" || n == "tfoot" || n == "html") break;
      }
    } else if (tag == "td" || tag == "th") {
      for (std::size_t i = stack_.size(); i-- > 0;) {
        const std::string& n = stack_[i]->name;
        if (n == "td" || n == "th") {
          stack_.resize(i);
          break;
        }
        if (n == "tr" || n == "table" || n == "html") break;
      }
    } else if (tag == "tbody" || tag == "thead" || tag == "tfoot") {
      for (std::size_t i = stack_.size(); i-- > 0;) {
        const std::string& n = stack_[i]->name;
        if (n == "tbody" || n == "thead" || n == "tfoot") {
          stack_.resize(i);
          break;
        }
        if (n == "table" || n == "html") break;
      }
    } else if (tag == "a") {
      if (Node* a = find_in_scope("a")) close_element(a);
    }
  }
};

class Tokenizer {
 public:
  Tokenizer(std::string_view src, TreeBuilder& builder) : src_(src), out_(builder) {}

  void run() {
    while (pos_ < src_.size()) {
      const std::size_t lt = src_.find('<', pos_);
      if (lt == std::string_view::npos) {
        emit_text(src_.substr(pos_));
        pos_ = src_.size();
        break;
      }
      if (lt > pos_) emit_text(src_.substr(pos_, lt - pos_));
      pos_ = lt;
      markup();
    }
  }

 private:
  std::string_view src_;
  TreeBuilder& out_;
  std::size_t pos_ = 0;

  void emit_text(std::string_view raw) { out_.text(decode_entities(raw)); }

  bool at_end(std::size_t p) const { return p >= src_.size(); }

  void markup() {
    const std::size_t p = pos_ + 1;
    if (starts_with_ci(src_, pos_, "<!--")) {
      const std::size_t end = src_.find("-->", pos_ + 4);
      if (end == std::string_view::npos) {
        out_.facts.unterminated_markup = true;
        out_.comment(std::string(src_.substr(pos_ + 4)));
        pos_ = src_.size();
      } else {
        out_.comment(std::string(src_.substr(pos_ + 4, end - pos_ - 4)));
        pos_ = end + 3;
      }
      return;
    }
    if (!at_end(p) && (src_[p] == '!' || src_[p] == '?')) {
      const std::size_t end = src_.find('>', p);
      const std::size_t stop = end == std::string_view::npos ? src_.size() : end;
      std::string_view body = src_.substr(p + 1, stop - p - 1);
      if (end == std::string_view::npos) out_.facts.unterminated_markup = true;
      if (src_[p] == '!' && starts_with_ci(body, 0, "doctype")) {
        std::string_view rest = body.substr(7);
        std::size_t b = 0;
        while (b < rest.size() && is_space(rest[b])) ++b;
        std::size_t e = b;
        while (e < rest.size() && !is_space(rest[e])) ++e;
        out_.doctype(to_lower(rest.substr(b, e - b)));
      } else {
        out_.comment(std::string(body));
      }
      pos_ = end == std::string_view::npos ? src_.size() : end + 1;
      return;
    }
    if (!at_end(p) && src_[p] == '/') {
      end_tag_token();
      return;
    }
    if (!at_end(p) && is_alpha(src_[p])) {
      start_tag_token();
      return;
    }
    out_.text("<");
    pos_ = p;
  }

  void end_tag_token() {
    const std::size_t p = pos_ + 2;
    if (at_end(p)) {
      out_.facts.unterminated_markup = true;
      pos_ = src_.size();
      return;
    }
    if (src_[p] == '>') {
      pos_ = p + 1;
      return;
    }
    const std::size_t end = src_.find('>', p);
    if (end == std::string_view::npos) {
      out_.facts.unterminated_markup = true;
      pos_ = src_.size();
      return;
    }
    if (!is_alpha(src_[p])) {
      out_.comment(std::string(src_.substr(p, end - p)));
      pos_ = end + 1;
      return;
    }
    std::size_t e = p;
    while (e < end && !is_space(src_[e]) && src_[e] != '/') ++e;
    out_.end_tag(to_lower(src_.substr(p, e - p)));
    pos_ = end + 1;
  }

  void start_tag_token() {
    std::size_t p = pos_ + 1;
    std::size_t e = p;
    while (e < src_.size() && !is_space(src_[e]) && src_[e] != '/' && src_[e] != '>') ++e;
    std::string tag = to_lower(src_.substr(p, e - p));
    p = e;
    std::vector<Attribute> attrs;
    bool self_closing = false;
    for (;;) {
      while (p < src_.size() && (is_space(src_[p]) || src_[p] == '/')) {
        if (src_[p] == '/') self_closing = (p + 1 < src_.size() && src_[p + 1] == '>');
        ++p;
      }
      if (at_end(p)) {
        // EOF inside a tag: the tag is dropped.
        out_.facts.unterminated_markup = true;
        pos_ = src_.size();
        return;
      }
      if (src_[p] == '>') {
        ++p;
        break;
      }
      self_closing = false;
      std::size_t ne = p + 1;
      while (ne < src_.size() && !is_space(src_[ne]) && src_[ne] != '/' && src_[ne] != '>' &&
             src_[ne] != '=') {
        ++ne;
      }
      std::string name = to_lower(src_.substr(p, ne - p));
      p = ne;
      while (p < src_.size() && is_space(src_[p])) ++p;
      std::string value;
      if (p < src_.size() && src_[p] == '=') {
        ++p;
        while (p < src_.size() && is_space(src_[p])) ++p;
        if (at_end(p)) continue;
        if (src_[p] == '"' || src_[p] == '\'') {
          const char q = src_[p];
          const std::size_t close = src_.find(q, p + 1);
          if (close == std::string_view::npos) {
            out_.facts.unterminated_markup = true;
            pos_ = src_.size();
            return;
          }
          value = decode_entities(src_.substr(p + 1, close - p - 1));
          p = close + 1;
        } else {
          std::size_t ve = p;
          while (ve < src_.size() && !is_space(src_[ve]) && src_[ve] != '>') ++ve;
          value = decode_entities(src_.substr(p, ve - p));
          p = ve;
        }
      }
      const bool dup = std::any_of(attrs.begin(), attrs.end(),
                                   [&](const Attribute& a) { return a.name == name; });
      if (!dup) attrs.push_back({std::move(name), std::move(value)});
    }
    pos_ = p;
    out_.start_tag(tag, std::move(attrs), self_closing);

    const TextMode mode = text_mode_for(tag);
    if (mode == TextMode::Normal) return;
    const std::string closer = "</" + tag;
    std::size_t end = find_ci(src_, pos_, closer);
    while (end != std::string_view::npos) {
      const std::size_t after = end + closer.size();
      if (after >= src_.size() || is_space(src_[after]) || src_[after] == '>' || src_[after] == '/') break;
      end = find_ci(src_, after, closer);
    }
    if (end == std::string_view::npos) {
      out_.facts.unterminated_markup = true;
      std::string_view body = src_.substr(pos_);
      out_.raw_text(mode == TextMode::Rcdata ? decode_entities(body) : std::string(body));
      pos_ = src_.size();
      out_.end_tag(tag);
      return;
    }
    std::string_view body = src_.substr(pos_, end - pos_);
    out_.raw_text(mode == TextMode::Rcdata ? decode_entities(body) : std::string(body));
    pos_ = end;
  }
};

}  // namespace

const std::string* Node::attribute(std::string_view attr_name) const {
  for (const auto& a : attributes) {
    if (a.name == attr_name) return &a.value;
  }
  return nullptr;
}

bool is_void_element(std::string_view tag) { return void_elements().count(tag) > 0; }

std::string decode_entities(std::string_view text) {
  if (text.find('&') == std::string_view::npos) return std::string(text);
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '&') {
      out.push_back(text[i++]);
      continue;
    }
    if (i + 1 < text.size() && text[i + 1] == '#') {
      std::size_t j = i + 2;
      const bool hex = j < text.size() && (text[j] == 'x' || text[j] == 'X');
      if (hex) ++j;
      const std::size_t digits_begin = j;
      std::uint32_t cp = 0;
      while (j < text.size() && std::isxdigit(static_cast<unsigned char>(text[j])) &&
             (hex || std::isdigit(static_cast<unsigned char>(text[j])))) {
        const char c = lower(text[j]);
        const std::uint32_t d = c <= '9' ? static_cast<std::uint32_t>(c - '0') : static_cast<std::uint32_t>(c - 'a' + 10);
        if (cp < 0x110000) cp = cp * (hex ? 16 : 10) + d;
        ++j;
      }
      if (j == digits_begin) {
        out.push_back('&');
        ++i;
        continue;
      }
      if (j < text.size() && text[j] == ';') ++j;
      append_utf8(out, cp);
      i = j;
      continue;
    }
    bool matched = false;
    for (const auto& ent : kEntities) {
      if (text.compare(i + 1, ent.name.size(), ent.name) != 0) continue;
      const std::size_t after = i + 1 + ent.name.size();
      if (after < text.size() && text[after] == ';') {
        append_utf8(out, ent.codepoint);
        i = after + 1;
        matched = true;
        break;
      }
      if (ent.legacy) {
        append_utf8(out, ent.codepoint);
        i = after;
        matched = true;
        break;
      }
    }
    if (!matched) out.push_back(text[i++]);
  }
  return out;
}

Document parse(std::string_view source) {
  TreeBuilder builder;
  Tokenizer(source, builder).run();
  return builder.finish();
}

void walk(const Node& node, const std::function<void(const Node&)>& visit) {
  visit(node);
  for (const auto& child : node.children) walk(*child, visit);
}

const Node* Document::html_element() const {
  for (const auto& c : root_->children) {
    if (c->is_element("html")) return c.get();
  }
  return nullptr;
}

const Node* Document::head() const {
  const Node* html = html_element();
  if (html == nullptr) return nullptr;
  for (const auto& c : html->children) {
    if (c->is_element("head")) return c.get();
  }
  return nullptr;
}

const Node* Document::body() const {
  const Node* html = html_element();
  if (html == nullptr) return nullptr;
  for (const auto& c : html->children) {
    if (c->is_element("body")) return c.get();
  }
  return nullptr;
}

std::size_t Document::element_count() const {
  std::size_t n = 0;
  walk(*root_, [&](const Node& node) {
    if (node.kind == NodeKind::Element) ++n;
  });
  return n;
}

}  // namespace webedit::html
