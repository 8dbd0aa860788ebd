#include "webedit/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>

#include "webedit/html.hpp"

namespace webedit {

GrayImage::GrayImage(int w, int h, double fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

GrayImage to_gray(const Raster& image) {
  GrayImage g(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.at(x, y);
      g.at(x, y) = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
    }
  }
  return g;
}

SsimScore compute_ssim(const GrayImage& a, const GrayImage& b, const SsimParams& params) {
  if (a.width != b.width || a.height != b.height) {
    throw MetricInputError(fmt::format("image sizes differ: {}x{} vs {}x{}", a.width, a.height, b.width, b.height));
  }
  const int w = params.window;
  if (w <= 0 || w % 2 == 0) throw MetricInputError(fmt::format("window must be odd and positive, got {}", w));
  if (w > a.width || w > a.height) {
    throw MetricInputError(fmt::format("window {} exceeds image {}x{}", w, a.width, a.height));
  }
  if (!(params.c1() > 0.0) || !(params.c2() > 0.0)) throw MetricInputError("SSIM constants must be positive");
  const double c1 = params.c1();
  const double c2 = params.c2();

  // Vertical window sums per column, then horizontal sums per window. Sums are
  // recomputed for each window rather than slid, so every window sees the
  // same operation order regardless of position and identical inputs stay
  // bitwise identical.
  const int out_w = a.width - w + 1;
  const int out_h = a.height - w + 1;
  const std::size_t cols = static_cast<std::size_t>(a.width);
  std::vector<double> sa(cols), sb(cols), saa(cols), sbb(cols), sab(cols);
  const double n = static_cast<double>(w) * w;
  double total = 0.0;

  for (int y0 = 0; y0 < out_h; ++y0) {
    for (int x = 0; x < a.width; ++x) {
      double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
      for (int y = y0; y < y0 + w; ++y) {
        const double p = a.at(x, y);
        const double q = b.at(x, y);
        s1 += p;
        s2 += q;
        s11 += p * p;
        s22 += q * q;
        s12 += p * q;
      }
      sa[x] = s1;
      sb[x] = s2;
      saa[x] = s11;
      sbb[x] = s22;
      sab[x] = s12;
    }
    for (int x0 = 0; x0 < out_w; ++x0) {
      double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
      for (int x = x0; x < x0 + w; ++x) {
        s1 += sa[x];
        s2 += sb[x];
        s11 += saa[x];
        s22 += sbb[x];
        s12 += sab[x];
      }
      const double mu1 = s1 / n;
      const double mu2 = s2 / n;
      const double var1 = s11 / n - mu1 * mu1;
      const double var2 = s22 / n - mu2 * mu2;
      const double cov = s12 / n - mu1 * mu2;
      total += ((2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)) / ((mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2));
    }
  }
  const std::size_t windows = static_cast<std::size_t>(out_w) * static_cast<std::size_t>(out_h);
  return {total / static_cast<double>(windows), windows};
}

SsimScore compute_ssim(const Raster& a, const Raster& b, const SsimParams& params) {
  return compute_ssim(to_gray(a), to_gray(b), params);
}

double embed_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) throw MetricInputError(fmt::format("embedding dims differ: {} vs {}", a.dim(), b.dim()));
  if (a.model_id != b.model_id) {
    throw MetricInputError(fmt::format("embedding models differ: '{}' vs '{}'", a.model_id, b.model_id));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) throw InvalidEmbedding("zero-norm embedding");
  const double cos = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
  return (cos + 1.0) / 2.0;
}

namespace {

struct NormNode {
  std::string key;  // "<tag attr=v ...>" or "#text:..."
  std::vector<NormNode> children;
};

std::string collapse_ws(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending = true;
      continue;
    }
    if (pending && !out.empty()) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

std::size_t normalize(const html::Node& node, std::vector<NormNode>& out) {
  switch (node.kind) {
    case html::NodeKind::Comment:
    case html::NodeKind::Doctype:
      return 0;
    case html::NodeKind::Text: {
      std::string text = collapse_ws(node.text);
      if (text.empty()) return 0;
      out.push_back({"#text:" + text, {}});
      return 1;
    }
    case html::NodeKind::Document: {
      std::size_t count = 0;
      for (const auto& c : node.children) count += normalize(*c, out);
      return count;
    }
    case html::NodeKind::Element:
      break;
  }
  std::vector<std::pair<std::string, std::string>> attrs;
  for (const auto& a : node.attributes) attrs.emplace_back(a.name, a.value);
  std::sort(attrs.begin(), attrs.end());
  std::string key = "<" + node.name;
  for (const auto& [k, v] : attrs) key += fmt::format(" {}=\"{}\"", k, v);
  key += ">";
  NormNode n{std::move(key), {}};
  std::size_t count = 1;
  for (const auto& c : node.children) count += normalize(*c, n.children);
  out.push_back(std::move(n));
  return count;
}

std::size_t match_siblings(const std::vector<NormNode>& a, const std::vector<NormNode>& b) {
  std::size_t matched = 0;
  std::size_t next = 0;  // first candidate in b
  for (const auto& x : a) {
    const std::size_t limit = std::min(b.size(), next + kPreservationLookahead + 1);
    for (std::size_t k = next; k < limit; ++k) {
      if (b[k].key == x.key) {
        matched += 1 + match_siblings(x.children, b[k].children);
        next = k + 1;
        break;
      }
    }
  }
  return matched;
}

}  // namespace

PreservationScore structural_preservation(std::string_view before, std::string_view after) {
  PreservationScore s;
  const html::Document da = html::parse(before);
  const html::Document db = html::parse(after);
  if (da.empty() || db.empty()) {
    s.unparseable = true;
    return s;
  }
  std::vector<NormNode> ta, tb;
  s.total_nodes_before = normalize(da.root(), ta);
  s.total_nodes_after = normalize(db.root(), tb);
  s.matched_nodes = match_siblings(ta, tb);
  const std::size_t total = s.total_nodes_before + s.total_nodes_after;
  s.score = total == 0 ? 1.0 : 2.0 * static_cast<double>(s.matched_nodes) / static_cast<double>(total);
  return s;
}

}  // namespace webedit
