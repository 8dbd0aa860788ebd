#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "webedit/error.hpp"
#include "webedit/image.hpp"

namespace webedit {

class MetricInputError : public InputError {
 public:
  using InputError::InputError;
};

class MetricProviderError : public Error {
 public:
  using Error::Error;
};

class InvalidEmbedding : public MetricProviderError {
 public:
  using MetricProviderError::MetricProviderError;
};

/// Single-channel image with intensities in [0, L].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0);
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Luma 0.299 R + 0.587 G + 0.114 B, scaled to [0, 1].
GrayImage to_gray(const Raster& image);

struct SsimParams {
  int window = 11;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

struct SsimScore {
  double mean_ssim = 0.0;  // raw mean over windows, in [-1, 1]
  std::size_t windows = 0;

  double clamped() const { return mean_ssim < 0.0 ? 0.0 : (mean_ssim > 1.0 ? 1.0 : mean_ssim); }
};

/// Mean SSIM over every window position (stride 1, uniform weights,
/// population statistics). Throws MetricInputError on a size mismatch, a
/// window larger than either side, or non-positive constants.
SsimScore compute_ssim(const GrayImage& a, const GrayImage& b, const SsimParams& params = {});
SsimScore compute_ssim(const Raster& a, const Raster& b, const SsimParams& params = {});

struct EmbeddingVector {
  std::vector<double> values;
  std::string model_id;

  std::size_t dim() const { return values.size(); }
};

/// (cos(a, b) + 1) / 2. Throws MetricInputError on mismatched dims or model ids
/// and InvalidEmbedding on a zero vector.
double embed_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  /// `png` is the encoded screenshot; `sha256` its digest. Throws MetricProviderError.
  virtual EmbeddingVector embed(const std::string& png, const std::string& sha256) = 0;
};

struct EmbeddingConfig {
  std::string kind = "http";  // "http" or "playback"
  std::string endpoint;  // POST {"model", "image": base64 png} -> {"embedding": [..]}
  std::string model_name;
  std::size_t dim = 0;  // 0 accepts whatever the provider returns
  double timeout_s = 60.0;
  std::string api_key_env;
  std::filesystem::path transcript;  // http: appended to; playback: read from
};

/// Builds the provider a config describes. HTTP providers append each vector
/// to the transcript so a later run can replay it.
std::shared_ptr<EmbeddingProvider> make_embedding_provider(const EmbeddingConfig& config);

/// Read-through cache keyed by image digest; validates dimension and norm.
class EmbeddingCache {
 public:
  EmbeddingCache(std::shared_ptr<EmbeddingProvider> provider, std::size_t expected_dim = 0);
  EmbeddingVector embed(const std::string& png);
  std::size_t provider_calls() const;

 private:
  std::shared_ptr<EmbeddingProvider> provider_;
  std::size_t expected_dim_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, EmbeddingVector> cache_;
  std::size_t calls_ = 0;
};

struct PreservationScore {
  double score = 0.0;
  std::size_t matched_nodes = 0;
  std::size_t total_nodes_before = 0;
  std::size_t total_nodes_after = 0;
  bool unparseable = false;
};

/// Fraction of normalized DOM nodes shared by two documents:
/// 2 * matched / (before + after). Nodes are elements (including those the
/// parser implies) and text with non-whitespace content; comments, doctypes
/// and whitespace-only text are dropped, attributes compared as sorted sets,
/// text compared with collapsed whitespace. Matching is greedy and top-down:
/// a child pairs with the first equal unmatched sibling at most
/// `kPreservationLookahead` positions past the previous pairing.
PreservationScore structural_preservation(std::string_view before, std::string_view after);

inline constexpr std::size_t kPreservationLookahead = 8;

}  // namespace webedit
