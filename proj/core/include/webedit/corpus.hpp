#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "webedit/error.hpp"

namespace webedit {

/// A real page used as the substrate for synthesized edits.
struct SeedPage {
  std::string id;
  std::string html;
  std::string source_ref;  // "<corpus name>:<index>"
  std::size_t byte_len = 0;
};

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  std::size_t byte_len = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;  // lexicographic path order, unique ids
  std::uint64_t sampling_seed = 0;
  std::size_t sample_size = 0;
};

struct IngestLimits {
  std::size_t max_bytes = 512 * 1024;
  std::size_t min_elements = 1;
  std::string corpus_name = "corpus";
};

struct IngestRejection {
  std::filesystem::path path;
  std::string reason;
};

struct IngestResult {
  CorpusManifest manifest;
  std::vector<IngestRejection> rejections;
};

/// Scans `dir` recursively for .html/.htm files. Throws IoError when the
/// directory itself cannot be read; individual bad files are skipped and
/// reported in `rejections`.
IngestResult ingest_corpus(const std::filesystem::path& dir, const IngestLimits& limits = {});

/// Draws `n` distinct seeds. The result depends only on (manifest, n, rng_seed):
/// the shuffle uses a fixed-width engine and its own unbiased bounded draw
/// rather than std::uniform_int_distribution, whose output is
/// implementation-defined.
std::vector<SeedPage> sample_seeds(const CorpusManifest& manifest, std::size_t n,
                                   std::uint64_t rng_seed, const std::string& corpus_name = "corpus");

/// Index-level shuffle shared by seed sampling and evaluation splits.
std::vector<std::size_t> seeded_permutation(std::size_t size, std::uint64_t rng_seed);

SeedPage load_seed(const ManifestEntry& entry, std::size_t index, const std::string& corpus_name);

/// Returns `bytes` unchanged when it is valid UTF-8, otherwise transcodes it
/// as Windows-1252/Latin-1.
std::string to_utf8(std::string bytes);

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
CorpusManifest read_manifest(const std::filesystem::path& path);

}  // namespace webedit
