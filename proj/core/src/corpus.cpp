#include "webedit/corpus.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <random>
#include <set>

#include "webedit/html.hpp"
#include "webedit/jsonl.hpp"

namespace webedit {

namespace fs = std::filesystem;

namespace {

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t min = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      min = 0x80;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      min = 0x800;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      min = 0x10000;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    std::uint32_t cp = c & (0xFF >> (len + 1));
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

// Windows-1252 code points for 0x80..0x9F; the rest of the range maps 1:1 onto Latin-1.
constexpr std::uint16_t kCp1252High[32] = {
    0x20AC, 0x0081, 0x201A, 0x0192, 0x201E, 0x2026, 0x2020, 0x2021, 0x02C6, 0x2030, 0x0160,
    0x2039, 0x0152, 0x008D, 0x017D, 0x008F, 0x0090, 0x2018, 0x2019, 0x201C, 0x201D, 0x2022,
    0x2013, 0x2014, 0x02DC, 0x2122, 0x0161, 0x203A, 0x0153, 0x009D, 0x017E, 0x0178};

bool is_html_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".html" || ext == ".htm";
}

}  // namespace

std::string to_utf8(std::string bytes) {
  if (valid_utf8(bytes)) return bytes;
  std::string out;
  out.reserve(bytes.size() + bytes.size() / 4);
  for (unsigned char c : bytes) {
    std::uint32_t cp = c;
    if (c >= 0x80 && c < 0xA0) cp = kCp1252High[c - 0x80];
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

IngestResult ingest_corpus(const fs::path& dir, const IngestLimits& limits) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw IoError(fmt::format("corpus directory {} is not readable", dir.string()));
  }
  std::vector<fs::path> files;
  fs::recursive_directory_iterator it(dir, fs::directory_options::skip_permission_denied, ec);
  if (ec) throw IoError(fmt::format("cannot scan {}: {}", dir.string(), ec.message()));
  for (const auto& entry : it) {
    if (entry.is_regular_file() && is_html_file(entry.path())) files.push_back(entry.path());
  }
  // Lexicographic order on the relative path keeps manifests stable across machines.
  std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
    return a.lexically_relative(dir).generic_string() < b.lexically_relative(dir).generic_string();
  });

  IngestResult result;
  std::set<std::string> seen_ids;
  for (const auto& path : files) {
    auto reject = [&](std::string reason) {
      spdlog::warn("corpus: skipping {}: {}", path.string(), reason);
      result.rejections.push_back({path, std::move(reason)});
    };
    const auto size = fs::file_size(path, ec);
    if (ec) {
      reject("unreadable: " + ec.message());
      continue;
    }
    if (size > limits.max_bytes) {
      reject(fmt::format("oversized: {} bytes > cap {}", size, limits.max_bytes));
      continue;
    }
    std::string html;
    try {
      html = to_utf8(read_file(path));
    } catch (const IoError& e) {
      reject(std::string("unreadable: ") + e.what());
      continue;
    }
    if (html.empty()) {
      reject("empty file");
      continue;
    }
    if (html.size() > limits.max_bytes) {
      reject(fmt::format("oversized after transcoding: {} bytes", html.size()));
      continue;
    }
    const html::Document doc = html::parse(html);
    if (doc.facts().source_elements < std::max<std::size_t>(1, limits.min_elements)) {
      reject(doc.empty() ? "empty DOM: no element in source" : "too few elements");
      continue;
    }
    fs::path rel = path.lexically_relative(dir);
    std::string id = rel.replace_extension().generic_string();
    if (!seen_ids.insert(id).second) {
      reject(fmt::format("duplicate id {}", id));
      continue;
    }
    result.manifest.entries.push_back({std::move(id), path, html.size()});
  }
  return result;
}

std::vector<std::size_t> seeded_permutation(std::size_t size, std::uint64_t rng_seed) {
  std::vector<std::size_t> order(size);
  for (std::size_t i = 0; i < size; ++i) order[i] = i;
  std::mt19937_64 engine(rng_seed);
  // Fisher-Yates with rejection sampling for an unbiased draw in [0, bound].
  for (std::size_t i = size; i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                (std::numeric_limits<std::uint64_t>::max() % bound);
    std::uint64_t r = engine();
    while (r >= limit) r = engine();
    std::swap(order[i - 1], order[static_cast<std::size_t>(r % bound)]);
  }
  return order;
}

SeedPage load_seed(const ManifestEntry& entry, std::size_t index, const std::string& corpus_name) {
  SeedPage seed;
  seed.id = entry.id;
  seed.html = to_utf8(read_file(entry.path));
  seed.byte_len = seed.html.size();
  seed.source_ref = fmt::format("{}:{}", corpus_name, index);
  return seed;
}

std::vector<SeedPage> sample_seeds(const CorpusManifest& manifest, std::size_t n,
                                   std::uint64_t rng_seed, const std::string& corpus_name) {
  const std::size_t total = manifest.entries.size();
  if (n > total) {
    throw InputError(fmt::format("sample size {} exceeds corpus size {}", n, total));
  }
  const auto order = seeded_permutation(total, rng_seed);
  std::vector<SeedPage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(load_seed(manifest.entries[order[i]], order[i], corpus_name));
  }
  return out;
}

void write_manifest(const fs::path& path, const CorpusManifest& manifest) {
  std::vector<json> records;
  records.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    records.push_back({{"id", e.id}, {"path", e.path.generic_string()}, {"byte_len", e.byte_len}});
  }
  write_jsonl(path, records);
}

CorpusManifest read_manifest(const fs::path& path) {
  CorpusManifest manifest;
  for (const auto& r : read_jsonl(path)) {
    manifest.entries.push_back(
        {r.at("id").get<std::string>(), fs::path(r.at("path").get<std::string>()), r.at("byte_len").get<std::size_t>()});
  }
  return manifest;
}

}  // namespace webedit
