#include "webedit/blob_store.hpp"

#include <fmt/format.h>

#include "webedit/digest.hpp"
#include "webedit/error.hpp"
#include "webedit/jsonl.hpp"

namespace webedit {

namespace fs = std::filesystem;

BlobStore::BlobStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path BlobStore::path_for(std::string_view hash, std::string_view ext) const {
  return dir_ / fmt::format("{}.{}", hash, ext);
}

std::string BlobStore::put(std::string_view bytes, std::string_view ext) {
  std::string hash = sha256_hex(bytes);
  const fs::path target = path_for(hash, ext);
  if (!fs::exists(target)) write_file_atomic(target, bytes);
  return hash;
}

std::string BlobStore::put(std::span<const std::uint8_t> bytes, std::string_view ext) {
  return put(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), ext);
}

bool BlobStore::contains(std::string_view hash, std::string_view ext) const {
  return fs::exists(path_for(hash, ext));
}

std::string BlobStore::get(std::string_view hash, std::string_view ext) const {
  const fs::path p = path_for(hash, ext);
  if (!fs::exists(p)) throw IoError(fmt::format("missing blob {}", p.string()));
  return read_file(p);
}

}  // namespace webedit
