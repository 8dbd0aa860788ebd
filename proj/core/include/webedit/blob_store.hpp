#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace webedit {

/// Content-addressed file store: every blob lives at `<dir>/<sha256>.<ext>`.
/// Writing identical bytes twice yields one file.
class BlobStore {
 public:
  explicit BlobStore(std::filesystem::path dir);

  std::string put(std::string_view bytes, std::string_view ext);
  std::string put(std::span<const std::uint8_t> bytes, std::string_view ext);

  bool contains(std::string_view hash, std::string_view ext) const;
  std::string get(std::string_view hash, std::string_view ext) const;
  std::filesystem::path path_for(std::string_view hash, std::string_view ext) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

}  // namespace webedit
