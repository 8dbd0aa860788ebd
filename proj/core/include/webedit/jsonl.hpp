#pragma once

#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace webedit {

using json = nlohmann::json;

/// Reads a line-delimited JSON file. Blank lines are skipped; a malformed
/// line throws IoError naming the file and 1-based line number.
std::vector<json> read_jsonl(const std::filesystem::path& path);

/// Replaces `path` with the given records, written to a sibling temp file
/// first and renamed into place.
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

/// Atomically replaces `path` with `contents`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Serialized appender; every record is flushed before append() returns.
class JsonlAppender {
 public:
  explicit JsonlAppender(std::filesystem::path path);
  void append(const json& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

}  // namespace webedit
