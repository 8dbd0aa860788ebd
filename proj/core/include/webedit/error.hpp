#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace webedit {

/// Base of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (bad sizes, mismatched inputs).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A file on disk could not be read, written, or decoded.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A required file or executable is absent.
class DependencyMissing : public Error {
 public:
  explicit DependencyMissing(const std::filesystem::path& path);
  DependencyMissing(const std::filesystem::path& path, const std::string& message) : Error(message), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace webedit
