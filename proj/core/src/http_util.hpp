#pragma once

#include <fmt/format.h>

#include <regex>
#include <string>

#include "webedit/error.hpp"

namespace webedit::detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw InputError(fmt::format("invalid endpoint '{}'", url));
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

}  // namespace webedit::detail
