#pragma once

// Single inclusion point for cpp-httplib so every translation unit sees the
// same configuration.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <string>

#include "picoframe/errors.hpp"

namespace picoframe {

// "http://host:8000/v1" -> {"http://host:8000", "/v1"}
struct BaseUrl {
  std::string origin;
  std::string path_prefix;

  static BaseUrl parse(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw UsageError("base URL needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    BaseUrl out;
    out.origin = url.substr(0, path_start);
    if (path_start != std::string::npos) out.path_prefix = url.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
    return out;
  }
};

}  // namespace picoframe
