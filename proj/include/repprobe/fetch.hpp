#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace repprobe {

struct FetchOptions {
  std::filesystem::path cache_dir;
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{30};
};

/// GETs `{base_url}/variants/{id}` for each id and returns the payloads joined
/// by '\n' (a single id yields its payload verbatim). Responses are cached as
/// `{cache_dir}/{id}.json`; cached ids are served without a request.
///
/// Network failures and 5xx responses are retried with exponential backoff;
/// other non-2xx statuses raise HttpStatus immediately.
std::string fetch_kb(const std::string& base_url, const std::vector<std::int64_t>& variant_ids,
                     const FetchOptions& options);

/// Cache directory from REPPROBE_CACHE, falling back to `.repprobe-cache`.
std::filesystem::path default_cache_dir();

}  // namespace repprobe
