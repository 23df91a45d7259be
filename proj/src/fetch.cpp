#include "repprobe/fetch.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "repprobe/error.hpp"

namespace repprobe {

namespace fs = std::filesystem;

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

Endpoint split_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("base URL needs a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = base_url.substr(0, path_start);
  if (path_start != std::string::npos) ep.prefix = base_url.substr(path_start);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomically(const fs::path& target, const std::string& bytes) {
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write cache file " + tmp.string(), false);
  }
  fs::rename(tmp, target);
}

std::string get_with_retry(httplib::Client& client, const std::string& path, const FetchOptions& options) {
  auto backoff = options.initial_backoff;
  std::string last_failure = "no attempt made";
  int last_status = 0;
  for (int attempt = 0; attempt < options.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = client.Get(path);
    if (!res) {
      last_failure = httplib::to_string(res.error());
      last_status = 0;
      continue;
    }
    if (res->status >= 200 && res->status < 300) return res->body;
    if (res->status < 500) throw HttpStatus(res->status);
    last_status = res->status;
  }
  if (last_status != 0) throw HttpStatus(last_status);
  throw NetworkError(last_failure + " after " + std::to_string(options.attempts) + " attempts");
}

}  // namespace

fs::path default_cache_dir() {
  if (const char* env = std::getenv("REPPROBE_CACHE"); env && *env) return env;
  return ".repprobe-cache";
}

std::string fetch_kb(const std::string& base_url, const std::vector<std::int64_t>& variant_ids,
                     const FetchOptions& options) {
  if (variant_ids.empty()) throw InvalidArgument("fetch_kb needs at least one variant id");
  if (options.attempts < 1) throw InvalidArgument("fetch_kb needs at least one attempt");

  const Endpoint ep = split_url(base_url);
  fs::create_directories(options.cache_dir);
  httplib::Client client(ep.origin);
  client.set_connection_timeout(options.timeout);
  client.set_read_timeout(options.timeout);

  std::string joined;
  for (std::size_t i = 0; i < variant_ids.size(); ++i) {
    const auto cached = options.cache_dir / (std::to_string(variant_ids[i]) + ".json");
    std::string payload;
    if (fs::exists(cached)) {
      payload = read_file(cached);
    } else {
      payload = get_with_retry(client, ep.prefix + "/variants/" + std::to_string(variant_ids[i]), options);
      write_atomically(cached, payload);
    }
    if (i) joined += '\n';
    joined += payload;
  }
  return joined;
}

}  // namespace repprobe
