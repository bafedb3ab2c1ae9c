#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <ctime>

#include "daunet/cli.hpp"
#include "daunet/error.hpp"
#include "json.hpp"

namespace daunet::cli {

std::string git_blob_sha1(const std::string& bytes) {
  const std::string payload = "blob " + std::to_string(bytes.size()) + '\0' + bytes;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(payload.data(), payload.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["command"] = command;
  j["config"] = config_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(config_json);
  j["seed"] = seed;
  j["started"] = started;
  j["finished"] = finished;
  j["param_counts"] = param_counts;
  j["outputs"] = outputs;
  j["checkpoint_sha1"] = checkpoint_hashes;
  nlohmann::json res = nlohmann::json::object();
  for (const auto& [k, v] : results) res[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  j["results"] = res;
  return j.dump(2) + "\n";
}

}  // namespace daunet::cli
