#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "daunet/trainer.hpp"

namespace daunet::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Everything a command can be configured with. Starts from a named profile.
struct RunConfig {
  std::string profile = "desk";
  TrainConfig train = TrainConfig::desk();
  std::vector<std::uint64_t> seeds{0, 1, 2};  // ablate / robustness
};

enum class KeyKind { kInt, kUint, kReal, kBool, kString, kRealList, kUintList };

// One documented configuration key. The same table drives parsing,
// validation, the resolved-config echo and the --help listing.
struct ConfigKey {
  std::string path;  // dotted, e.g. "model.use_simam"
  KeyKind kind;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

// Profile first, then the JSON document (nested objects or dotted keys),
// then DAUNET_SEED (train.seed), then --set overrides in order. Throws
// ConfigError on unknown keys, bad values or failed validation.
RunConfig resolve_config(const std::string& json_text, const std::vector<std::string>& overrides,
                         const char* env_seed = nullptr);

// Nested JSON of every key in the table.
std::string config_to_json(const RunConfig& cfg);

// Key listing for --help.
std::string config_key_help();

// SHA-1 of "blob <size>\0" + bytes, lowercase hex, as git hash-object prints.
std::string git_blob_sha1(const std::string& bytes);

std::string utc_timestamp();

struct RunManifest {
  std::string command;
  std::string config_json;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::map<std::string, std::size_t> param_counts;
  std::vector<std::string> outputs;                       // relative to out-dir
  std::map<std::string, std::string> checkpoint_hashes;  // file -> blob SHA-1
  std::map<std::string, double> results;

  std::string to_json() const;
};

// Parses argv and runs one command. Returns 0 on success, 1 on usage
// errors, 2 on runtime failures.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace daunet::cli
