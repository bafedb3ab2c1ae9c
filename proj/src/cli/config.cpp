#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "daunet/cli.hpp"
#include "daunet/error.hpp"
#include "json.hpp"

namespace daunet::cli {
namespace {

using nlohmann::json;

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

[[noreturn]] void bad_value(const std::string& path, const std::string& why) {
  throw ConfigError("config key '" + path + "': " + why);
}

long long as_int(const std::string& path, const json& v) {
  if (!v.is_number_integer()) bad_value(path, "expected an integer");
  return v.get<long long>();
}

int as_small_int(const std::string& path, const json& v) {
  const long long x = as_int(path, v);
  if (x < -1000000000LL || x > 1000000000LL) bad_value(path, "out of range");
  return static_cast<int>(x);
}

std::uint64_t as_uint(const std::string& path, const json& v) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    bad_value(path, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double as_real(const std::string& path, const json& v) {
  if (!v.is_number()) bad_value(path, "expected a number");
  return v.get<double>();
}

bool as_bool(const std::string& path, const json& v) {
  if (!v.is_boolean()) bad_value(path, "expected true or false");
  return v.get<bool>();
}

std::string as_string(const std::string& path, const json& v) {
  if (!v.is_string()) bad_value(path, "expected a string");
  return v.get<std::string>();
}

std::vector<double> as_real_list(const std::string& path, const json& v) {
  if (!v.is_array()) bad_value(path, "expected a list of numbers");
  std::vector<double> out;
  for (const auto& x : v) out.push_back(as_real(path, x));
  return out;
}

std::vector<std::uint64_t> as_uint_list(const std::string& path, const json& v) {
  if (!v.is_array()) bad_value(path, "expected a list of non-negative integers");
  std::vector<std::uint64_t> out;
  for (const auto& x : v) out.push_back(as_uint(path, x));
  return out;
}

#define INT_KEY(PATH, FIELD, HELP)                                                  \
  Entry {                                                                           \
    {PATH, KeyKind::kInt, HELP},                                                    \
        [](RunConfig& c, const json& v) { c.FIELD = as_small_int(PATH, v); },       \
        [](const RunConfig& c) { return json(c.FIELD); }                            \
  }
#define REAL_KEY(PATH, FIELD, HELP)                                                 \
  Entry {                                                                           \
    {PATH, KeyKind::kReal, HELP}, [](RunConfig& c, const json& v) { c.FIELD = as_real(PATH, v); }, \
        [](const RunConfig& c) { return json(c.FIELD); }                            \
  }
#define BOOL_KEY(PATH, FIELD, HELP)                                                 \
  Entry {                                                                           \
    {PATH, KeyKind::kBool, HELP}, [](RunConfig& c, const json& v) { c.FIELD = as_bool(PATH, v); }, \
        [](const RunConfig& c) { return json(c.FIELD); }                            \
  }
#define UINT_KEY(PATH, FIELD, HELP)                                                 \
  Entry {                                                                           \
    {PATH, KeyKind::kUint, HELP}, [](RunConfig& c, const json& v) { c.FIELD = as_uint(PATH, v); }, \
        [](const RunConfig& c) { return json(c.FIELD); }                            \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{{"profile", KeyKind::kString, "base profile, desk or paper; applied before all other keys"},
            [](RunConfig& c, const json& v) { c.profile = as_string("profile", v); },
            [](const RunConfig& c) { return json(c.profile); }},
      REAL_KEY("train.lr", train.lr, "Adam learning rate"),
      INT_KEY("train.batch_size", train.batch_size, "minibatch size"),
      INT_KEY("train.epochs", train.epochs, "training epochs"),
      UINT_KEY("train.seed", train.seed, "seed for init, shuffling and augmentation"),
      BOOL_KEY("train.augment", train.augment, "zoom / rotate / flip augmentation"),
      INT_KEY("train.n_train", train.n_train, "training phantoms"),
      INT_KEY("train.n_val", train.n_val, "validation phantoms"),
      INT_KEY("train.n_test", train.n_test, "test phantoms"),
      Entry{{"loss.bce_pos_weight", KeyKind::kReal,
             "foreground BCE weight, or \"auto\" for the per-batch negative/positive ratio in [1, 100]"},
            [](RunConfig& c, const json& v) {
              if (v.is_string() && v.get<std::string>() == "auto") {
                c.train.loss.bce_pos_weight.reset();
              } else {
                c.train.loss.bce_pos_weight = as_real("loss.bce_pos_weight", v);
              }
            },
            [](const RunConfig& c) {
              return c.train.loss.bce_pos_weight ? json(*c.train.loss.bce_pos_weight) : json("auto");
            }},
      REAL_KEY("loss.dice_smooth", train.loss.dice_smooth, "Dice smoothing constant"),
      Entry{{"loss.class_weights", KeyKind::kRealList, "per-class Dice weights; empty means all 1"},
            [](RunConfig& c, const json& v) {
              c.train.loss.class_weights = as_real_list("loss.class_weights", v);
            },
            [](const RunConfig& c) { return json(c.train.loss.class_weights); }},
      REAL_KEY("loss.dice_weight", train.loss.dice_weight, "weight of the Dice term"),
      REAL_KEY("loss.bce_weight", train.loss.bce_weight, "weight of the BCE term"),
      INT_KEY("model.base_channels", train.model.base_channels, "channels of the first encoder level"),
      INT_KEY("model.depth", train.model.depth, "number of pooling levels"),
      BOOL_KEY("model.use_deform_bottleneck", train.model.use_deform_bottleneck,
               "compress / deformable / expand bottleneck instead of two 3x3 convs"),
      BOOL_KEY("model.use_simam", train.model.use_simam, "SimAM on skips, decoder blocks and bottleneck"),
      Entry{{"model.bottleneck_variant", KeyKind::kString, "deformable bottleneck channel plan, wide or narrow"},
            [](RunConfig& c, const json& v) {
              c.train.model.bottleneck_variant =
                  parse_bottleneck_variant(as_string("model.bottleneck_variant", v));
            },
            [](const RunConfig& c) { return json(to_string(c.train.model.bottleneck_variant)); }},
      REAL_KEY("model.simam_lambda", train.model.simam.lambda, "SimAM energy regularizer"),
      REAL_KEY("model.simam_epsilon", train.model.simam.epsilon, "SimAM stabilizer in 1 / (E + eps)"),
      INT_KEY("data.image_size", train.data.image_size, "phantom side length, divisible by 4 and 2^depth"),
      INT_KEY("data.num_fg_classes", train.data.num_fg_classes, "foreground classes, 1 or 2"),
      REAL_KEY("data.noise_std", train.data.noise_std, "additive Gaussian noise"),
      BOOL_KEY("data.speckle", train.data.speckle, "multiplicative speckle"),
      UINT_KEY("data.seed", train.data.seed, "phantom seed"),
      Entry{{"eval.hd95_mode", KeyKind::kString, "directed_max or pooled"},
            [](RunConfig& c, const json& v) {
              const std::string s = as_string("eval.hd95_mode", v);
              if (s == "directed_max") {
                c.train.hd95_mode = Hd95Mode::kDirectedMax;
              } else if (s == "pooled") {
                c.train.hd95_mode = Hd95Mode::kPooled;
              } else {
                bad_value("eval.hd95_mode", "expected directed_max or pooled");
              }
            },
            [](const RunConfig& c) {
              return json(c.train.hd95_mode == Hd95Mode::kPooled ? "pooled" : "directed_max");
            }},
      Entry{{"experiment.seeds", KeyKind::kUintList, "training seeds for ablate and robustness"},
            [](RunConfig& c, const json& v) { c.seeds = as_uint_list("experiment.seeds", v); },
            [](const RunConfig& c) { return json(c.seeds); }},
  };
  return table;
}

#undef INT_KEY
#undef REAL_KEY
#undef BOOL_KEY
#undef UINT_KEY

const Entry& find(const std::string& path) {
  for (const auto& e : entries()) {
    if (e.key.path == path) return e;
  }
  throw ConfigError("unknown config key '" + path + "'");
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten(v, path, out);
    } else {
      out.emplace_back(path, v);
    }
  }
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

json parse_scalar(const std::string& path, KeyKind kind, const std::string& text) {
  switch (kind) {
    case KeyKind::kInt: {
      long long v;
      if (!parse_number(text, v)) bad_value(path, "'" + text + "' is not an integer");
      return json(v);
    }
    case KeyKind::kUint: {
      std::uint64_t v;
      if (!parse_number(text, v)) bad_value(path, "'" + text + "' is not a non-negative integer");
      return json(v);
    }
    case KeyKind::kReal: {
      if (text == "auto") return json("auto");
      double v;
      if (!parse_number(text, v)) bad_value(path, "'" + text + "' is not a number");
      return json(v);
    }
    case KeyKind::kBool:
      if (text == "true" || text == "1") return json(true);
      if (text == "false" || text == "0") return json(false);
      bad_value(path, "'" + text + "' is not true or false");
    case KeyKind::kString:
      return json(text);
    case KeyKind::kRealList:
    case KeyKind::kUintList: {
      std::string body = text;
      if (!body.empty() && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
      json arr = json::array();
      const KeyKind item = kind == KeyKind::kRealList ? KeyKind::kReal : KeyKind::kUint;
      std::stringstream ss(body);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        const auto b = tok.find_first_not_of(' ');
        const auto e = tok.find_last_not_of(' ');
        if (b == std::string::npos) continue;
        arr.push_back(parse_scalar(path, item, tok.substr(b, e - b + 1)));
      }
      return arr;
    }
  }
  bad_value(path, "unsupported kind");
}

RunConfig from_profile(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "desk") {
    c.train = TrainConfig::desk();
  } else if (name == "paper") {
    c.train = TrainConfig::paper();
  } else {
    bad_value("profile", "expected desk or paper, got '" + name + "'");
  }
  return c;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

RunConfig resolve_config(const std::string& json_text, const std::vector<std::string>& overrides,
                         const char* env_seed) {
  std::vector<std::pair<std::string, json>> assignments;
  if (!json_text.empty()) {
    json doc;
    try {
      doc = json::parse(json_text);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    flatten(doc, "", assignments);
  }
  if (env_seed != nullptr && *env_seed != '\0') {
    assignments.emplace_back("train.seed", parse_scalar("DAUNET_SEED", KeyKind::kUint, env_seed));
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got '" + o + "'");
    }
    const std::string path = o.substr(0, eq);
    assignments.emplace_back(path, parse_scalar(path, find(path).key.kind, o.substr(eq + 1)));
  }

  std::string profile = "desk";
  for (const auto& [path, value] : assignments) {
    if (path == "profile") profile = as_string("profile", value);
  }
  RunConfig cfg = from_profile(profile);
  for (const auto& [path, value] : assignments) {
    if (path != "profile") find(path).set(cfg, value);
  }
  cfg.train.model.image_size = cfg.train.data.image_size;
  cfg.train.model.num_classes = cfg.train.data.num_fg_classes;
  cfg.train.validate();
  if (cfg.seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
  return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
  json out = json::object();
  for (const auto& e : entries()) {
    json* node = &out;
    std::stringstream ss(e.key.path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    (*node)[parts.back()] = e.get(cfg);
  }
  return out.dump(2);
}

std::string config_key_help() {
  static const char* kind_names[] = {"int", "uint", "real", "bool", "string", "real list", "uint list"};
  const RunConfig desk;
  std::string out = "Config keys (JSON via --config, or --set key=value):\n";
  for (const auto& e : entries()) {
    out += "  " + e.key.path + " <" + kind_names[static_cast<int>(e.key.kind)] + ">  " + e.key.help +
           " [desk: " + e.get(desk).dump() + "]\n";
  }
  return out;
}

}  // namespace daunet::cli
