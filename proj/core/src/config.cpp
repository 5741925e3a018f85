#include "protoner/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "protoner/errors.hpp"

namespace protoner {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

FlagSetting parse_flag(const std::string& key, const std::string& v) {
  if (v == "auto") return FlagSetting::automatic;
  if (v == "1" || v == "true" || v == "on" || v == "yes") return FlagSetting::on;
  if (v == "0" || v == "false" || v == "off" || v == "no") return FlagSetting::off;
  throw ConfigError("config key '" + key + "': expected auto/on/off, got '" + v + "'");
}

std::string flag_text(FlagSetting f) {
  switch (f) {
    case FlagSetting::automatic: return "auto";
    case FlagSetting::on: return "on";
    case FlagSetting::off: return "off";
  }
  return "auto";
}

std::string double_text(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  std::stringstream ss{v};
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  return out;
}

std::string double_list_text(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += double_text(v[i]);
  }
  return out;
}

struct KeyHandler {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyHandler>& key_handlers() {
  static const std::vector<KeyHandler> handlers = {
      {"way", [](RunConfig& c, const std::string& v) { c.way = parse_int("way", v); },
       [](const RunConfig& c) { return std::to_string(c.way); }},
      {"shot_lo", [](RunConfig& c, const std::string& v) { c.shot_lo = parse_int("shot_lo", v); },
       [](const RunConfig& c) { return std::to_string(c.shot_lo); }},
      {"shot_hi", [](RunConfig& c, const std::string& v) { c.shot_hi = parse_int("shot_hi", v); },
       [](const RunConfig& c) { return std::to_string(c.shot_hi); }},
      {"query_per_class",
       [](RunConfig& c, const std::string& v) { c.query_per_class = parse_int("query_per_class", v); },
       [](const RunConfig& c) { return std::to_string(c.query_per_class); }},
      {"episodes_train",
       [](RunConfig& c, const std::string& v) { c.episodes_train = parse_int("episodes_train", v); },
       [](const RunConfig& c) { return std::to_string(c.episodes_train); }},
      {"episodes_eval",
       [](RunConfig& c, const std::string& v) { c.episodes_eval = parse_int("episodes_eval", v); },
       [](const RunConfig& c) { return std::to_string(c.episodes_eval); }},
      {"learning_rate",
       [](RunConfig& c, const std::string& v) { c.learning_rate = parse_double("learning_rate", v); },
       [](const RunConfig& c) { return double_text(c.learning_rate); }},
      {"batch_size",
       [](RunConfig& c, const std::string& v) { c.batch_size = parse_int("batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.batch_size); }},
      {"max_len", [](RunConfig& c, const std::string& v) { c.max_len = parse_int("max_len", v); },
       [](const RunConfig& c) { return std::to_string(c.max_len); }},
      {"dropout", [](RunConfig& c, const std::string& v) { c.dropout = parse_double("dropout", v); },
       [](const RunConfig& c) { return double_text(c.dropout); }},
      {"mmd_weight",
       [](RunConfig& c, const std::string& v) { c.mmd_weight = parse_double("mmd_weight", v); },
       [](const RunConfig& c) { return double_text(c.mmd_weight); }},
      {"mmd_target",
       [](RunConfig& c, const std::string& v) {
         if (v != "query" && v != "test_support") {
           throw ConfigError("mmd_target must be 'query' or 'test_support'");
         }
         c.mmd_target = v;
       },
       [](const RunConfig& c) { return c.mmd_target; }},
      {"span_detection",
       [](RunConfig& c, const std::string& v) { c.span_detection = parse_flag("span_detection", v); },
       [](const RunConfig& c) { return flag_text(c.span_detection); }},
      {"context_intervention",
       [](RunConfig& c, const std::string& v) {
         c.context_intervention = parse_flag("context_intervention", v);
       },
       [](const RunConfig& c) { return flag_text(c.context_intervention); }},
      {"prototype_intervention",
       [](RunConfig& c, const std::string& v) {
         c.prototype_intervention = parse_flag("prototype_intervention", v);
       },
       [](const RunConfig& c) { return flag_text(c.prototype_intervention); }},
      {"sample_reweighting",
       [](RunConfig& c, const std::string& v) {
         c.sample_reweighting = parse_flag("sample_reweighting", v);
       },
       [](const RunConfig& c) { return flag_text(c.sample_reweighting); }},
      {"lambda", [](RunConfig& c, const std::string& v) { c.lambda = parse_double("lambda", v); },
       [](const RunConfig& c) { return double_text(c.lambda); }},
      {"tau", [](RunConfig& c, const std::string& v) { c.tau = parse_double("tau", v); },
       [](const RunConfig& c) { return double_text(c.tau); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"encoder_dim",
       [](RunConfig& c, const std::string& v) { c.encoder_dim = parse_int("encoder_dim", v); },
       [](const RunConfig& c) { return std::to_string(c.encoder_dim); }},
      {"hash_buckets",
       [](RunConfig& c, const std::string& v) { c.hash_buckets = parse_int("hash_buckets", v); },
       [](const RunConfig& c) { return std::to_string(c.hash_buckets); }},
      {"context_window",
       [](RunConfig& c, const std::string& v) { c.context_window = parse_int("context_window", v); },
       [](const RunConfig& c) { return std::to_string(c.context_window); }},
      {"pool_scope",
       [](RunConfig& c, const std::string& v) {
         if (v != "support" && v != "corpus") {
           throw ConfigError("pool_scope must be 'support' or 'corpus'");
         }
         c.pool_scope = v;
       },
       [](const RunConfig& c) { return c.pool_scope; }},
      {"memory_at_test",
       [](RunConfig& c, const std::string& v) { c.memory_at_test = parse_bool("memory_at_test", v); },
       [](const RunConfig& c) { return c.memory_at_test ? std::string("on") : std::string("off"); }},
      {"mmd_max_batch",
       [](RunConfig& c, const std::string& v) { c.mmd_max_batch = parse_int("mmd_max_batch", v); },
       [](const RunConfig& c) { return std::to_string(c.mmd_max_batch); }},
      {"mmd_bandwidths",
       [](RunConfig& c, const std::string& v) {
         c.mmd_bandwidths = parse_double_list("mmd_bandwidths", v);
       },
       [](const RunConfig& c) { return double_list_text(c.mmd_bandwidths); }},
  };
  return handlers;
}

void apply_env_overrides(RunConfig& config) {
  for (const KeyHandler& h : key_handlers()) {
    std::string env_name = "PROTONER_";
    for (char ch : h.name) env_name += static_cast<char>(std::toupper(ch));
    const char* v = std::getenv(env_name.c_str());
    if (v != nullptr) h.set(config, v);
  }
}

}  // namespace

RunConfig parse_config_text(std::string_view text, bool apply_env) {
  RunConfig config;
  std::istringstream ss{std::string(text)};
  std::string line;
  long line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    bool known = false;
    for (const KeyHandler& h : key_handlers()) {
      if (h.name == key) {
        h.set(config, value);
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (apply_env) apply_env_overrides(config);
  return config;
}

RunConfig parse_config_file(const std::filesystem::path& path, bool apply_env) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), apply_env);
}

std::string config_to_text(const RunConfig& config) {
  std::string out;
  for (const KeyHandler& h : key_handlers()) {
    out += h.name;
    out += '=';
    out += h.get(config);
    out += '\n';
  }
  return out;
}

}  // namespace protoner
