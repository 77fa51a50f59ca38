#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "obench/errors.hpp"
#include "obench/gateway.hpp"
#include "obench/harness.hpp"

namespace obench {

// Minimal TOML-style config reader: [tables], key = value pairs, strings,
// numbers, booleans and flat arrays. Keys flatten to "table.key".
class ConfigFile {
 public:
  using Value = std::variant<std::string, double, bool, std::vector<std::string>,
                             std::vector<double>>;

  static ConfigFile parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  static ConfigFile parse(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip_comment(line);
      s = trim(s);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError(err(lineno, "unterminated table header"));
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty()) throw ConfigError(err(lineno, "empty table name"));
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(err(lineno, "expected key = value"));
      std::string key = trim(s.substr(0, eq));
      std::string value = trim(s.substr(eq + 1));
      if (key.empty() || value.empty()) throw ConfigError(err(lineno, "empty key or value"));
      std::string full = section.empty() ? key : section + "." + key;
      cfg.values_[full] = parse_value(value, lineno);
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  std::string get_string(const std::string& key, const std::string& fallback = "") const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* s = std::get_if<std::string>(&it->second)) return *s;
    throw ConfigError("config key '" + key + "' is not a string");
  }

  double get_number(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* d = std::get_if<double>(&it->second)) return *d;
    throw ConfigError("config key '" + key + "' is not a number");
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* b = std::get_if<bool>(&it->second)) return *b;
    throw ConfigError("config key '" + key + "' is not a boolean");
  }

  std::vector<std::string> get_string_list(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return {};
    if (auto* v = std::get_if<std::vector<std::string>>(&it->second)) return *v;
    if (auto* s = std::get_if<std::string>(&it->second)) return {*s};
    throw ConfigError("config key '" + key + "' is not a string list");
  }

  std::vector<double> get_number_list(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return {};
    if (auto* v = std::get_if<std::vector<double>>(&it->second)) return *v;
    if (auto* d = std::get_if<double>(&it->second)) return {*d};
    throw ConfigError("config key '" + key + "' is not a number list");
  }

  // table names that start with the given prefix, e.g. "case."
  std::vector<std::string> subtables(const std::string& prefix) const {
    std::vector<std::string> names;
    for (const auto& [key, value] : values_) {
      if (key.rfind(prefix, 0) != 0) continue;
      auto rest = key.substr(prefix.size());
      auto dot = rest.find('.');
      if (dot == std::string::npos) continue;
      std::string name = rest.substr(0, dot);
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
    return names;
  }

 private:
  static std::string err(int lineno, const std::string& what) {
    return "config line " + std::to_string(lineno) + ": " + what;
  }

  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }

  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static std::string parse_scalar_string(const std::string& v, int lineno) {
    if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
      throw ConfigError(err(lineno, "expected quoted string: " + v));
    }
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        ++i;
        switch (v[i]) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: out += v[i];
        }
      } else {
        out += v[i];
      }
    }
    return out;
  }

  static Value parse_value(const std::string& v, int lineno) {
    if (v.front() == '"') return parse_scalar_string(v, lineno);
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[') {
      if (v.back() != ']') throw ConfigError(err(lineno, "unterminated array"));
      std::string inner = v.substr(1, v.size() - 2);
      std::vector<std::string> items;
      std::string cur;
      bool quoted = false;
      for (char c : inner) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
          items.push_back(trim(cur));
          cur.clear();
        } else {
          cur += c;
        }
      }
      if (!trim(cur).empty()) items.push_back(trim(cur));
      bool strings = !items.empty() && items.front().front() == '"';
      if (strings) {
        std::vector<std::string> out;
        for (const auto& item : items) out.push_back(parse_scalar_string(item, lineno));
        return out;
      }
      std::vector<double> out;
      for (const auto& item : items) out.push_back(parse_number(item, lineno));
      return out;
    }
    return parse_number(v, lineno);
  }

  static double parse_number(const std::string& v, int lineno) {
    try {
      std::size_t pos = 0;
      double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError(err(lineno, "not a number: " + v));
    }
  }

  std::map<std::string, Value> values_;
};

struct LocalModelConfig {
  int main_order = 3;
  int draft_order = 2;
  double smoothing_k = 0.05;
};

// Everything a bench run needs, reproducible from one file plus overrides.
struct RunConfig {
  std::vector<std::string> corpus_paths;
  int synthetic_tokens = 0;  // > 0 generates filler instead of loading files
  std::uint64_t synthetic_seed = 17;

  EndpointConfig endpoint;
  LocalModelConfig local;

  std::vector<std::string> case_names{"retrieval", "override-training",
                                      "moderation-override", "jailbreak"};
  std::vector<TestCase> extra_cases;  // from [case.NAME] tables

  GridSpec grid = default_grid();
  std::string output_dir = "out";
  int parallelism = 4;
  std::uint64_t seed = 42;
  bool snap_sentence = false;

  void validate() const {
    if (case_names.empty()) throw ConfigError("no test cases selected");
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (corpus_paths.empty() && synthetic_tokens <= 0) {
      throw ConfigError("need either corpus paths or synthetic_tokens > 0");
    }
    grid.validate();
    endpoint.validate();
  }
};

inline TestCase case_from_config(const ConfigFile& cfg, const std::string& name) {
  std::string p = "case." + name + ".";
  TestCase tc;
  if (const TestCase* builtin = find_test_case(builtin_test_cases(), name)) tc = *builtin;
  tc.name = name;
  if (cfg.has(p + "needle")) tc.needle = cfg.get_string(p + "needle");
  if (cfg.has(p + "question")) tc.question = cfg.get_string(p + "question");
  if (cfg.has(p + "rewards")) tc.reward_substrings = cfg.get_string_list(p + "rewards");
  if (cfg.has(p + "penalties")) tc.penalty_substrings = cfg.get_string_list(p + "penalties");
  if (cfg.has(p + "penalty_weight")) {
    tc.penalty_weight = cfg.get_number(p + "penalty_weight", tc.penalty_weight);
  }
  if (cfg.has(p + "preamble")) tc.preamble = cfg.get_string(p + "preamble");
  if (cfg.has(p + "reward_requires_all")) {
    tc.reward_requires_all = cfg.get_bool(p + "reward_requires_all", false);
  }
  validate_test_case(tc);
  return tc;
}

inline RunConfig run_config_from_file(const std::string& path) {
  ConfigFile cfg = ConfigFile::parse_file(path);
  RunConfig rc;

  rc.corpus_paths = cfg.get_string_list("corpus.paths");
  rc.synthetic_tokens = static_cast<int>(cfg.get_number("corpus.synthetic_tokens", 0));
  rc.synthetic_seed =
      static_cast<std::uint64_t>(cfg.get_number("corpus.synthetic_seed", 17));

  std::string kind = cfg.get_string("endpoint.kind", "local");
  if (kind == "local") {
    rc.endpoint.kind = EndpointConfig::Kind::local;
  } else if (kind == "remote") {
    rc.endpoint.kind = EndpointConfig::Kind::remote;
  } else {
    throw ConfigError("endpoint.kind must be local or remote");
  }
  rc.endpoint.base_url = cfg.get_string("endpoint.base_url", "");
  rc.endpoint.model_name = cfg.get_string("endpoint.model_name", "toy-ngram");
  rc.endpoint.max_tokens =
      static_cast<int>(cfg.get_number("endpoint.max_tokens", rc.endpoint.max_tokens));
  rc.endpoint.temperature = cfg.get_number("endpoint.temperature", 0.0);
  rc.endpoint.timeout_s = cfg.get_number("endpoint.timeout_s", 30.0);
  rc.endpoint.retries = static_cast<int>(cfg.get_number("endpoint.retries", 2));
  rc.endpoint.backoff_base_s = cfg.get_number("endpoint.backoff_base_s", 0.5);

  rc.local.main_order = static_cast<int>(cfg.get_number("local.main_order", 3));
  rc.local.draft_order = static_cast<int>(cfg.get_number("local.draft_order", 2));
  rc.local.smoothing_k = cfg.get_number("local.smoothing_k", 0.05);

  if (cfg.has("grid.depths")) {
    rc.grid.depths = cfg.get_number_list("grid.depths");
  }
  if (cfg.has("grid.lengths")) {
    rc.grid.lengths.clear();
    for (double d : cfg.get_number_list("grid.lengths")) {
      rc.grid.lengths.push_back(static_cast<int>(d));
    }
  } else if (cfg.has("grid.length_start") || cfg.has("grid.length_cap") ||
             cfg.has("grid.progression")) {
    auto prog = cfg.get_string("grid.progression", "geometric") == "linear"
                    ? LengthProgression::linear
                    : LengthProgression::geometric;
    rc.grid.lengths =
        make_lengths(static_cast<int>(cfg.get_number("grid.length_start", 100)),
                     static_cast<int>(cfg.get_number("grid.length_cap", 4096)), prog,
                     static_cast<int>(cfg.get_number("grid.percent", 10)));
    rc.grid.progression = prog;
  }

  if (cfg.has("run.cases")) rc.case_names = cfg.get_string_list("run.cases");
  rc.output_dir = cfg.get_string("run.output_dir", rc.output_dir);
  rc.parallelism = static_cast<int>(cfg.get_number("run.parallelism", rc.parallelism));
  rc.seed = static_cast<std::uint64_t>(cfg.get_number("run.seed", 42));
  rc.snap_sentence = cfg.get_bool("run.snap_sentence", false);

  for (const auto& name : cfg.subtables("case.")) {
    rc.extra_cases.push_back(case_from_config(cfg, name));
  }
  return rc;
}

// Selected cases in selection order: overrides from the config win over
// builtins of the same name.
inline std::vector<TestCase> resolve_cases(const RunConfig& rc) {
  auto builtins = builtin_test_cases();
  std::vector<TestCase> out;
  for (const auto& name : rc.case_names) {
    if (const TestCase* o = find_test_case(rc.extra_cases, name)) {
      out.push_back(*o);
    } else if (const TestCase* b = find_test_case(builtins, name)) {
      out.push_back(*b);
    } else {
      throw ConfigError("unknown test case: " + name);
    }
  }
  return out;
}

}  // namespace obench
