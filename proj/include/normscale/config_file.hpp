#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <string>

#include "normscale/errors.hpp"
#include "normscale/exphost.hpp"

namespace normscale {

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

/// Plain `key = value` lines; `#` starts a comment; blank lines ignored.
inline std::map<std::string, std::string> parse_config(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw contract_error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw contract_error("config line " + std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw contract_error("cannot open config file: " + path);
  return parse_config(f);
}

namespace detail {
inline double config_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw contract_error("config key " + key + ": bad number: " + v);
  return x;
}

inline int config_int(const std::string& key, const std::string& v) {
  const double x = config_double(key, v);
  const int i = static_cast<int>(x);
  if (static_cast<double>(i) != x)
    throw contract_error("config key " + key + ": expected integer: " + v);
  return i;
}

inline bool config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw contract_error("config key " + key + ": expected boolean: " + v);
}
}  // namespace detail

/// Apply parsed keys onto a TrainConfig. Unknown keys are errors so typos
/// cannot silently fall back to defaults.
inline void apply_config(TrainConfig& cfg,
                         const std::map<std::string, std::string>& kv) {
  for (const auto& [key, v] : kv) {
    if (key == "rule" || key == "optimizer") {
      const auto r = rule_from_name(v);
      if (!r) throw contract_error("config key " + key + ": unknown rule: " + v);
      cfg.opt.rule = *r;
    } else if (key == "eta") {
      cfg.opt.eta = detail::config_double(key, v);
    } else if (key == "lambda") {
      cfg.opt.lambda = detail::config_double(key, v);
    } else if (key == "rho") {
      cfg.opt.rho = detail::config_double(key, v);
    } else if (key == "rho1") {
      cfg.opt.rho1 = detail::config_double(key, v);
    } else if (key == "rho2") {
      cfg.opt.rho2 = detail::config_double(key, v);
    } else if (key == "eps") {
      cfg.opt.eps = detail::config_double(key, v);
    } else if (key == "epochs") {
      cfg.epochs = detail::config_int(key, v);
    } else if (key == "batch_size") {
      cfg.batch_size = detail::config_int(key, v);
    } else if (key == "lr_drop1") {
      cfg.lr_drop1 = detail::config_double(key, v);
    } else if (key == "lr_drop2") {
      cfg.lr_drop2 = detail::config_double(key, v);
    } else if (key == "input_dim") {
      cfg.net.input_dim = detail::config_int(key, v);
      cfg.data.dim = cfg.net.input_dim;
    } else if (key == "hidden_units") {
      cfg.net.hidden_units = detail::config_int(key, v);
    } else if (key == "n_train") {
      cfg.data.n_train = detail::config_int(key, v);
    } else if (key == "n_val") {
      cfg.data.n_val = detail::config_int(key, v);
    } else if (key == "n_test") {
      cfg.data.n_test = detail::config_int(key, v);
    } else if (key == "separation") {
      cfg.data.separation = detail::config_double(key, v);
    } else if (key == "dataset_seed") {
      cfg.data.seed = static_cast<std::uint64_t>(detail::config_double(key, v));
    } else if (key == "normalize_weights") {
      cfg.normalize_weights = detail::config_bool(key, v);
    } else if (key == "head_lr") {
      cfg.head_lr = detail::config_double(key, v);
    } else if (key == "init_weight_scale") {
      cfg.init_weight_scale = detail::config_double(key, v);
    } else {
      throw contract_error("unknown config key: " + key);
    }
  }
}

}  // namespace normscale
