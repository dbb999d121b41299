// Flat `key = value` run configuration. Every key has a documented
// default; unknown keys are rejected so typos fail loudly. Values stay
// strings internally, with typed getters validating on access.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hear/errors.hpp"
#include "hear/io.hpp"

namespace hear {

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string help;
};

// The full tunable surface, one row per key. `--help` prints this.
inline const std::vector<ConfigKey>& config_registry() {
  static const std::vector<ConfigKey> keys = {
      {"variant", "tiny", "model size preset: tiny (6 layers) or base (12)"},
      {"hidden_dim", "64", "transformer width"},
      {"window_len", "200", "samples per temporal patch"},
      {"max_time_patches", "16", "temporal position table length"},
      {"codebook_size", "2048", "vector-quantizer codebook entries"},
      {"target_rate", "200", "resample target in Hz"},
      {"band_lo", "1", "bandpass low edge in Hz"},
      {"band_hi", "75", "bandpass high edge in Hz"},
      {"signal_scale", "0.01", "amplitude scale applied after filtering"},
      {"mask_ratio", "0.5", "fraction of patch rows masked in pretraining"},
      {"lr", "0.001", "base learning rate (cosine decay)"},
      {"weight_decay", "0.01", "decoupled weight decay"},
      {"batch_size", "16", "samples per training batch"},
      {"steps", "500", "pretraining optimizer steps"},
      {"epochs", "10", "fine-tuning epochs"},
      {"linear_probe", "false", "freeze the backbone during fine-tuning"},
      {"classes", "2", "label count for fine-tuning and evaluation"},
      {"prefetch_depth", "2", "prefetched batches, 0 for synchronous loads"},
      {"workers", "1", "logical data-parallel workers"},
      {"samples_per_layout", "200", "generated recordings per layout"},
      {"noise_sigma", "1", "generator noise standard deviation"},
      {"duration", "3.2", "generated recording length in seconds"},
      {"seed", "0", "master RNG seed"},
      {"eval_seeds", "0 1 2", "protocol seeds, space separated"},
      {"data_dir", ".",
       "data root; the HEAR_DATA_DIR environment variable overrides this "
       "default"},
      {"dictionary", "",
       "channel dictionary path; empty means <data_dir>/global_dictionary.txt"},
  };
  return keys;
}

class RunConfig {
public:
  RunConfig() {
    for (const ConfigKey& k : config_registry()) values_[k.key] = k.default_value;
    if (const char* env = std::getenv("HEAR_DATA_DIR")) {
      if (*env != '\0') values_["data_dir"] = env;
    }
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) {
      throw ConfigError("unknown config key: " + key);
    }
    it->second = value;
  }

  // `key = value` lines; blank lines and `#` comments are skipped.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string stripped = detail::trim(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      const std::size_t eq = stripped.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected key = value");
      }
      const std::string key = detail::trim(stripped.substr(0, eq));
      const std::string value = detail::trim(stripped.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty key");
      }
      try {
        set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("config line " + std::to_string(line_no) + ": " +
                          e.what());
      }
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      throw ConfigError("unknown config key: " + key);
    }
    return it->second;
  }

  double get_real(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const double parsed = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(parsed)) {
      throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    }
    return parsed;
  }

  std::size_t get_size(const std::string& key) const {
    const std::string& v = get(key);
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError(key + ": expected a nonnegative integer, got '" + v +
                        "'");
    }
    return static_cast<std::size_t>(std::strtoull(v.c_str(), nullptr, 10));
  }

  std::uint64_t get_u64(const std::string& key) const {
    return static_cast<std::uint64_t>(get_size(key));
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
  }

  std::vector<std::uint64_t> get_seed_list(const std::string& key) const {
    const std::string& v = get(key);
    std::vector<std::uint64_t> seeds;
    std::size_t i = 0;
    while (i < v.size()) {
      while (i < v.size() && v[i] == ' ') ++i;
      if (i >= v.size()) break;
      std::size_t j = i;
      while (j < v.size() && v[j] != ' ') ++j;
      const std::string tok = v.substr(i, j - i);
      if (tok.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError(key + ": expected space-separated integers, got '" +
                          v + "'");
      }
      seeds.push_back(std::strtoull(tok.c_str(), nullptr, 10));
      i = j;
    }
    if (seeds.empty()) throw ConfigError(key + ": no seeds given");
    return seeds;
  }

  // The dictionary key defaults to a file inside data_dir.
  std::string dictionary_path() const {
    const std::string& v = get("dictionary");
    if (!v.empty()) return v;
    return get("data_dir") + "/global_dictionary.txt";
  }

private:
  std::map<std::string, std::string> values_;
};

}  // namespace hear
