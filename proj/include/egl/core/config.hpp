#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "egl/core/types.hpp"

namespace egl {

struct ConfigKey {
  std::string_view name;
  std::string_view fallback;
  double lo;
  double hi;
  bool numeric;
  std::string_view help;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Every tunable of the pipeline. Bounds are inclusive.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "1", 0, 1e18, true, "master seed"},
      // synthetic world
      {"n_entities", "1000", 1, 1e7, true, "entities in generated world"},
      {"n_communities", "10", 1, 1e6, true, "planted communities"},
      {"intra_p", "0.1", 0, 1, true, "intra-community edge probability"},
      {"inter_p", "0.001", 0, 1, true, "inter-community edge probability"},
      {"n_users", "2000", 0, 1e8, true, "simulated users"},
      {"walk_len", "20", 1, 1e4, true, "entities per random walk"},
      {"walks_per_user", "5", 1, 1e4, true, "random walks per user"},
      {"semantic_noise", "0.35", 0, 10, true, "noise added to community centroids"},
      {"semantic_dim", "32", 1, 4096, true, "dimension of generated semantic vectors"},
      {"now", "1700000000", 0, 1e12, true, "reference time for the behavior window"},
      // extraction
      {"window_days", "30", 1, 3650, true, "behavior window"},
      // candidate generation
      {"dim", "64", 1, 4096, true, "SGNS embedding dimension"},
      {"window", "5", 1, 100, true, "SGNS context window"},
      {"kneg", "5", 1, 100, true, "negatives per SGNS pair"},
      {"sgns_epochs", "5", 0, 1000, true, "SGNS passes over the corpus"},
      {"sgns_lr", "0.025", 1e-9, 10, true, "SGNS initial learning rate"},
      {"unigram_power", "0.75", 0, 2, true, "exponent of the negative distribution"},
      {"semantic_mode", "hash", 0, 0, false, "file | hash"},
      {"semantic_file", "", 0, 0, false, "semantic vectors for file mode (pipeline: empty means the generated world's)"},
      {"semantic_buckets", "256", 1, 1e6, true, "hash-mode buckets"},
      {"semantic_ngram", "3", 1, 16, true, "hash-mode character n"},
      {"topk", "50", 1, 1e6, true, "candidates per entity per source"},
      {"min_sim", "0.5", -1.01, 1.01, true, "candidate cosine floor"},
      {"candidate_mode", "union", 0, 0, false, "union | intersection"},
      // split
      {"test_frac", "0.1", 1e-9, 1 - 1e-9, true, "held-out positive fraction"},
      {"train_neg_ratio", "3", 1, 1000, true, "train negatives per positive"},
      // ranking model
      {"alpha", "1", 0, 1e6, true, "threshold loss weight"},
      {"beta", "1", 0, 1e6, true, "contrastive loss weight"},
      {"tau", "0.2", 1e-9, 1e6, true, "InfoNCE temperature"},
      {"anchor_sim", "0.8", -1, 1.01, true, "anchor pair semantic cosine floor"},
      {"layers", "2", 1, 16, true, "encoder layers"},
      {"hidden", "32", 1, 4096, true, "encoder hidden size"},
      {"batch", "512", 1, 1e7, true, "pairs per mini-batch"},
      {"anchor_batch", "64", 2, 1e6, true, "anchor pairs per mini-batch"},
      {"lr", "0.005", 1e-9, 10, true, "Adam learning rate"},
      {"epochs", "50", 0, 1e5, true, "max training epochs"},
      {"patience", "5", 1, 1e5, true, "early-stopping patience"},
      {"hard_neg_ratio", "0", 0, 100, true, "candidate non-edges per training positive"},
      {"neighbor_cap", "16", 1, 1e6, true, "neighbors per node per layer"},
      {"encoder", "geniepath", 0, 0, false, "geniepath | mean"},
      // ensemble
      {"snapshots", "3", 2, 64, true, "ranking model snapshots"},
      {"ens_heads", "2", 1, 64, true, "attention heads"},
      {"ens_epochs", "20", 0, 1e5, true, "ensemble training epochs"},
      {"ens_lr", "0.005", 1e-9, 10, true, "ensemble learning rate"},
      // online
      {"hops", "2", 0, 64, true, "default expansion depth"},
      {"max_per_hop", "20", 1, 1e9, true, "neighbors kept per frontier node"},
      {"k", "100", 1, 1e9, true, "users exported"},
  };
  return keys;
}

// Flat key = value configuration; unknown keys and out-of-range values are
// rejected at set time.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[std::string(k.name)] = std::string(k.fallback);
  }

  static RunConfig from_stream(std::istream& in) {
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto eq = line.find('=');
      if (normalize_name(line).empty()) continue;
      if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
      auto key = normalize_name(line.substr(0, eq));
      std::string value = line.substr(eq + 1);
      auto b = value.find_first_not_of(" \t\r");
      auto e = value.find_last_not_of(" \t\r");
      value = b == std::string::npos ? "" : value.substr(b, e - b + 1);
      try {
        cfg.set(key, value);
      } catch (const Error& ex) {
        throw Error("config line " + std::to_string(lineno) + ": " + ex.what());
      }
    }
    return cfg;
  }

  static RunConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    return from_stream(in);
  }

  void set(const std::string& key, const std::string& value) {
    const auto* spec = find(key);
    if (!spec) throw Error("unknown config key '" + key + "'");
    if (spec->numeric) {
      char* end = nullptr;
      double v = std::strtod(value.c_str(), &end);
      if (value.empty() || *end != '\0' || !std::isfinite(v)) throw Error("'" + key + "' expects a number, got '" + value + "'");
      if (v < spec->lo || v > spec->hi)
        throw Error("'" + key + "' = " + value + " outside legal range [" + num(spec->lo) + ", " + num(spec->hi) + "]");
    }
    values_[key] = value;
  }

  double num(const std::string& key) const { return std::strtod(str(key).c_str(), nullptr); }
  long long integer(const std::string& key) const { return static_cast<long long>(std::llround(num(key))); }
  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(integer(key)); }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error("unknown config key '" + key + "'");
    return it->second;
  }

  // Canonical rendering, sorted by key.
  std::string dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static const ConfigKey* find(const std::string& key) {
    for (const auto& k : config_keys())
      if (k.name == key) return &k;
    return nullptr;
  }

  static std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }

  std::map<std::string, std::string> values_;
};

}  // namespace egl
