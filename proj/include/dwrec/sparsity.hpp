#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dwrec/corpus.hpp"
#include "dwrec/error.hpp"

namespace dwrec {

enum class MappingMode { kAffine, kClip };

inline std::string to_string(MappingMode m) { return m == MappingMode::kAffine ? "affine" : "clip"; }

inline MappingMode parse_mapping_mode(const std::string& s) {
  if (s == "affine") return MappingMode::kAffine;
  if (s == "clip") return MappingMode::kClip;
  throw ConfigError("unknown mapping mode '" + s + "' (expected affine or clip)");
}

// Mixing coefficients of the sparsity score and the weight bounds.
// Logarithms are natural.
struct SparsityConfig {
  double alpha = 1.0 / 3.0;
  double beta = 1.0 / 3.0;
  double gamma = 1.0 / 3.0;
  double w_min = 0.2;
  double w_max = 5.0;
  MappingMode mapping_mode = MappingMode::kAffine;

  void validate() const {
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0 || !(alpha + beta + gamma > 0.0))
      throw ConfigError("sparsity: alpha, beta, gamma must be non-negative with a positive sum");
    if (!(w_min > 0.0) || !(w_min <= w_max)) throw ConfigError("sparsity: need 0 < w_min <= w_max");
  }

  friend bool operator==(const SparsityConfig&, const SparsityConfig&) = default;
};

inline nlohmann::json to_json(const SparsityConfig& c) {
  return {{"alpha", c.alpha}, {"beta", c.beta},   {"gamma", c.gamma},
          {"w_min", c.w_min}, {"w_max", c.w_max}, {"mapping_mode", to_string(c.mapping_mode)},
          {"log_base", "natural"}};
}

inline SparsityConfig sparsity_config_from_json(const nlohmann::json& j) {
  SparsityConfig c;
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.w_min = j.at("w_min").get<double>();
  c.w_max = j.at("w_max").get<double>();
  c.mapping_mode = parse_mapping_mode(j.at("mapping_mode").get<std::string>());
  c.validate();
  return c;
}

// Per-domain sparsity components, aligned with `domains`.
struct DomainStats {
  std::vector<std::string> domains;
  std::vector<double> frequency;   // f_d, single-counted mass / |I|
  std::vector<double> user_ratio;  // r_d = |U| / |U_d|
  std::vector<double> entropy;     // H_d over the within-domain item distribution
  std::vector<double> score;       // s_d
  std::vector<std::size_t> distinct_items;

  std::size_t size() const { return domains.size(); }
};

inline double sparsity_score(double frequency, double user_ratio, double entropy, const SparsityConfig& c) {
  return c.alpha * std::log(1.0 / frequency) + c.beta * std::log(user_ratio) + c.gamma * entropy;
}

// Statistics for an explicit domain list; a listed domain without users in
// `corpus` is an error. Runs in O(|I| + |U| * |D|).
inline DomainStats compute_domain_stats(const Corpus& corpus, const SparsityConfig& config,
                                        std::span<const std::string> domains) {
  config.validate();
  if (corpus.num_interactions() == 0) throw StatsError("stats: corpus is empty");
  const std::size_t D = domains.size();

  std::vector<std::optional<Corpus::Index>> local(D);
  for (std::size_t k = 0; k < D; ++k) {
    local[k] = corpus.find_domain(domains[k]);
    if (!local[k] || corpus.domain_users(*local[k]) == 0)
      throw StatsError("stats: domain '" + domains[k] + "' has no users in the training data");
  }

  // Single-counted mass and per-(item, domain) counts, laid out flat in the
  // corpus's item-domain order.
  std::vector<double> mass(corpus.num_domains(), 0.0);
  std::vector<std::uint32_t> counts(corpus.num_item_domain_pairs(), 0);
  for (std::size_t pos = 0; pos < corpus.num_interactions(); ++pos) {
    const auto ds = corpus.domains_of(pos);
    const auto slots = corpus.domain_slots_of(pos);
    const double share = 1.0 / static_cast<double>(ds.size());
    for (std::size_t k = 0; k < ds.size(); ++k) {
      mass[ds[k]] += share;
      ++counts[slots[k]];
    }
  }

  // H = log N - (1/N) * sum c log c, with N the domain's interaction count.
  std::vector<double> clogc(corpus.num_domains(), 0.0);
  std::vector<std::size_t> distinct(corpus.num_domains(), 0);
  for (Corpus::Index item = 0; item < corpus.num_items(); ++item) {
    const auto item_ds = corpus.item_domains(item);
    const auto base = corpus.item_domain_offset(item);
    for (std::size_t k = 0; k < item_ds.size(); ++k) {
      const double c = counts[base + k];
      if (c == 0) continue;
      clogc[item_ds[k]] += c * std::log(c);
      ++distinct[item_ds[k]];
    }
  }

  DomainStats stats;
  stats.domains.assign(domains.begin(), domains.end());
  const double total = static_cast<double>(corpus.num_interactions());
  const double users = static_cast<double>(corpus.num_users());
  for (std::size_t k = 0; k < D; ++k) {
    const auto d = *local[k];
    const double n = static_cast<double>(corpus.domain_interactions(d));
    const double f = mass[d] / total;
    const double r = users / static_cast<double>(corpus.domain_users(d));
    const double h = std::max(0.0, std::log(n) - clogc[d] / n);
    stats.frequency.push_back(f);
    stats.user_ratio.push_back(r);
    stats.entropy.push_back(h);
    stats.score.push_back(sparsity_score(f, r, h, config));
    stats.distinct_items.push_back(distinct[d]);
  }
  return stats;
}

inline DomainStats compute_domain_stats(const Corpus& corpus, const SparsityConfig& config) {
  return compute_domain_stats(corpus, config, corpus.domain_catalog());
}

// Bounded per-domain loss weights.
struct WeightTable {
  std::vector<std::string> domains;
  std::vector<double> weights;
  SparsityConfig config;
  std::string source;

  std::size_t size() const { return domains.size(); }

  std::optional<double> find(const std::string& domain) const {
    const auto it = std::find(domains.begin(), domains.end(), domain);
    if (it == domains.end()) return std::nullopt;
    return weights[static_cast<std::size_t>(it - domains.begin())];
  }

  double at(const std::string& domain) const {
    if (auto w = find(domain)) return *w;
    throw LossConfigError("weight table has no domain '" + domain + "'");
  }

  friend bool operator==(const WeightTable&, const WeightTable&) = default;
};

inline constexpr double kDegenerateScoreRange = 1e-12;

inline WeightTable compute_weights(const DomainStats& stats, const SparsityConfig& config,
                                   std::string source = "train") {
  config.validate();
  WeightTable table{stats.domains, {}, config, std::move(source)};
  if (stats.size() == 0) return table;
  const auto [lo, hi] = std::minmax_element(stats.score.begin(), stats.score.end());
  const double s_min = *lo, range = *hi - *lo;
  for (double s : stats.score) {
    double w;
    if (range < kDegenerateScoreRange) {
      w = 1.0;
    } else {
      const double t = (s - s_min) / range;
      w = config.mapping_mode == MappingMode::kAffine ? config.w_min + t * (config.w_max - config.w_min) : t;
    }
    table.weights.push_back(std::clamp(w, config.w_min, config.w_max));
  }
  return table;
}

inline constexpr int kSchemaVersion = 1;

inline nlohmann::json to_json(const WeightTable& t) {
  nlohmann::json weights = nlohmann::json::object();
  for (std::size_t k = 0; k < t.size(); ++k) weights[t.domains[k]] = t.weights[k];
  return {{"schema_version", kSchemaVersion}, {"config", to_json(t.config)}, {"source", t.source},
          {"weights", weights}};
}

inline WeightTable weight_table_from_json(const nlohmann::json& j) {
  WeightTable t;
  t.config = sparsity_config_from_json(j.at("config"));
  t.source = j.value("source", std::string("train"));
  for (const auto& [domain, w] : j.at("weights").items()) {
    t.domains.push_back(domain);
    t.weights.push_back(w.get<double>());
  }
  return t;
}

inline void save_weight_table(const WeightTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << to_json(t).dump(2) << '\n';
}

inline WeightTable load_weight_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return weight_table_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace dwrec
