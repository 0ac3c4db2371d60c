#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "dwrec/corpus.hpp"
#include "dwrec/encoder.hpp"
#include "dwrec/error.hpp"
#include "dwrec/synth.hpp"
#include "dwrec/trainer.hpp"

namespace dwrec {

// Every tunable of the pipeline under one flat `section.key = value` namespace.
struct CliConfig {
  std::uint64_t seed = 1;
  SynthConfig synth;
  SplitSpec split;
  double movielens_threshold = 4.0;
  EncoderConfig encoder;
  TrainConfig train;
  std::size_t eval_k = 10;

  struct Key {
    std::string name;
    std::function<std::string(const CliConfig&)> get;
    std::function<void(CliConfig&, const std::string&)> set;
  };

  static const std::vector<Key>& keys();

  void set(const std::string& key, const std::string& value) {
    for (const auto& k : keys()) {
      if (k.name == key) {
        k.set(*this, value);
        return;
      }
    }
    throw ConfigError("unknown config key '" + key + "'");
  }

  std::string get(const std::string& key) const {
    for (const auto& k : keys())
      if (k.name == key) return k.get(*this);
    throw ConfigError("unknown config key '" + key + "'");
  }

  // `key = value` lines; `#` starts a comment.
  void parse(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto text = trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    }
  }

  void parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path);
    parse(in);
  }

  std::string dump() const {
    std::ostringstream out;
    for (const auto& k : keys()) out << k.name << " = " << k.get(*this) << '\n';
    return out.str();
  }

  // Pushes the single seed into every consumer.
  void sync_seed() {
    synth.seed = seed;
    train.seed = seed;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_value(const std::string& key, const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "'");
  return v;
}

inline std::vector<std::string> parse_list(const std::string& s) {
  std::vector<std::string> out;
  if (CliConfig::trim(s).empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) out.push_back(CliConfig::trim(cur));
  return out;
}

inline std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
  return out;
}

template <typename T, typename Member>
CliConfig::Key number_key(std::string name, Member member) {
  return {name,
          [member](const CliConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double(member(const_cast<CliConfig&>(c)));
            else return std::to_string(member(const_cast<CliConfig&>(c)));
          },
          [member, name](CliConfig& c, const std::string& s) { member(c) = parse_value<T>(name, s); }};
}

}  // namespace detail

inline const std::vector<CliConfig::Key>& CliConfig::keys() {
  using detail::number_key;
  using C = CliConfig;
  static const std::vector<Key> table = {
      number_key<std::uint64_t>("seed", [](C& c) -> std::uint64_t& { return c.seed; }),

      number_key<std::size_t>("synth.num_users", [](C& c) -> std::size_t& { return c.synth.num_users; }),
      number_key<std::size_t>("synth.num_items", [](C& c) -> std::size_t& { return c.synth.num_items; }),
      number_key<std::size_t>("synth.num_domains", [](C& c) -> std::size_t& { return c.synth.num_domains; }),
      {"synth.domain_frequency_targets",
       [](const C& c) {
         std::vector<std::string> xs;
         for (double t : c.synth.domain_frequency_targets) xs.push_back(detail::fmt_double(t));
         return detail::join(xs);
       },
       [](C& c, const std::string& s) {
         c.synth.domain_frequency_targets.clear();
         for (const auto& x : detail::parse_list(s))
           c.synth.domain_frequency_targets.push_back(detail::parse_value<double>("synth.domain_frequency_targets", x));
       }},
      {"synth.domain_names", [](const C& c) { return detail::join(c.synth.domain_names); },
       [](C& c, const std::string& s) { c.synth.domain_names = detail::parse_list(s); }},
      number_key<double>("synth.power_user_fraction", [](C& c) -> double& { return c.synth.power_user_fraction; }),
      number_key<double>("synth.power_user_mass", [](C& c) -> double& { return c.synth.power_user_mass; }),
      number_key<double>("synth.interactions_mean", [](C& c) -> double& { return c.synth.interactions_mean; }),
      number_key<double>("synth.interactions_spread", [](C& c) -> double& { return c.synth.interactions_spread; }),
      number_key<std::size_t>("synth.min_interactions", [](C& c) -> std::size_t& { return c.synth.min_interactions; }),
      number_key<double>("synth.ordinary_sparse_ratio", [](C& c) -> double& { return c.synth.ordinary_sparse_ratio; }),
      number_key<double>("synth.preference_concentration",
                         [](C& c) -> double& { return c.synth.preference_concentration; }),
      number_key<double>("synth.popularity_exponent", [](C& c) -> double& { return c.synth.popularity_exponent; }),
      number_key<std::size_t>("synth.cluster_size", [](C& c) -> std::size_t& { return c.synth.cluster_size; }),
      number_key<double>("synth.cluster_affinity", [](C& c) -> double& { return c.synth.cluster_affinity; }),

      number_key<double>("split.val_fraction", [](C& c) -> double& { return c.split.val_fraction; }),
      number_key<double>("split.test_fraction", [](C& c) -> double& { return c.split.test_fraction; }),
      number_key<std::size_t>("split.min_sequence_length",
                              [](C& c) -> std::size_t& { return c.split.min_sequence_length; }),
      number_key<double>("movielens.threshold", [](C& c) -> double& { return c.movielens_threshold; }),

      number_key<double>("sparsity.alpha", [](C& c) -> double& { return c.train.sparsity.alpha; }),
      number_key<double>("sparsity.beta", [](C& c) -> double& { return c.train.sparsity.beta; }),
      number_key<double>("sparsity.gamma", [](C& c) -> double& { return c.train.sparsity.gamma; }),
      number_key<double>("sparsity.w_min", [](C& c) -> double& { return c.train.sparsity.w_min; }),
      number_key<double>("sparsity.w_max", [](C& c) -> double& { return c.train.sparsity.w_max; }),
      {"sparsity.mapping", [](const C& c) { return to_string(c.train.sparsity.mapping_mode); },
       [](C& c, const std::string& s) { c.train.sparsity.mapping_mode = parse_mapping_mode(s); }},

      number_key<int>("encoder.embed_dim", [](C& c) -> int& { return c.encoder.embed_dim; }),
      number_key<int>("encoder.num_layers", [](C& c) -> int& { return c.encoder.num_layers; }),
      number_key<int>("encoder.num_heads", [](C& c) -> int& { return c.encoder.num_heads; }),
      number_key<int>("encoder.ff_hidden", [](C& c) -> int& { return c.encoder.ff_hidden; }),
      number_key<double>("encoder.dropout", [](C& c) -> double& { return c.encoder.dropout; }),
      number_key<int>("encoder.max_seq_len", [](C& c) -> int& { return c.encoder.max_seq_len; }),

      number_key<int>("train.epochs", [](C& c) -> int& { return c.train.epochs; }),
      number_key<int>("train.batch_size", [](C& c) -> int& { return c.train.batch_size; }),
      number_key<double>("train.learning_rate", [](C& c) -> double& { return c.train.optimizer.learning_rate; }),
      number_key<double>("train.beta1", [](C& c) -> double& { return c.train.optimizer.beta1; }),
      number_key<double>("train.beta2", [](C& c) -> double& { return c.train.optimizer.beta2; }),
      number_key<double>("train.epsilon", [](C& c) -> double& { return c.train.optimizer.epsilon; }),
      number_key<double>("train.weight_decay", [](C& c) -> double& { return c.train.optimizer.weight_decay; }),
      number_key<int>("train.checkpoint_every", [](C& c) -> int& { return c.train.checkpoint_every; }),

      {"loss.mode", [](const C& c) { return to_string(c.train.loss.mode); },
       [](C& c, const std::string& s) { c.train.loss.mode = parse_loss_mode(s); }},
      number_key<double>("loss.fixed_weight", [](C& c) -> double& { return c.train.loss.fixed_weight; }),
      {"loss.fixed_domains", [](const C& c) { return detail::join(c.train.loss.fixed_domains); },
       [](C& c, const std::string& s) { c.train.loss.fixed_domains = detail::parse_list(s); }},
      number_key<int>("loss.horizon", [](C& c) -> int& { return c.train.loss.horizon; }),
      number_key<double>("loss.temperature", [](C& c) -> double& { return c.train.loss.temperature; }),
      {"loss.aggregation", [](const C& c) { return to_string(c.train.loss.aggregation); },
       [](C& c, const std::string& s) { c.train.loss.aggregation = parse_aggregation(s); }},

      number_key<double>("schedule.mu", [](C& c) -> double& { return c.train.schedule.mu; }),
      number_key<int>("schedule.update_period_epochs",
                      [](C& c) -> int& { return c.train.schedule.update_period_epochs; }),

      number_key<std::size_t>("eval.k", [](C& c) -> std::size_t& { return c.eval_k; }),
  };
  return table;
}

}  // namespace dwrec
