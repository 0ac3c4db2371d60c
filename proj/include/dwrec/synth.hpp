#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dwrec/corpus.hpp"
#include "dwrec/error.hpp"
#include "dwrec/rng.hpp"

namespace dwrec {

// Synthetic interaction logs with a controlled per-domain sparsity mix.
//
// Items are partitioned across domains proportional to the frequency targets.
// Every user draws a domain-preference mixture; power users put
// `power_user_mass` on the sparsest domain. Power-user sequences are shortened
// by a factor chosen so the realized per-domain interaction frequencies still
// match the targets. Within a domain, a user draws from a favourite item
// cluster with probability `cluster_affinity`, otherwise from a Zipf-like
// popularity curve.
struct SynthConfig {
  std::size_t num_users = 1000;
  std::size_t num_items = 2000;
  std::size_t num_domains = 2;
  std::vector<double> domain_frequency_targets = {0.98, 0.02};
  std::vector<std::string> domain_names;  // defaults to A, B, C, ...
  double power_user_fraction = 0.1;
  double power_user_mass = 0.9;
  double interactions_mean = 100.0;
  double interactions_spread = 20.0;
  std::size_t min_interactions = 5;
  // Sparse-domain share of ordinary users, relative to the sparse target.
  double ordinary_sparse_ratio = 0.25;
  double preference_concentration = 20.0;
  double popularity_exponent = 0.8;
  std::size_t cluster_size = 8;
  double cluster_affinity = 0.6;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_users == 0 || num_items == 0 || num_domains == 0)
      throw ConfigError("synth: counts must be positive");
    if (domain_frequency_targets.size() != num_domains)
      throw ConfigError("synth: need one frequency target per domain");
    if (!domain_names.empty() && domain_names.size() != num_domains)
      throw ConfigError("synth: need one name per domain");
    double sum = 0.0;
    for (double t : domain_frequency_targets) {
      if (!(t > 0.0)) throw ConfigError("synth: frequency targets must be positive");
      if (t * static_cast<double>(num_items) < 1.0)
        throw ConfigError("synth: frequency target " + std::to_string(t) + " implies fewer than one item");
      sum += t;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("synth: frequency targets must sum to 1");
    if (power_user_fraction < 0.0 || power_user_fraction >= 1.0)
      throw ConfigError("synth: power_user_fraction must lie in [0, 1)");
    if (power_user_mass < 0.8 || power_user_mass > 1.0)
      throw ConfigError("synth: power_user_mass must lie in [0.8, 1]");
    if (interactions_mean < 3.0 || interactions_spread < 0.0 || interactions_spread >= interactions_mean)
      throw ConfigError("synth: need interactions_mean >= 3 and 0 <= spread < mean");
    if (ordinary_sparse_ratio < 0.0 || ordinary_sparse_ratio > 1.0)
      throw ConfigError("synth: ordinary_sparse_ratio must lie in [0, 1]");
    if (cluster_size == 0 || cluster_affinity < 0.0 || cluster_affinity > 1.0 || preference_concentration <= 0.0)
      throw ConfigError("synth: invalid cluster or concentration settings");
  }

  std::vector<std::string> resolved_domain_names() const {
    if (!domain_names.empty()) return domain_names;
    std::vector<std::string> names;
    for (std::size_t d = 0; d < num_domains; ++d) {
      if (num_domains <= 26) {
        names.emplace_back(1, static_cast<char>('A' + d));
      } else {
        names.push_back("D" + std::to_string(d));
      }
    }
    return names;
  }
};

namespace detail {

// Marsaglia-Tsang; shape < 1 handled by the usual U^(1/shape) boost.
inline double sample_gamma(Rng& rng, double shape) {
  if (shape < 1.0) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    return sample_gamma(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

inline std::size_t sample_categorical(Rng& rng, const std::vector<double>& cdf) {
  const double u = uniform01(rng) * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

inline std::vector<double> cumulative(const std::vector<double>& w) {
  std::vector<double> cdf(w.size());
  std::partial_sum(w.begin(), w.end(), cdf.begin());
  return cdf;
}

// Largest-remainder apportionment of `total` units by `shares`.
inline std::vector<std::size_t> apportion(const std::vector<double>& shares, std::size_t total) {
  std::vector<std::size_t> counts(shares.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    const double exact = shares[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

}  // namespace detail

inline Corpus generate_synthetic(const SynthConfig& config) {
  config.validate();
  const auto names = config.resolved_domain_names();
  const auto& targets = config.domain_frequency_targets;
  const std::size_t num_domains = config.num_domains;
  const auto sparse = static_cast<std::size_t>(
      std::min_element(targets.begin(), targets.end()) - targets.begin());
  const double ts = targets[sparse];
  const double P = config.power_user_fraction;
  const double mp = config.power_user_mass;

  // Sparse-domain share of ordinary users and power-user length factor such
  // that P*rho*mp + (1-P)*eps = ts * (P*rho + 1 - P).
  double eps = ts, rho = 1.0;
  if (P > 0.0) {
    eps = config.ordinary_sparse_ratio * ts;
    rho = mp > ts ? (1.0 - P) * (ts - eps) / (P * (mp - ts)) : 2.0;
    if (rho > 1.0) {
      rho = 1.0;
      eps = std::max(0.0, (ts - P * mp) / (1.0 - P));
    }
  }

  // Item partition, contiguous ids per domain.
  const auto items_per_domain = detail::apportion(targets, config.num_items);
  std::vector<std::size_t> first_item(num_domains + 1, 0);
  for (std::size_t d = 0; d < num_domains; ++d) {
    if (items_per_domain[d] == 0) throw ConfigError("synth: domain " + names[d] + " received no items");
    first_item[d + 1] = first_item[d] + items_per_domain[d];
  }
  std::vector<std::vector<double>> popularity_cdf(num_domains);
  for (std::size_t d = 0; d < num_domains; ++d) {
    std::vector<double> w(items_per_domain[d]);
    for (std::size_t r = 0; r < w.size(); ++r)
      w[r] = 1.0 / std::pow(static_cast<double>(r + 1), config.popularity_exponent);
    popularity_cdf[d] = detail::cumulative(w);
  }

  // Other-domain prior shares, renormalised.
  std::vector<double> other_share(num_domains, 0.0);
  for (std::size_t d = 0; d < num_domains; ++d)
    if (d != sparse) other_share[d] = targets[d] / (1.0 - ts);

  Rng rng = make_rng(config.seed, "synth");
  std::vector<std::size_t> order(config.num_users);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order.begin(), order.end(), rng);
  const auto num_power = static_cast<std::size_t>(std::llround(P * static_cast<double>(config.num_users)));
  std::vector<bool> is_power(config.num_users, false);
  for (std::size_t k = 0; k < num_power; ++k) is_power[order[k]] = true;

  const double ordinary_mean = config.interactions_mean / (P * rho + 1.0 - P);
  std::vector<Interaction> rows;
  rows.reserve(static_cast<std::size_t>(config.interactions_mean * static_cast<double>(config.num_users) * 1.1));

  for (std::size_t u = 0; u < config.num_users; ++u) {
    const std::string user = "u" + std::to_string(u);
    const double base = ordinary_mean + config.interactions_spread * (2.0 * uniform01(rng) - 1.0);
    const double scaled = is_power[u] ? base * rho : base;
    const auto length = std::max<std::size_t>(config.min_interactions, static_cast<std::size_t>(std::llround(scaled)));

    // Domain of each event.
    std::vector<std::size_t> event_domain;
    event_domain.reserve(length);
    if (is_power[u]) {
      const auto n_sparse = static_cast<std::size_t>(std::llround(mp * static_cast<double>(length)));
      event_domain.assign(n_sparse, sparse);
      if (num_domains > 1) {
        const auto cdf = detail::cumulative(other_share);
        while (event_domain.size() < length) event_domain.push_back(detail::sample_categorical(rng, cdf));
      } else {
        event_domain.resize(length, sparse);
      }
      shuffle(event_domain.begin(), event_domain.end(), rng);
    } else {
      std::vector<double> mix(num_domains);
      for (std::size_t d = 0; d < num_domains; ++d) {
        const double prior = num_domains == 1 ? 1.0 : (d == sparse ? eps : other_share[d] * (1.0 - eps));
        mix[d] = prior > 0.0 ? detail::sample_gamma(rng, config.preference_concentration * prior) : 0.0;
      }
      if (std::accumulate(mix.begin(), mix.end(), 0.0) <= 0.0) mix = other_share;
      const auto cdf = detail::cumulative(mix);
      for (std::size_t k = 0; k < length; ++k) event_domain.push_back(detail::sample_categorical(rng, cdf));
    }

    // Favourite cluster per domain.
    std::vector<std::size_t> favourite(num_domains);
    for (std::size_t d = 0; d < num_domains; ++d) {
      const std::size_t clusters = (items_per_domain[d] + config.cluster_size - 1) / config.cluster_size;
      favourite[d] = uniform_index(rng, clusters);
    }

    std::vector<bool> used(config.num_items, false);
    std::int64_t ts_now = 1'000'000'000 + static_cast<std::int64_t>(uniform_index(rng, 10'000'000));
    for (std::size_t k = 0; k < length; ++k) {
      const std::size_t d = event_domain[k];
      const std::size_t n_d = items_per_domain[d];
      auto draw = [&]() -> std::size_t {
        if (uniform01(rng) < config.cluster_affinity) {
          const std::size_t lo = favourite[d] * config.cluster_size;
          const std::size_t hi = std::min(n_d, lo + config.cluster_size);
          return lo + uniform_index(rng, hi - lo);
        }
        return detail::sample_categorical(rng, popularity_cdf[d]);
      };
      std::size_t local = draw();
      for (int attempt = 0; attempt < 32 && used[first_item[d] + local]; ++attempt) local = draw();
      if (used[first_item[d] + local]) {
        for (std::size_t j = 0; j < n_d; ++j) {
          if (!used[first_item[d] + j]) {
            local = j;
            break;
          }
        }
      }
      const std::size_t item = first_item[d] + local;
      used[item] = true;
      ts_now += 60 + static_cast<std::int64_t>(uniform_index(rng, 86'400));
      rows.push_back({user, "i" + std::to_string(item), ts_now, {names[d]}});
    }
  }
  return Corpus::build(std::move(rows));
}

}  // namespace dwrec
