#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dwrec/encoder.hpp"
#include "dwrec/error.hpp"
#include "dwrec/rng.hpp"
#include "dwrec/sparsity.hpp"

namespace dwrec {

enum class LossMode { kGeneric, kFixed, kDynamic };
enum class Aggregation { kMean, kMax };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::kGeneric: return "generic";
    case LossMode::kFixed: return "fixed";
    case LossMode::kDynamic: return "dynamic";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "generic") return LossMode::kGeneric;
  if (s == "fixed") return LossMode::kFixed;
  if (s == "dynamic") return LossMode::kDynamic;
  throw ConfigError("unknown loss mode '" + s + "' (expected generic, fixed or dynamic)");
}

inline std::string to_string(Aggregation a) { return a == Aggregation::kMean ? "mean" : "max"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::kMean;
  if (s == "max") return Aggregation::kMax;
  throw ConfigError("unknown aggregation '" + s + "' (expected mean or max)");
}

struct LossConfig {
  LossMode mode = LossMode::kDynamic;
  double fixed_weight = 2.0;
  // Domains boosted in fixed mode; empty means "the sparsest training domain".
  std::vector<std::string> fixed_domains;
  int horizon = 8;
  double temperature = 1.0;
  Aggregation aggregation = Aggregation::kMean;

  void validate() const {
    if (horizon < 1) throw ConfigError("loss: horizon must be at least 1");
    if (!(temperature > 0.0)) throw ConfigError("loss: temperature must be positive");
    if (!(fixed_weight > 0.0)) throw ConfigError("loss: fixed weight must be positive");
  }
};

// One user prefix and the next positives after the cut point. Domain ids index
// the catalog the weights were resolved against.
struct TrainingExample {
  std::string user;
  std::vector<std::int32_t> prefix;
  std::vector<std::int32_t> positives;
  std::vector<std::vector<std::uint32_t>> positive_domains;
};

namespace detail {

template <typename WeightOf>
double aggregate_weight(std::size_t n, WeightOf&& weight_of, Aggregation agg) {
  double acc = agg == Aggregation::kMean ? 0.0 : -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    const double w = weight_of(k);
    acc = agg == Aggregation::kMean ? acc + w : std::max(acc, w);
  }
  return agg == Aggregation::kMean ? acc / static_cast<double>(n) : acc;
}

}  // namespace detail

// Loss multiplier for a positive whose item carries `domains`.
inline double interaction_weight(std::span<const std::string> domains, const WeightTable& table,
                                 const LossConfig& config) {
  switch (config.mode) {
    case LossMode::kGeneric:
      return 1.0;
    case LossMode::kFixed: {
      for (const auto& d : domains)
        if (std::find(config.fixed_domains.begin(), config.fixed_domains.end(), d) != config.fixed_domains.end())
          return config.fixed_weight;
      return 1.0;
    }
    case LossMode::kDynamic:
      if (domains.empty()) throw LossConfigError("interaction_weight: empty domain set");
      return detail::aggregate_weight(
          domains.size(),
          [&](std::size_t k) {
            const auto w = table.find(domains[k]);
            if (!w) throw LossConfigError("interaction_weight: unknown domain '" + domains[k] + "'");
            return *w;
          },
          config.aggregation);
  }
  return 1.0;
}

// Weights looked up once per catalog domain, for the training hot path.
struct DomainWeights {
  LossMode mode = LossMode::kGeneric;
  Aggregation aggregation = Aggregation::kMean;
  double fixed_weight = 2.0;
  std::vector<double> weight;     // dynamic mode
  std::vector<char> designated;   // fixed mode

  static DomainWeights resolve(std::span<const std::string> catalog, const WeightTable& table,
                               const LossConfig& config) {
    DomainWeights r;
    r.mode = config.mode;
    r.aggregation = config.aggregation;
    r.fixed_weight = config.fixed_weight;
    r.weight.assign(catalog.size(), 1.0);
    r.designated.assign(catalog.size(), 0);
    for (std::size_t d = 0; d < catalog.size(); ++d) {
      if (config.mode == LossMode::kDynamic) {
        const auto w = table.find(catalog[d]);
        if (!w) throw LossConfigError("weight table has no domain '" + catalog[d] + "'");
        r.weight[d] = *w;
      }
      r.designated[d] = std::find(config.fixed_domains.begin(), config.fixed_domains.end(), catalog[d]) !=
                        config.fixed_domains.end();
    }
    return r;
  }

  double operator()(std::span<const std::uint32_t> domains) const {
    switch (mode) {
      case LossMode::kGeneric:
        return 1.0;
      case LossMode::kFixed:
        for (auto d : domains)
          if (designated.at(d)) return fixed_weight;
        return 1.0;
      case LossMode::kDynamic:
        if (domains.empty()) throw LossConfigError("interaction_weight: empty domain set");
        return detail::aggregate_weight(domains.size(), [&](std::size_t k) { return weight.at(domains[k]); },
                                        aggregation);
    }
    return 1.0;
  }
};

// logit_j = (user . candidate_j) / temperature - log q_j
inline Eigen::VectorXd logq_corrected_logits(const RowVector& user, const Matrix& candidates,
                                             std::span<const double> sampling_probs, double temperature = 1.0) {
  if (static_cast<std::size_t>(candidates.rows()) != sampling_probs.size())
    throw ContractError("logq_corrected_logits: candidate and probability counts differ");
  if (!(temperature > 0.0)) throw ConfigError("loss: temperature must be positive");
  Eigen::VectorXd logits = (candidates * user.transpose()) / temperature;
  for (std::size_t j = 0; j < sampling_probs.size(); ++j) {
    if (!(sampling_probs[j] > 0.0)) throw NumericError("logq_corrected_logits: sampling probability must be positive");
    logits(static_cast<Eigen::Index>(j)) -= std::log(sampling_probs[j]);
  }
  return logits;
}

struct LossTerm {
  std::size_t example = 0;
  std::int32_t positive = 0;
  double weight = 1.0;
  double value = 0.0;  // unweighted cross-entropy
};

struct BatchLoss {
  double loss = 0.0;
  std::vector<LossTerm> terms;
  EncoderParams grads;
};

// Weighted sampled softmax with in-batch negatives and log-Q correction.
// Candidates for a positive p of example b are p plus the distinct positives
// of the other examples (p itself removed); q is the in-batch frequency of an
// item among all positives. Loss = sum_terms w * CE / #terms.
inline BatchLoss weighted_batch_loss(std::span<const TrainingExample> batch, const EncoderParams& params,
                                     const DomainWeights& weights, const LossConfig& config, std::uint64_t seed,
                                     bool compute_grads = true, Mode mode = Mode::kTrain) {
  config.validate();
  if (compute_grads && mode != Mode::kTrain) throw ContractError("weighted_batch_loss: gradients need a train-mode pass");
  const std::size_t n = batch.size();
  if (n < 2) throw ContractError("weighted_batch_loss: in-batch negatives need at least 2 examples");

  // Distinct positives, their batch counts and per-example ownership.
  std::unordered_map<std::int32_t, std::size_t> slot;
  std::vector<std::int32_t> distinct;
  std::vector<double> count;
  std::vector<std::vector<std::size_t>> owned(n);
  std::size_t total = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto& ex = batch[b];
    if (ex.prefix.empty() || ex.positives.empty()) throw ContractError("weighted_batch_loss: empty prefix or positives");
    if (ex.positive_domains.size() != ex.positives.size())
      throw ContractError("weighted_batch_loss: positives and domain sets differ in length");
    for (auto p : ex.positives) {
      const auto [it, inserted] = slot.emplace(p, distinct.size());
      if (inserted) {
        distinct.push_back(p);
        count.push_back(0.0);
      }
      count[it->second] += 1.0;
      owned[b].push_back(it->second);
      ++total;
    }
  }
  const std::size_t m = distinct.size();
  if (m < 2) throw DegenerateBatchError("weighted_batch_loss: every candidate is the same item");

  Eigen::VectorXd log_q(static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) log_q(static_cast<Eigen::Index>(j)) = std::log(count[j] / static_cast<double>(total));

  Matrix cand(static_cast<Eigen::Index>(m), params.config.embed_dim);
  for (std::size_t j = 0; j < m; ++j) cand.row(static_cast<Eigen::Index>(j)) = params.item_embedding.row(distinct[j]);

  std::vector<ForwardResult> fwd;
  fwd.reserve(n);
  Matrix users(static_cast<Eigen::Index>(n), params.config.embed_dim);
  for (std::size_t b = 0; b < n; ++b) {
    fwd.push_back(forward(params, batch[b].prefix, mode, derive_seed(seed, "dropout", b)));
    users.row(static_cast<Eigen::Index>(b)) = fwd.back().embedding;
  }

  const double inv_temp = 1.0 / config.temperature;
  const Matrix logits = ((users * cand.transpose()) * inv_temp).rowwise() - log_q.transpose();

  BatchLoss out;
  Matrix dlogits = Matrix::Zero(logits.rows(), logits.cols());
  std::vector<double> own_count(m, 0.0);
  std::vector<double> probs(m);
  for (std::size_t b = 0; b < n; ++b) {
    for (auto j : owned[b]) own_count[j] += 1.0;
    const auto& ex = batch[b];
    for (std::size_t k = 0; k < ex.positives.size(); ++k) {
      const std::size_t pj = slot.at(ex.positives[k]);
      // Candidate j is present iff j == p or some other example owns it.
      auto present = [&](std::size_t j) { return j == pj || count[j] - own_count[j] > 0.0; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j)
        if (present(j)) mx = std::max(mx, logits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)));
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        probs[j] = present(j) ? std::exp(logits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) - mx) : 0.0;
        z += probs[j];
      }
      const double value = std::log(z) + mx - logits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(pj));
      const double w = weights(ex.positive_domains[k]);
      out.terms.push_back({b, ex.positives[k], w, value});
      if (compute_grads) {
        for (std::size_t j = 0; j < m; ++j)
          dlogits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) += w * probs[j] / z;
        dlogits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(pj)) -= w;
      }
    }
    for (auto j : owned[b]) own_count[j] -= 1.0;
  }

  const double num_terms = static_cast<double>(out.terms.size());
  for (const auto& t : out.terms) out.loss += t.weight * t.value;
  out.loss /= num_terms;
  if (!compute_grads) return out;

  dlogits *= inv_temp / num_terms;
  out.grads = EncoderParams::zeros(params.config);
  const Matrix dusers = dlogits * cand;
  const Matrix dcand = dlogits.transpose() * users;
  for (std::size_t j = 0; j < m; ++j)
    out.grads.item_embedding.row(distinct[j]) += dcand.row(static_cast<Eigen::Index>(j));
  for (std::size_t b = 0; b < n; ++b)
    backward(params, fwd[b].cache, dusers.row(static_cast<Eigen::Index>(b)), out.grads);
  return out;
}

}  // namespace dwrec
