#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "dwrec/rng.hpp"
#include "dwrec/sparsity.hpp"
#include "test_util.hpp"

using namespace dwrec;
using dwrec::testing::row;

namespace {

SparsityConfig unit_mix() {
  SparsityConfig c;
  c.alpha = c.beta = c.gamma = 1.0;
  return c;
}

DomainStats stats_with_scores(std::vector<double> scores) {
  DomainStats s;
  for (std::size_t k = 0; k < scores.size(); ++k) s.domains.push_back(std::string(1, static_cast<char>('A' + k)));
  s.score = std::move(scores);
  return s;
}

Corpus random_corpus(Rng& rng, std::size_t domains) {
  std::vector<Interaction> rows;
  const auto users = 5 + uniform_index(rng, 30);
  const auto items = domains + uniform_index(rng, 60);
  const auto n = 20 + uniform_index(rng, 300);
  std::vector<std::vector<std::string>> item_domains(items);
  for (std::size_t i = 0; i < items; ++i) {
    item_domains[i].push_back("D" + std::to_string(i < domains ? i : uniform_index(rng, domains)));
    if (uniform01(rng) < 0.2) item_domains[i].push_back("D" + std::to_string(uniform_index(rng, domains)));
  }
  for (std::size_t i = 0; i < domains; ++i)
    rows.push_back(row("u0", "i" + std::to_string(i), 0, item_domains[i]));
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = uniform_index(rng, items);
    rows.push_back(row("u" + std::to_string(uniform_index(rng, users)), "i" + std::to_string(i),
                       static_cast<std::int64_t>(k), item_domains[i]));
  }
  return Corpus::build(rows);
}

}  // namespace

TEST(DomainStats, WorkedTwoDomainExample) {
  const auto c = dwrec::testing::worked_corpus();
  const auto s = compute_domain_stats(c, unit_mix());
  ASSERT_EQ(s.domains, (std::vector<std::string>{"A", "B"}));
  EXPECT_NEAR(s.frequency[0], 0.9, 1e-12);
  EXPECT_NEAR(s.frequency[1], 0.1, 1e-12);
  EXPECT_NEAR(s.user_ratio[0], 1.0, 1e-12);
  EXPECT_NEAR(s.user_ratio[1], 5.0, 1e-12);
  EXPECT_NEAR(s.entropy[0], std::log(5.0), 1e-12);
  EXPECT_NEAR(s.entropy[1], std::log(5.0), 1e-12);
  EXPECT_NEAR(s.score[0], 1.7148, 1e-4);
  EXPECT_NEAR(s.score[1], 5.5215, 1e-4);
}

TEST(DomainStats, SingleDomainSingleItem) {
  const auto c = Corpus::build({row("u1", "i", 1, {"A"}), row("u2", "i", 2, {"A"})});
  const auto s = compute_domain_stats(c, unit_mix());
  EXPECT_DOUBLE_EQ(s.frequency[0], 1.0);
  EXPECT_DOUBLE_EQ(s.user_ratio[0], 1.0);
  EXPECT_DOUBLE_EQ(s.entropy[0], 0.0);
  EXPECT_DOUBLE_EQ(s.score[0], 0.0);
}

TEST(DomainStats, HalvingSparseDomainRaisesItsScore) {
  const auto full = dwrec::testing::worked_corpus();
  std::vector<Interaction> rows;
  for (const auto& r : full.interactions())
    if (r.domains[0] == "A" || r.user_id == "u0") rows.push_back(r);
  const auto half = Corpus::build(rows);
  const auto before = compute_domain_stats(full, unit_mix());
  const auto after = compute_domain_stats(half, unit_mix());
  EXPECT_GE(after.score[1], before.score[1]);
}

TEST(DomainStats, MultiDomainMassIsSingleCounted) {
  const auto c = Corpus::build({row("u1", "x", 1, {"A", "B"}), row("u1", "y", 2, {"A"})});
  const auto s = compute_domain_stats(c, unit_mix());
  EXPECT_DOUBLE_EQ(s.frequency[0], 0.75);
  EXPECT_DOUBLE_EQ(s.frequency[1], 0.25);
}

TEST(DomainStats, MissingDomainIsStatsError) {
  const auto c = Corpus::build({row("u1", "x", 1, {"A"})});
  const std::vector<std::string> domains{"A", "Z"};
  EXPECT_THROW(compute_domain_stats(c, unit_mix(), domains), StatsError);
}

TEST(DomainStats, MatchesBruteForceOnRandomCorpora) {
  Rng rng = make_rng(17, "stats-oracle");
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_corpus(rng, 2 + uniform_index(rng, 6));
    SparsityConfig cfg;
    cfg.alpha = uniform01(rng);
    cfg.beta = uniform01(rng);
    cfg.gamma = uniform01(rng) + 0.01;
    const auto s = compute_domain_stats(c, cfg);

    std::map<std::string, double> mass;
    std::map<std::string, std::set<std::string>> users;
    std::map<std::string, std::map<std::string, double>> items;
    std::set<std::string> all_users;
    for (const auto& r : c.interactions()) {
      all_users.insert(r.user_id);
      for (const auto& d : r.domains) {
        mass[d] += 1.0 / static_cast<double>(r.domains.size());
        users[d].insert(r.user_id);
        items[d][r.item_id] += 1.0;
      }
    }
    double fsum = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      const auto& d = s.domains[k];
      const double f = mass[d] / static_cast<double>(c.num_interactions());
      const double r = static_cast<double>(all_users.size()) / static_cast<double>(users[d].size());
      double total = 0.0, h = 0.0;
      for (const auto& [item, n] : items[d]) total += n;
      for (const auto& [item, n] : items[d]) h -= n / total * std::log(n / total);
      EXPECT_NEAR(s.frequency[k], f, 1e-12);
      EXPECT_NEAR(s.user_ratio[k], r, 1e-12);
      EXPECT_NEAR(s.entropy[k], h, 1e-9);
      EXPECT_LE(s.entropy[k], std::log(static_cast<double>(s.distinct_items[k])) + 1e-12);
      EXPECT_NEAR(s.score[k], cfg.alpha * std::log(1.0 / f) + cfg.beta * std::log(r) + cfg.gamma * h, 1e-9);
      fsum += s.frequency[k];
    }
    EXPECT_NEAR(fsum, 1.0, 1e-9);
  }
}

TEST(Weights, AffineMapsEndpointsToBounds) {
  const auto w = compute_weights(stats_with_scores({1.7148, 5.5215}), SparsityConfig{});
  EXPECT_DOUBLE_EQ(w.weights[0], 0.2);
  EXPECT_DOUBLE_EQ(w.weights[1], 5.0);
}

TEST(Weights, ClipModeIsLiteralMinMax) {
  SparsityConfig cfg;
  cfg.mapping_mode = MappingMode::kClip;
  const auto w = compute_weights(stats_with_scores({1.7148, 5.5215}), cfg);
  EXPECT_DOUBLE_EQ(w.weights[0], 0.2);
  EXPECT_DOUBLE_EQ(w.weights[1], 1.0);
}

TEST(Weights, AffineInterpolatesLinearly) {
  const auto w = compute_weights(stats_with_scores({1, 2, 3}), SparsityConfig{});
  EXPECT_NEAR(w.weights[0], 0.2, 1e-12);
  EXPECT_NEAR(w.weights[1], 2.6, 1e-12);
  EXPECT_NEAR(w.weights[2], 5.0, 1e-12);
}

TEST(Weights, EqualScoresGiveUnitWeights) {
  const auto w = compute_weights(stats_with_scores({0.7, 0.7, 0.7}), SparsityConfig{});
  for (double x : w.weights) EXPECT_EQ(x, 1.0);
}

TEST(Weights, BoundedAndOrderPreservingOnRandomCorpora) {
  Rng rng = make_rng(23, "weights-property");
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_corpus(rng, 2 + uniform_index(rng, 19));
    for (auto mode : {MappingMode::kAffine, MappingMode::kClip}) {
      SparsityConfig cfg;
      cfg.mapping_mode = mode;
      cfg.w_min = 0.05 + uniform01(rng);
      cfg.w_max = cfg.w_min + 3.0 * uniform01(rng);
      const auto s = compute_domain_stats(c, cfg);
      const auto w = compute_weights(s, cfg);
      for (std::size_t a = 0; a < s.size(); ++a) {
        EXPECT_GE(w.weights[a], cfg.w_min);
        EXPECT_LE(w.weights[a], cfg.w_max);
        for (std::size_t b = 0; b < s.size(); ++b)
          if (s.score[a] < s.score[b]) EXPECT_LE(w.weights[a], w.weights[b]);
      }
    }
  }
}

TEST(Weights, JsonRoundTrip) {
  SparsityConfig cfg;
  cfg.alpha = 0.5;
  cfg.mapping_mode = MappingMode::kClip;
  const auto w = compute_weights(compute_domain_stats(dwrec::testing::worked_corpus(), cfg), cfg, "train.tsv");
  const auto j = to_json(w);
  EXPECT_EQ(j.at("schema_version"), kSchemaVersion);
  EXPECT_EQ(weight_table_from_json(nlohmann::json::parse(j.dump())), w);
}

TEST(SparsityConfig, RejectsInvalidBounds) {
  SparsityConfig cfg;
  cfg.w_min = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.w_min = 3.0;
  cfg.w_max = 2.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.alpha = cfg.beta = cfg.gamma = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
