#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "dwrec/sparsity.hpp"
#include "dwrec/synth.hpp"

using namespace dwrec;

namespace {

SynthConfig skewed_mix(std::uint64_t seed) {
  SynthConfig c;
  c.num_users = 1000;
  c.num_items = 2000;
  c.domain_frequency_targets = {0.98, 0.02};
  c.interactions_mean = 100;
  c.seed = seed;
  return c;
}

double sparse_frequency(const Corpus& c) {
  return static_cast<double>(c.domain_interactions(*c.find_domain("B"))) /
         static_cast<double>(c.num_interactions());
}

std::string as_tsv(const Corpus& c) {
  std::ostringstream out;
  write_tsv(c, out);
  return out.str();
}

}  // namespace

TEST(Synthetic, SparseFrequencyNearTarget) {
  const auto c = generate_synthetic(skewed_mix(7));
  const double f = sparse_frequency(c);
  EXPECT_GE(f, 0.016);
  EXPECT_LE(f, 0.024);
  EXPECT_GE(c.num_interactions(), 50000u);
}

TEST(Synthetic, SameSeedIsByteIdentical) {
  EXPECT_EQ(as_tsv(generate_synthetic(skewed_mix(7))), as_tsv(generate_synthetic(skewed_mix(7))));
  EXPECT_NE(as_tsv(generate_synthetic(skewed_mix(7))), as_tsv(generate_synthetic(skewed_mix(8))));
}

TEST(Synthetic, PowerUsersConcentrateOnSparseDomain) {
  const auto c = generate_synthetic(skewed_mix(7));
  const auto b = *c.find_domain("B");
  std::size_t concentrated = 0;
  for (Corpus::Index u = 0; u < c.num_users(); ++u) {
    std::size_t in_b = 0;
    const auto seq = c.user_sequence(u);
    for (auto pos : seq)
      for (auto d : c.domains_of(pos)) in_b += d == b;
    if (static_cast<double>(in_b) >= 0.8 * static_cast<double>(seq.size())) ++concentrated;
  }
  EXPECT_GE(concentrated, c.num_users() / 10);
}

TEST(Synthetic, ItemsPartitionedByTargets) {
  const auto c = generate_synthetic(skewed_mix(3));
  std::size_t b_items = 0;
  for (Corpus::Index i = 0; i < c.num_items(); ++i) {
    const auto ds = c.item_domains(i);
    ASSERT_EQ(ds.size(), 1u);
    b_items += c.domain_catalog()[ds[0]] == "B";
  }
  EXPECT_LE(b_items, 40u);
  EXPECT_GE(b_items, 20u);
}

TEST(Synthetic, RelativeErrorShrinksWithSize) {
  std::vector<double> errors;
  for (std::size_t users : {100u, 1000u, 10000u}) {
    SynthConfig c;
    c.num_users = users;
    c.num_items = 2000;
    c.num_domains = 3;
    c.domain_frequency_targets = {0.7, 0.25, 0.05};
    c.interactions_mean = 30;
    c.interactions_spread = 5;
    double err = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      c.seed = seed;
      const auto corpus = generate_synthetic(c);
      for (std::size_t d = 0; d < 3; ++d) {
        const double f = static_cast<double>(corpus.domain_interactions(d)) /
                         static_cast<double>(corpus.num_interactions());
        err = std::max(err, std::abs(f - c.domain_frequency_targets[d]) / c.domain_frequency_targets[d]);
      }
    }
    errors.push_back(err);
  }
  EXPECT_GT(errors[0], errors[2]);
  EXPECT_LT(errors[2], 0.2);
}

TEST(Synthetic, TargetBelowOneItemIsConfigError) {
  SynthConfig c;
  c.num_items = 20;
  c.domain_frequency_targets = {0.98, 0.02};
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

TEST(Synthetic, ManyDomainsGetGeneratedNames) {
  SynthConfig c;
  c.num_users = 200;
  c.num_items = 3000;
  c.num_domains = 30;
  c.domain_frequency_targets.assign(30, 1.0 / 30.0);
  c.interactions_mean = 20;
  c.interactions_spread = 2;
  const auto corpus = generate_synthetic(c);
  EXPECT_EQ(corpus.num_domains(), 30u);
}
