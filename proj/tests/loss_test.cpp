#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "dwrec/loss.hpp"
#include "test_util.hpp"

using namespace dwrec;

namespace {

EncoderConfig tiny(int vocab = 12) {
  EncoderConfig c;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ff_hidden = 16;
  c.dropout = 0.1;
  c.max_seq_len = 6;
  c.vocab_size = vocab;
  return c;
}

WeightTable two_domain_table(double a, double b) {
  WeightTable t;
  t.domains = {"A", "B"};
  t.weights = {a, b};
  return t;
}

LossConfig dynamic_mode() {
  LossConfig c;
  c.mode = LossMode::kDynamic;
  return c;
}

// Domain 0 = A, 1 = B.
std::vector<TrainingExample> sample_batch() {
  return {
      {"u1", {1, 2, 3}, {4, 5}, {{0}, {1}}},
      {"u2", {6, 2}, {7}, {{0, 1}}},
      {"u3", {8}, {4, 9, 10}, {{0}, {1}, {0}}},
  };
}

// Explicit candidate sets and a direct softmax, one term at a time.
double oracle_loss(std::span<const TrainingExample> batch, const EncoderParams& p, const DomainWeights& w,
                   std::uint64_t seed, Mode mode) {
  std::map<std::int32_t, double> count;
  double total = 0;
  for (const auto& ex : batch)
    for (auto q : ex.positives) {
      count[q] += 1;
      total += 1;
    }
  double sum = 0;
  std::size_t terms = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const RowVector u = forward(p, batch[b].prefix, mode, derive_seed(seed, "dropout", b)).embedding;
    for (std::size_t k = 0; k < batch[b].positives.size(); ++k) {
      const auto pos = batch[b].positives[k];
      std::set<std::int32_t> cands{pos};
      for (std::size_t o = 0; o < batch.size(); ++o)
        if (o != b)
          for (auto q : batch[o].positives) cands.insert(q);
      double z = 0, target = 0;
      for (auto c : cands) {
        const double logit = u.dot(p.item_embedding.row(c)) - std::log(count[c] / total);
        z += std::exp(logit);
        if (c == pos) target = logit;
      }
      sum += w(batch[b].positive_domains[k]) * (std::log(z) - target);
      ++terms;
    }
  }
  return sum / static_cast<double>(terms);
}

}  // namespace

TEST(InteractionWeight, Modes) {
  const auto table = two_domain_table(0.2, 5.0);
  const std::vector<std::string> b{"B"}, ab{"A", "B"};
  EXPECT_DOUBLE_EQ(interaction_weight(b, table, dynamic_mode()), 5.0);
  EXPECT_DOUBLE_EQ(interaction_weight(ab, table, dynamic_mode()), 2.6);
  auto max_mode = dynamic_mode();
  max_mode.aggregation = Aggregation::kMax;
  EXPECT_DOUBLE_EQ(interaction_weight(ab, table, max_mode), 5.0);
  LossConfig generic;
  generic.mode = LossMode::kGeneric;
  EXPECT_DOUBLE_EQ(interaction_weight(ab, table, generic), 1.0);
  LossConfig fixed;
  fixed.mode = LossMode::kFixed;
  fixed.fixed_domains = {"B"};
  EXPECT_DOUBLE_EQ(interaction_weight(ab, table, fixed), 2.0);
  const std::vector<std::string> a{"A"};
  EXPECT_DOUBLE_EQ(interaction_weight(a, table, fixed), 1.0);
  const std::vector<std::string> z{"Z"};
  EXPECT_THROW(interaction_weight(z, table, dynamic_mode()), LossConfigError);
}

TEST(LogQ, WorkedValues) {
  RowVector u(1);
  u << 1.0;
  Matrix cands(2, 1);
  cands << 1.0, 1.0;
  const std::vector<double> q{0.8, 0.2};
  const auto logits = logq_corrected_logits(u, cands, q);
  EXPECT_NEAR(logits(0), 1.2231, 1e-4);
  EXPECT_NEAR(logits(1), 2.6094, 1e-4);
}

TEST(LogQ, UniformQIsAConstantShift) {
  RowVector u(3);
  u << 0.3, -1.2, 0.5;
  Matrix cands(4, 3);
  cands << 1, 2, 3, -1, 0, 2, 0.5, 0.5, 0.5, 2, -2, 1;
  const std::vector<double> q(4, 0.25);
  const Eigen::VectorXd raw = cands * u.transpose();
  const Eigen::VectorXd shifted = logq_corrected_logits(u, cands, q);
  auto softmax = [](const Eigen::VectorXd& x) {
    const Eigen::VectorXd e = (x.array() - x.maxCoeff()).exp();
    return Eigen::VectorXd(e / e.sum());
  };
  EXPECT_TRUE(softmax(raw).isApprox(softmax(shifted), 1e-14));
}

TEST(LogQ, SingleCandidateHasProbabilityOne) {
  RowVector u(2);
  u << 3.0, -1.0;
  Matrix cand(1, 2);
  cand << 0.5, 0.25;
  const std::vector<double> q{0.01};
  const auto logits = logq_corrected_logits(u, cand, q);
  EXPECT_DOUBLE_EQ(std::exp(logits(0) - logits(0)), 1.0);
}

TEST(LogQ, NonPositiveProbabilityIsNumericError) {
  RowVector u(1);
  u << 1.0;
  Matrix cand(1, 1);
  cand << 1.0;
  EXPECT_THROW(logq_corrected_logits(u, cand, std::vector<double>{0.0}), NumericError);
}

TEST(BatchLoss, MatchesBruteForceOracle) {
  const auto p = init_params(tiny(), 21);
  const auto batch = sample_batch();
  const std::vector<std::string> catalog{"A", "B"};
  const auto w = DomainWeights::resolve(catalog, two_domain_table(0.2, 5.0), dynamic_mode());
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    const auto r = weighted_batch_loss(batch, p, w, dynamic_mode(), 77, false, mode);
    EXPECT_NEAR(r.loss, oracle_loss(batch, p, w, 77, mode), 1e-10);
    EXPECT_EQ(r.terms.size(), 6u);
  }
}

TEST(BatchLoss, TwoExamplesOnePositiveEach) {
  const auto p = init_params(tiny(), 22);
  const std::vector<TrainingExample> batch{{"a", {1, 2}, {3}, {{0}}}, {"b", {4}, {5}, {{1}}}};
  const std::vector<std::string> catalog{"A", "B"};
  const auto w = DomainWeights::resolve(catalog, two_domain_table(0.7, 3.0), dynamic_mode());
  EXPECT_NEAR(weighted_batch_loss(batch, p, w, dynamic_mode(), 3, false).loss, oracle_loss(batch, p, w, 3, Mode::kTrain),
              1e-10);
}

TEST(BatchLoss, UniformDynamicEqualsGenericBitwise) {
  const auto p = init_params(tiny(), 23);
  const auto batch = sample_batch();
  const std::vector<std::string> catalog{"A", "B"};
  LossConfig generic;
  generic.mode = LossMode::kGeneric;
  const auto g = weighted_batch_loss(batch, p, DomainWeights::resolve(catalog, {}, generic), generic, 5);
  const auto d = weighted_batch_loss(batch, p, DomainWeights::resolve(catalog, two_domain_table(1.0, 1.0), dynamic_mode()),
                                     dynamic_mode(), 5);
  EXPECT_EQ(g.loss, d.loss);
  EXPECT_TRUE(same_values(g.grads, d.grads));
}

TEST(BatchLoss, DoublingWeightsDoublesLossAndGradients) {
  const auto p = init_params(tiny(), 24);
  const auto batch = sample_batch();
  const std::vector<std::string> catalog{"A", "B"};
  const auto one = weighted_batch_loss(
      batch, p, DomainWeights::resolve(catalog, two_domain_table(0.3, 1.7), dynamic_mode()), dynamic_mode(), 9);
  const auto two = weighted_batch_loss(
      batch, p, DomainWeights::resolve(catalog, two_domain_table(0.6, 3.4), dynamic_mode()), dynamic_mode(), 9);
  EXPECT_EQ(two.loss, 2.0 * one.loss);
  std::vector<const Matrix*> a, b;
  one.grads.for_each([&](const std::string&, const Matrix& m) { a.push_back(&m); });
  two.grads.for_each([&](const std::string&, const Matrix& m) { b.push_back(&m); });
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE((*b[k] - 2.0 * *a[k]).isZero(0.0));
}

TEST(BatchLoss, RaisingOneDomainWeightRaisesOnlyItsTerms) {
  const auto p = init_params(tiny(), 25);
  const auto batch = sample_batch();
  const std::vector<std::string> catalog{"A", "B"};
  const auto lo = weighted_batch_loss(
      batch, p, DomainWeights::resolve(catalog, two_domain_table(1.0, 1.0), dynamic_mode()), dynamic_mode(), 4, false);
  const auto hi = weighted_batch_loss(
      batch, p, DomainWeights::resolve(catalog, two_domain_table(1.0, 3.0), dynamic_mode()), dynamic_mode(), 4, false);
  for (std::size_t t = 0; t < lo.terms.size(); ++t) {
    EXPECT_EQ(lo.terms[t].value, hi.terms[t].value);
    const bool touches_b = lo.terms[t].weight != hi.terms[t].weight;
    if (touches_b) EXPECT_GT(hi.terms[t].weight * hi.terms[t].value, lo.terms[t].weight * lo.terms[t].value);
  }
  EXPECT_GT(hi.loss, lo.loss);
}

TEST(BatchLoss, GradientsMatchFiniteDifferences) {
  const auto p = init_params(tiny(), 26);
  const auto batch = sample_batch();
  const std::vector<std::string> catalog{"A", "B"};
  const auto w = DomainWeights::resolve(catalog, two_domain_table(0.4, 2.5), dynamic_mode());
  const auto r = weighted_batch_loss(batch, p, w, dynamic_mode(), 31);
  const auto check = dwrec::testing::finite_difference_check(
      p, r.grads, [&](const EncoderParams& q) { return weighted_batch_loss(batch, q, w, dynamic_mode(), 31, false).loss; },
      500);
  EXPECT_GE(check.pass_rate(), 0.99) << "worst " << check.worst << " at " << check.worst_name;
}

TEST(BatchLoss, ContractChecks) {
  const auto p = init_params(tiny(), 27);
  const std::vector<std::string> catalog{"A", "B"};
  const auto w = DomainWeights::resolve(catalog, two_domain_table(1.0, 1.0), dynamic_mode());
  const std::vector<TrainingExample> single{{"a", {1}, {2}, {{0}}}};
  EXPECT_THROW(weighted_batch_loss(single, p, w, dynamic_mode(), 1), ContractError);
  const std::vector<TrainingExample> same{{"a", {1}, {2}, {{0}}}, {"b", {3}, {2}, {{0}}}};
  EXPECT_THROW(weighted_batch_loss(same, p, w, dynamic_mode(), 1), DegenerateBatchError);
  EXPECT_THROW(weighted_batch_loss(sample_batch(), p, w, dynamic_mode(), 1, true, Mode::kEval), ContractError);
}

TEST(BatchLoss, CollidingNegativeIsDropped) {
  // Both examples share positive 4; for each term the candidate set is {4, other's distinct positives}.
  const auto p = init_params(tiny(), 28);
  const std::vector<TrainingExample> batch{{"a", {1}, {4, 5}, {{0}, {0}}}, {"b", {2}, {4, 6}, {{0}, {1}}}};
  const std::vector<std::string> catalog{"A", "B"};
  const auto w = DomainWeights::resolve(catalog, two_domain_table(0.5, 2.0), dynamic_mode());
  EXPECT_NEAR(weighted_batch_loss(batch, p, w, dynamic_mode(), 8, false).loss, oracle_loss(batch, p, w, 8, Mode::kTrain),
              1e-10);
}
