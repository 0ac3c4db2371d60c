#include <algorithm>
#include <sstream>

#include <gtest/gtest.h>

#include "dwrec/corpus.hpp"
#include "dwrec/rng.hpp"
#include "test_util.hpp"

using namespace dwrec;
using dwrec::testing::row;

namespace {

Corpus parse(const std::string& text) {
  std::istringstream in(text);
  return read_tsv(in);
}

Corpus parse_rows(const std::string& rows) {
  std::istringstream in(std::string(kTsvHeader) + "\n" + rows);
  return read_tsv(in);
}

}  // namespace

TEST(ReadTsv, CountsUsersItemsDomains) {
  const auto c = parse("user_id\titem_id\ttimestamp\tdomains\nu1\ti1\t10\tA\nu1\ti2\t11\tB\nu2\ti1\t12\tA\n");
  EXPECT_EQ(c.num_interactions(), 3u);
  EXPECT_EQ(c.num_users(), 2u);
  EXPECT_EQ(c.num_domains(), 2u);
  EXPECT_EQ(c.num_items(), 2u);
}

TEST(ReadTsv, MultiDomainItemCountsOncePerDomain) {
  const auto c = parse_rows("u1\ti1\t1\tA|B\nu2\ti1\t2\tA|B\n");
  EXPECT_EQ(c.domain_interactions(*c.find_domain("A")), 2u);
  EXPECT_EQ(c.domain_interactions(*c.find_domain("B")), 2u);
}

TEST(ReadTsv, MalformedLineReportsLineNumber) {
  try {
    parse("user_id\titem_id\ttimestamp\tdomains\nu1\ti1\t1\tA\nu1\ti2\tB\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_TRUE(e.is_data_error());
  }
}

TEST(ReadTsv, MissingHeaderIsLineOne) {
  try {
    parse("u1\ti1\t1\tA\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(ReadTsv, RejectsEmptyDomainFieldAndNegativeTimestamp) {
  EXPECT_THROW(parse_rows("u1\ti1\t1\t\n"), ValidationError);
  EXPECT_THROW(parse_rows("u1\ti1\t1\tA||B\n"), ValidationError);
  EXPECT_THROW(parse_rows("u1\ti1\t-4\tA\n"), ValidationError);
  EXPECT_THROW(parse_rows("u1\ti1\tx\tA\n"), ParseError);
}

TEST(ReadTsv, EmptyInputIsAnEmptyCorpusError) {
  EXPECT_THROW(parse("user_id\titem_id\ttimestamp\tdomains\n"), EmptyCorpusError);
}

TEST(ReadTsv, RoundTripPreservesInteractions) {
  Rng rng = make_rng(5, "tsv");
  std::vector<Interaction> rows;
  for (int k = 0; k < 200; ++k) {
    std::vector<std::string> ds{"D" + std::to_string(uniform_index(rng, 4))};
    if (uniform01(rng) < 0.3) ds.push_back("D" + std::to_string(4 + uniform_index(rng, 2)));
    rows.push_back(row("u" + std::to_string(uniform_index(rng, 20)), "i" + std::to_string(uniform_index(rng, 50)),
                       static_cast<std::int64_t>(uniform_index(rng, 1000)), ds));
  }
  const auto c = Corpus::build(rows);
  std::ostringstream out;
  write_tsv(c, out);
  const auto back = parse(out.str());
  EXPECT_TRUE(std::ranges::equal(back.interactions(), c.interactions()));
  std::ostringstream again;
  write_tsv(back, again);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Corpus, DomainSlotsPointAtTheItemsDomainList) {
  const auto c = Corpus::build({row("u1", "x", 1, {"B", "A"}), row("u2", "y", 2, {"A"}), row("u1", "x", 3, {"C"}),
                                row("u2", "x", 4, {"A"})});
  EXPECT_EQ(c.num_item_domain_pairs(), 4u);
  for (std::size_t pos = 0; pos < c.num_interactions(); ++pos) {
    const auto item = c.item_of(pos);
    const auto ds = c.domains_of(pos);
    const auto slots = c.domain_slots_of(pos);
    ASSERT_EQ(ds.size(), slots.size());
    for (std::size_t k = 0; k < ds.size(); ++k)
      EXPECT_EQ(c.item_domains(item)[slots[k] - c.item_domain_offset(item)], ds[k]);
  }
  EXPECT_THROW(c.domains_of(4), std::out_of_range);
  EXPECT_THROW(c.domain_slots_of(4), std::out_of_range);
}

TEST(ReadMovielens, ThresholdsRatingsAndSplitsGenres) {
  std::istringstream ratings("userId,movieId,rating,timestamp\n1,10,4.0,100\n1,20,3.5,101\n2,20,5.0,102\n");
  std::istringstream movies("movieId,title,genres\n10,\"Heat, The (1995)\",Action|Crime\n20,Toy Story (1995),Animation\n");
  const auto c = read_movielens(ratings, movies);
  EXPECT_EQ(c.num_interactions(), 2u);
  EXPECT_EQ(c.interaction(0).domains, (std::vector<std::string>{"Action", "Crime"}));
}

TEST(ReadMovielens, NoPositiveRatingsIsEmpty) {
  std::istringstream ratings("userId,movieId,rating,timestamp\n1,10,3.0,100\n2,10,3.0,101\n");
  std::istringstream movies("movieId,title,genres\n10,X,Drama\n");
  EXPECT_THROW(read_movielens(ratings, movies), EmptyCorpusError);
}

TEST(TemporalSplit, TenEventsGiveEightOneOne) {
  std::vector<Interaction> rows;
  for (int t = 0; t < 10; ++t) rows.push_back(row("u", "i" + std::to_string(t), 100 - t, {"A"}));
  const auto s = temporal_split(Corpus::build(rows), SplitSpec{});
  EXPECT_EQ(s.train.num_interactions(), 8u);
  EXPECT_EQ(s.val.num_interactions(), 1u);
  EXPECT_EQ(s.test.num_interactions(), 1u);
  // The latest event is held out for test.
  EXPECT_EQ(s.test.interaction(0).timestamp, 100);
  EXPECT_EQ(s.val.interaction(0).timestamp, 99);
}

TEST(TemporalSplit, FiveUsersOfTen) {
  std::vector<Interaction> rows;
  for (int u = 0; u < 5; ++u)
    for (int t = 0; t < 10; ++t) rows.push_back(row("u" + std::to_string(u), "i" + std::to_string(t), t, {"A"}));
  const auto s = temporal_split(Corpus::build(rows), SplitSpec{});
  EXPECT_EQ(s.train.num_interactions(), 40u);
  EXPECT_EQ(s.val.num_interactions(), 5u);
  EXPECT_EQ(s.test.num_interactions(), 5u);
}

TEST(TemporalSplit, ShortUsersAreDropped) {
  std::vector<Interaction> rows;
  for (int t = 0; t < 4; ++t) rows.push_back(row("short", "i" + std::to_string(t), t, {"A"}));
  for (int t = 0; t < 6; ++t) rows.push_back(row("long", "i" + std::to_string(t), t, {"A"}));
  const auto s = temporal_split(Corpus::build(rows), SplitSpec{});
  EXPECT_FALSE(s.train.find_user("short"));
  EXPECT_TRUE(s.train.find_user("long"));
  std::vector<Interaction> only_short(rows.begin(), rows.begin() + 4);
  EXPECT_THROW(temporal_split(Corpus::build(only_short), SplitSpec{}), SplitError);
}

TEST(TemporalSplit, PartitionsEachUserInTimeOrder) {
  const auto c = dwrec::testing::small_synthetic(11);
  const auto s = temporal_split(c, SplitSpec{});
  EXPECT_EQ(s.train.num_interactions() + s.val.num_interactions() + s.test.num_interactions(), c.num_interactions());
  for (Corpus::Index u = 0; u < s.test.num_users(); ++u) {
    const auto& user = s.test.users()[u];
    const auto tu = s.train.find_user(user);
    ASSERT_TRUE(tu);
    std::int64_t last_train = 0;
    for (auto pos : s.train.user_sequence(*tu)) last_train = std::max(last_train, s.train.interaction(pos).timestamp);
    for (auto pos : s.test.user_sequence(u)) EXPECT_GE(s.test.interaction(pos).timestamp, last_train);
  }
}
