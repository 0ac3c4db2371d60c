#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dwrec/error.hpp"

namespace dwrec {

// One positive (user, item) event. `domains` is kept sorted and unique.
struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
  std::vector<std::string> domains;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view chomp(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, value);
  if (res.ec != std::errc{} || res.ptr != end) return std::nullopt;
  return value;
}

inline bool valid_token(std::string_view t) {
  return !t.empty() && t.find_first_of("\t\n\r|") == std::string_view::npos;
}

}  // namespace detail

// Indexed, immutable interaction log. Users and items are numbered in order of
// first appearance; the domain catalog is sorted lexicographically.
class Corpus {
 public:
  using Index = std::uint32_t;

  // Validates and indexes. Throws ValidationError / EmptyCorpusError.
  static Corpus build(std::vector<Interaction> interactions) {
    if (interactions.empty()) throw EmptyCorpusError();
    Corpus c;
    c.rows_ = std::move(interactions);

    std::unordered_set<std::string> domain_set;
    for (std::size_t pos = 0; pos < c.rows_.size(); ++pos) {
      auto& row = c.rows_[pos];
      const auto where = " (interaction " + std::to_string(pos) + ")";
      if (!detail::valid_token(row.user_id)) throw ValidationError("invalid user token" + where);
      if (!detail::valid_token(row.item_id)) throw ValidationError("invalid item token" + where);
      if (row.timestamp < 0) throw ValidationError("negative timestamp" + where);
      if (row.domains.empty()) throw ValidationError("empty domain set" + where);
      for (const auto& d : row.domains)
        if (!detail::valid_token(d)) throw ValidationError("invalid domain token" + where);
      std::sort(row.domains.begin(), row.domains.end());
      row.domains.erase(std::unique(row.domains.begin(), row.domains.end()), row.domains.end());
      domain_set.insert(row.domains.begin(), row.domains.end());
    }
    c.domains_.assign(domain_set.begin(), domain_set.end());
    std::sort(c.domains_.begin(), c.domains_.end());
    for (Index d = 0; d < c.domains_.size(); ++d) c.domain_lookup_.emplace(c.domains_[d], d);

    const auto n = c.rows_.size();
    c.row_user_.resize(n);
    c.row_item_.resize(n);
    c.row_domain_offsets_.assign(1, 0);
    std::vector<std::vector<Index>> item_ds_tmp;
    for (std::size_t pos = 0; pos < n; ++pos) {
      const auto& row = c.rows_[pos];
      c.row_user_[pos] = intern(row.user_id, c.users_, c.user_lookup_);
      const auto item = intern(row.item_id, c.items_, c.item_lookup_);
      c.row_item_[pos] = item;
      const auto first = c.row_domain_ids_.size();
      for (const auto& d : row.domains) c.row_domain_ids_.push_back(c.domain_lookup_.at(d));
      c.row_domain_offsets_.push_back(c.row_domain_ids_.size());
      if (item_ds_tmp.size() <= item) item_ds_tmp.resize(item + 1);
      auto& item_ds = item_ds_tmp[item];
      for (auto k = first; k < c.row_domain_ids_.size(); ++k)
        if (std::find(item_ds.begin(), item_ds.end(), c.row_domain_ids_[k]) == item_ds.end())
          item_ds.push_back(c.row_domain_ids_[k]);
    }
    c.item_domain_offsets_.assign(1, 0);
    for (auto& ds : item_ds_tmp) {
      std::sort(ds.begin(), ds.end());
      c.item_domain_ids_.insert(c.item_domain_ids_.end(), ds.begin(), ds.end());
      c.item_domain_offsets_.push_back(c.item_domain_ids_.size());
    }
    c.row_domain_slots_.resize(c.row_domain_ids_.size());
    for (std::size_t pos = 0; pos < n; ++pos) {
      const auto item_ds = c.item_domains(c.row_item_[pos]);
      const auto base = c.item_domain_offsets_[c.row_item_[pos]];
      for (auto k = c.row_domain_offsets_[pos]; k < c.row_domain_offsets_[pos + 1]; ++k)
        c.row_domain_slots_[k] = static_cast<Index>(
            base + static_cast<std::size_t>(std::find(item_ds.begin(), item_ds.end(), c.row_domain_ids_[k]) - item_ds.begin()));
    }

    c.sequences_.resize(c.users_.size());
    for (std::size_t pos = 0; pos < n; ++pos) c.sequences_[c.row_user_[pos]].push_back(pos);
    for (auto& seq : c.sequences_) {
      std::stable_sort(seq.begin(), seq.end(), [&](std::size_t a, std::size_t b) {
        return c.rows_[a].timestamp < c.rows_[b].timestamp;
      });
    }

    c.domain_interactions_.assign(c.domains_.size(), 0);
    c.domain_users_.assign(c.domains_.size(), 0);
    for (std::size_t pos = 0; pos < n; ++pos)
      for (auto d : c.domains_of(pos)) ++c.domain_interactions_[d];
    std::vector<std::size_t> last_user(c.domains_.size(), SIZE_MAX);
    for (Index u = 0; u < c.sequences_.size(); ++u) {
      for (auto pos : c.sequences_[u]) {
        for (auto d : c.domains_of(pos)) {
          if (last_user[d] != u) {
            last_user[d] = u;
            ++c.domain_users_[d];
          }
        }
      }
    }
    return c;
  }

  std::span<const Interaction> interactions() const { return rows_; }
  const Interaction& interaction(std::size_t pos) const { return rows_.at(pos); }

  std::size_t num_interactions() const { return rows_.size(); }
  std::size_t num_users() const { return users_.size(); }
  std::size_t num_items() const { return items_.size(); }
  std::size_t num_domains() const { return domains_.size(); }

  const std::vector<std::string>& users() const { return users_; }
  const std::vector<std::string>& items() const { return items_; }
  const std::vector<std::string>& domain_catalog() const { return domains_; }

  std::optional<Index> find_user(const std::string& token) const { return lookup(user_lookup_, token); }
  std::optional<Index> find_item(const std::string& token) const { return lookup(item_lookup_, token); }
  std::optional<Index> find_domain(const std::string& token) const { return lookup(domain_lookup_, token); }

  Index user_of(std::size_t pos) const { return row_user_.at(pos); }
  Index item_of(std::size_t pos) const { return row_item_.at(pos); }
  std::span<const Index> domains_of(std::size_t pos) const {
    if (pos >= rows_.size()) throw std::out_of_range("Corpus::domains_of");
    return {row_domain_ids_.data() + row_domain_offsets_[pos], row_domain_ids_.data() + row_domain_offsets_[pos + 1]};
  }

  // Interaction positions of `user`, chronological, ties in input order.
  std::span<const std::size_t> user_sequence(Index user) const { return sequences_.at(user); }

  // Union of every domain the item was seen with.
  std::span<const Index> item_domains(Index item) const {
    if (item >= items_.size()) throw std::out_of_range("Corpus::item_domains");
    return {item_domain_ids_.data() + item_domain_offsets_[item], item_domain_ids_.data() + item_domain_offsets_[item + 1]};
  }
  // Slot of each of the interaction's domains in the flat (item, domain)
  // layout, which lists every item's sorted domains back to back.
  std::span<const Index> domain_slots_of(std::size_t pos) const {
    if (pos >= rows_.size()) throw std::out_of_range("Corpus::domain_slots_of");
    return {row_domain_slots_.data() + row_domain_offsets_[pos], row_domain_slots_.data() + row_domain_offsets_[pos + 1]};
  }
  std::size_t item_domain_offset(Index item) const { return item_domain_offsets_.at(item); }
  std::size_t num_item_domain_pairs() const { return item_domain_ids_.size(); }

  // |I_d|: interactions carrying domain d, each counted once per member domain.
  std::size_t domain_interactions(Index d) const { return domain_interactions_.at(d); }
  // |U_d|: distinct users with at least one interaction in d.
  std::size_t domain_users(Index d) const { return domain_users_.at(d); }

  // Builds a corpus from the given positions, preserving their relative order.
  Corpus subset(std::span<const std::size_t> positions) const {
    std::vector<std::size_t> sorted(positions.begin(), positions.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<Interaction> rows;
    rows.reserve(sorted.size());
    for (auto pos : sorted) rows.push_back(rows_.at(pos));
    return build(std::move(rows));
  }

 private:
  template <typename Map>
  static std::optional<Index> lookup(const Map& m, const std::string& token) {
    const auto it = m.find(token);
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  static Index intern(const std::string& token, std::vector<std::string>& tokens,
                      std::unordered_map<std::string, Index>& lookup) {
    const auto [it, inserted] = lookup.emplace(token, static_cast<Index>(tokens.size()));
    if (inserted) tokens.push_back(token);
    return it->second;
  }

  std::vector<Interaction> rows_;
  std::vector<std::string> users_, items_, domains_;
  std::unordered_map<std::string, Index> user_lookup_, item_lookup_, domain_lookup_;
  std::vector<Index> row_user_, row_item_;
  // Flat (CSR) domain lists per interaction and per item.
  std::vector<Index> row_domain_ids_, row_domain_slots_;
  std::vector<std::size_t> row_domain_offsets_;
  std::vector<std::vector<std::size_t>> sequences_;
  std::vector<Index> item_domain_ids_;
  std::vector<std::size_t> item_domain_offsets_;
  std::vector<std::size_t> domain_interactions_, domain_users_;
};

// ---------------------------------------------------------------------------
// TSV interaction format: header `user_id\titem_id\ttimestamp\tdomains`,
// domains pipe-separated.

inline constexpr std::string_view kTsvHeader = "user_id\titem_id\ttimestamp\tdomains";

inline Corpus read_tsv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  ++line_no;
  if (detail::chomp(line) != kTsvHeader)
    throw ParseError(1, "expected header '" + std::string(kTsvHeader) + "'");

  std::vector<Interaction> rows;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::chomp(line);
    if (text.empty()) continue;
    const auto fields = detail::split(text, '\t');
    if (fields.size() != 4) throw ParseError(line_no, "expected 4 tab-separated fields");
    if (fields[0].empty() || fields[1].empty()) throw ParseError(line_no, "empty user or item token");
    const auto ts = detail::parse_number<std::int64_t>(fields[2]);
    if (!ts) throw ParseError(line_no, "timestamp is not an integer");
    if (*ts < 0) throw ValidationError("line " + std::to_string(line_no) + ": negative timestamp");
    if (fields[3].empty()) throw ValidationError("line " + std::to_string(line_no) + ": empty domain field");
    Interaction row{std::string(fields[0]), std::string(fields[1]), *ts, {}};
    for (auto d : detail::split(fields[3], '|')) {
      if (d.empty()) throw ValidationError("line " + std::to_string(line_no) + ": empty domain token");
      row.domains.emplace_back(d);
    }
    rows.push_back(std::move(row));
  }
  return Corpus::build(std::move(rows));
}

inline Corpus read_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return read_tsv(in);
}

inline void write_tsv(const Corpus& corpus, std::ostream& out) {
  out << kTsvHeader << '\n';
  for (const auto& row : corpus.interactions()) {
    out << row.user_id << '\t' << row.item_id << '\t' << row.timestamp << '\t';
    for (std::size_t i = 0; i < row.domains.size(); ++i) out << (i ? "|" : "") << row.domains[i];
    out << '\n';
  }
}

inline void write_tsv(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  write_tsv(corpus, out);
}

// ---------------------------------------------------------------------------
// MovieLens adapter: ratings `userId,movieId,rating,timestamp` plus items
// `movieId,title,genres`. Ratings below the threshold are not positives.

namespace detail {

// RFC-4180 style field splitting; titles may be quoted and contain commas.
inline std::optional<std::vector<std::string>> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) return std::nullopt;
  out.push_back(std::move(field));
  return out;
}

}  // namespace detail

inline constexpr double kMovieLensPositiveThreshold = 4.0;

inline Corpus read_movielens(std::istream& ratings, std::istream& movies,
                             double threshold = kMovieLensPositiveThreshold) {
  std::unordered_map<std::string, std::vector<std::string>> genres;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(movies, line)) {
    ++line_no;
    const auto text = detail::chomp(line);
    if (text.empty() || (line_no == 1 && text.starts_with("movieId"))) continue;
    const auto fields = detail::split_csv(text);
    if (!fields || fields->size() != 3) throw ParseError(line_no, "items file: expected movieId,title,genres");
    if ((*fields)[2].empty()) throw ValidationError("items file line " + std::to_string(line_no) + ": empty genre field");
    std::vector<std::string> gs;
    for (auto g : detail::split((*fields)[2], '|')) {
      if (g.empty()) throw ValidationError("items file line " + std::to_string(line_no) + ": empty genre token");
      gs.emplace_back(g);
    }
    genres[(*fields)[0]] = std::move(gs);
  }

  std::vector<Interaction> rows;
  line_no = 0;
  while (std::getline(ratings, line)) {
    ++line_no;
    const auto text = detail::chomp(line);
    if (text.empty() || (line_no == 1 && text.starts_with("userId"))) continue;
    const auto fields = detail::split(text, ',');
    if (fields.size() != 4) throw ParseError(line_no, "ratings file: expected userId,movieId,rating,timestamp");
    const auto rating = detail::parse_number<double>(fields[2]);
    const auto ts = detail::parse_number<std::int64_t>(fields[3]);
    if (!rating || !ts) throw ParseError(line_no, "ratings file: bad rating or timestamp");
    if (*rating < threshold) continue;
    const auto it = genres.find(std::string(fields[1]));
    if (it == genres.end())
      throw ValidationError("ratings file line " + std::to_string(line_no) + ": movie " +
                            std::string(fields[1]) + " missing from items file");
    rows.push_back({std::string(fields[0]), std::string(fields[1]), *ts, it->second});
  }
  if (rows.empty()) throw EmptyCorpusError("no rating at or above the positivity threshold");
  return Corpus::build(std::move(rows));
}

inline Corpus read_movielens(const std::string& ratings_path, const std::string& movies_path,
                             double threshold = kMovieLensPositiveThreshold) {
  std::ifstream ratings(ratings_path), movies(movies_path);
  if (!ratings) throw ValidationError("cannot open " + ratings_path);
  if (!movies) throw ValidationError("cannot open " + movies_path);
  return read_movielens(ratings, movies, threshold);
}

// ---------------------------------------------------------------------------
// Temporal per-user split.

struct SplitSpec {
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::size_t min_sequence_length = 5;

  void validate() const {
    auto ok = [](double f) { return f > 0.0 && f <= 0.5; };
    if (!ok(val_fraction) || !ok(test_fraction)) throw ConfigError("split fractions must lie in (0, 0.5]");
    if (min_sequence_length < 3) throw ConfigError("min_sequence_length must be at least 3");
  }
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

// ceil(fraction * n), tolerant of representation error such as 0.1 * 30.
inline std::size_t fraction_ceil(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

inline SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  SplitSizes s;
  s.test = fraction_ceil(spec.test_fraction, n);
  s.val = fraction_ceil(spec.val_fraction, n);
  s.train = n > s.test + s.val ? n - s.test - s.val : 0;
  return s;
}

struct SplitCorpora {
  Corpus train, val, test;
};

inline SplitCorpora temporal_split(const Corpus& corpus, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::size_t> train, val, test;
  for (Corpus::Index u = 0; u < corpus.num_users(); ++u) {
    const auto seq = corpus.user_sequence(u);
    if (seq.size() < spec.min_sequence_length) continue;
    const auto sizes = split_sizes(seq.size(), spec);
    if (sizes.train == 0)
      throw SplitError("fractions leave no training events for user " + corpus.users()[u]);
    train.insert(train.end(), seq.begin(), seq.begin() + sizes.train);
    val.insert(val.end(), seq.begin() + sizes.train, seq.begin() + sizes.train + sizes.val);
    test.insert(test.end(), seq.end() - sizes.test, seq.end());
  }
  if (train.empty()) throw SplitError("no user has at least min_sequence_length interactions");
  return {corpus.subset(train), corpus.subset(val), corpus.subset(test)};
}

}  // namespace dwrec
