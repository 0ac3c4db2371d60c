#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "dwrec/corpus.hpp"
#include "dwrec/encoder.hpp"
#include "dwrec/error.hpp"
#include "dwrec/sparsity.hpp"
#include "dwrec/stats.hpp"
#include "dwrec/trainer.hpp"
#include "dwrec/vocabulary.hpp"

namespace dwrec {

using ItemSet = std::unordered_set<std::string>;

// Top-K items for one user, best first.
struct RankedList {
  std::string user;
  std::size_t k = 10;
  std::vector<std::string> items;
  std::vector<double> scores;
  bool short_list = false;  // fewer than k candidates remained
};

// Scores every vocabulary item against the prefix embedding, drops `exclude`,
// and keeps the best k. Equal scores order by ascending item token.
inline RankedList rank_topk(const EncoderParams& params, const Vocabulary& vocab,
                            std::span<const std::int32_t> prefix, const std::unordered_set<std::int32_t>& exclude,
                            std::size_t k, std::string user = {}) {
  if (prefix.empty()) throw ContractError("rank_topk: empty prefix");
  const RowVector u = forward(params, prefix, Mode::kEval).embedding;
  const auto n = static_cast<Eigen::Index>(vocab.num_items());
  const Eigen::VectorXd scores = params.item_embedding.bottomRows(n) * u.transpose();

  std::vector<std::int32_t> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (std::int32_t id = 1; id <= n; ++id)
    if (!exclude.count(id)) cand.push_back(id);
  const auto better = [&](std::int32_t a, std::int32_t b) {
    const double sa = scores(a - 1), sb = scores(b - 1);
    if (sa != sb) return sa > sb;
    return vocab.token(a) < vocab.token(b);
  };
  const std::size_t take = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), better);

  RankedList list;
  list.user = std::move(user);
  list.k = k;
  list.short_list = cand.size() < k;
  for (std::size_t r = 0; r < take; ++r) {
    list.items.push_back(vocab.token(cand[r]));
    list.scores.push_back(scores(cand[r] - 1));
  }
  return list;
}

// ---------------------------------------------------------------------------
// Per-list metrics.

inline double recall_at_k(const RankedList& list, const ItemSet& relevant) {
  if (relevant.empty()) throw MetricError("recall: empty relevant set");
  std::size_t hits = 0;
  for (const auto& item : list.items) hits += relevant.count(item);
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// Binary-relevance NDCG; the ideal list holds min(|relevant|, k) hits.
inline double ndcg_at_k(const RankedList& list, const ItemSet& relevant) {
  if (relevant.empty()) throw MetricError("ndcg: empty relevant set");
  double dcg = 0.0;
  for (std::size_t r = 0; r < list.items.size(); ++r)
    if (relevant.count(list.items[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double ideal = 0.0;
  const std::size_t hits = std::min(relevant.size(), list.k);
  for (std::size_t r = 0; r < hits; ++r) ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / ideal;
}

namespace detail {

inline double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::size_t common = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++common;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - common;
  return uni == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(uni);
}

}  // namespace detail

// Mean over unordered pairs of 1 - Jaccard(domain sets). `domains_of(token)`
// must return a sorted std::vector<std::string>.
template <typename DomainsOf>
double intra_list_diversity(const RankedList& list, DomainsOf&& domains_of) {
  const std::size_t n = list.items.size();
  if (n < 2) throw MetricError("ild: list shorter than two items");
  std::vector<std::vector<std::string>> sets;
  for (const auto& item : list.items) sets.push_back(domains_of(item));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sum += 1.0 - detail::jaccard(sets[i], sets[j]);
  return sum / static_cast<double>(n * (n - 1) / 2);
}

// Entropy (natural log) of the list's domain mass; each item spreads one unit
// evenly over its domains.
template <typename DomainsOf>
double interest_entropy(const RankedList& list, DomainsOf&& domains_of) {
  if (list.items.empty()) throw MetricError("interest entropy: empty list");
  std::map<std::string, double> mass;
  for (const auto& item : list.items) {
    const auto ds = domains_of(item);
    for (const auto& d : ds) mass[d] += 1.0 / static_cast<double>(ds.size());
  }
  const double total = static_cast<double>(list.items.size());
  double h = 0.0;
  for (const auto& [d, m] : mass) {
    const double p = m / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

inline double catalog_coverage(std::span<const RankedList> lists, std::size_t catalog_size) {
  if (lists.empty()) throw MetricError("coverage: no lists");
  if (catalog_size == 0) throw MetricError("coverage: empty catalog");
  std::unordered_set<std::string> seen;
  for (const auto& l : lists) seen.insert(l.items.begin(), l.items.end());
  return static_cast<double>(seen.size()) / static_cast<double>(catalog_size);
}

// ---------------------------------------------------------------------------
// Reports.

inline constexpr const char* kAllUsers = "_all";
inline constexpr const char* kGlobal = "_global";

struct MetricSummary {
  std::vector<double> per_run;
  double mean = 0.0;
  std::optional<double> ci_half_width;

  static MetricSummary of(std::vector<double> values) {
    MetricSummary s;
    s.per_run = std::move(values);
    if (!s.per_run.empty()) s.mean = dwrec::mean(s.per_run);
    s.ci_half_width = ci95_half_width(s.per_run);
    return s;
  }
};

struct DomainReport {
  std::string domain;
  bool present = false;  // some test user has a positive in this domain
  std::size_t users = 0;
  std::map<std::string, MetricSummary> metrics;  // recall, ndcg
};

struct EvalReport {
  std::string model;
  std::size_t k = 10;
  std::vector<std::uint64_t> seeds;
  std::vector<DomainReport> domains;             // includes the "_all" slice
  std::map<std::string, MetricSummary> global;   // ild, interest_entropy, coverage
  std::size_t skipped_users = 0;                 // test users without usable history

  std::size_t runs() const { return seeds.size(); }

  const DomainReport* find(const std::string& domain) const {
    for (const auto& d : domains)
      if (d.domain == domain) return &d;
    return nullptr;
  }
};

struct RunMetrics {
  std::map<std::string, std::map<std::string, double>> by_domain;  // domain -> metric -> value
  std::map<std::string, std::size_t> slice_users;
  std::map<std::string, double> global;
  std::vector<RankedList> lists;
  std::size_t skipped_users = 0;
};

// Metrics of one trained model. Per-domain slices hold the users with a test
// positive in the domain; their relevance set is restricted to that domain.
inline RunMetrics evaluate_run(const TrainingState& model, std::span<const Corpus* const> history,
                               const Corpus& test, std::span<const std::string> domains, std::size_t k) {
  const auto& vocab = model.vocab;
  std::unordered_map<std::string, std::vector<std::string>> domain_cache;
  auto domains_of = [&](const std::string& token) -> const std::vector<std::string>& {
    auto it = domain_cache.find(token);
    if (it != domain_cache.end()) return it->second;
    std::vector<std::string> ds;
    if (auto id = vocab.id(token)) {
      ds = vocab.domain_names_of(*id);
    } else if (auto ti = test.find_item(token)) {
      for (auto d : test.item_domains(*ti)) ds.push_back(test.domain_catalog()[d]);
    }
    std::sort(ds.begin(), ds.end());
    return domain_cache.emplace(token, std::move(ds)).first->second;
  };

  RunMetrics out;
  std::map<std::string, std::vector<double>> recall, ndcg;
  std::vector<double> ild, entropy;
  for (Corpus::Index u = 0; u < test.num_users(); ++u) {
    const auto& user = test.users()[u];
    std::vector<std::pair<std::int64_t, std::int32_t>> events;
    for (const Corpus* h : history) {
      const auto hu = h->find_user(user);
      if (!hu) continue;
      for (auto pos : h->user_sequence(*hu))
        if (auto id = vocab.id(h->interaction(pos).item_id)) events.emplace_back(h->interaction(pos).timestamp, *id);
    }
    if (events.empty()) {
      ++out.skipped_users;
      continue;
    }
    std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::int32_t> prefix;
    std::unordered_set<std::int32_t> exclude;
    for (const auto& [ts, id] : events) {
      prefix.push_back(id);
      exclude.insert(id);
    }
    auto list = rank_topk(model.params, vocab, prefix, exclude, k, user);

    ItemSet all;
    std::map<std::string, ItemSet> per_domain;
    for (auto pos : test.user_sequence(u)) {
      const auto& token = test.interaction(pos).item_id;
      all.insert(token);
      for (auto d : test.item_domains(*test.find_item(token))) per_domain[test.domain_catalog()[d]].insert(token);
    }
    recall[kAllUsers].push_back(recall_at_k(list, all));
    ndcg[kAllUsers].push_back(ndcg_at_k(list, all));
    for (const auto& d : domains) {
      const auto it = per_domain.find(d);
      if (it == per_domain.end()) continue;
      recall[d].push_back(recall_at_k(list, it->second));
      ndcg[d].push_back(ndcg_at_k(list, it->second));
    }
    if (list.items.size() >= 2) ild.push_back(intra_list_diversity(list, domains_of));
    if (!list.items.empty()) entropy.push_back(interest_entropy(list, domains_of));
    out.lists.push_back(std::move(list));
  }

  for (const auto& [d, values] : recall) {
    out.by_domain[d]["recall"] = mean(values);
    out.by_domain[d]["ndcg"] = mean(ndcg[d]);
    out.slice_users[d] = values.size();
  }
  if (!ild.empty()) out.global["ild"] = mean(ild);
  if (!entropy.empty()) out.global["interest_entropy"] = mean(entropy);
  if (!out.lists.empty()) out.global["coverage"] = catalog_coverage(out.lists, vocab.num_items());
  return out;
}

// Aggregates seed-aligned runs of one model into a report.
inline EvalReport evaluate_model(const std::string& name, std::span<const TrainingState> runs,
                                 std::span<const Corpus* const> history, const Corpus& test,
                                 std::vector<std::string> domains = {}, std::size_t k = 10) {
  if (runs.empty()) throw MetricError("evaluate: no runs");
  if (domains.empty()) domains = test.domain_catalog();
  EvalReport report;
  report.model = name;
  report.k = k;
  std::vector<RunMetrics> per_run;
  for (const auto& r : runs) {
    per_run.push_back(evaluate_run(r, history, test, domains, k));
    report.seeds.push_back(r.train_config.seed);
  }
  report.skipped_users = per_run.front().skipped_users;

  std::vector<std::string> slices{kAllUsers};
  slices.insert(slices.end(), domains.begin(), domains.end());
  for (const auto& d : slices) {
    DomainReport dr;
    dr.domain = d;
    dr.present = per_run.front().by_domain.count(d) > 0;
    if (dr.present) {
      dr.users = per_run.front().slice_users.at(d);
      for (const char* metric : {"recall", "ndcg"}) {
        std::vector<double> values;
        for (const auto& r : per_run) values.push_back(r.by_domain.at(d).at(metric));
        dr.metrics[metric] = MetricSummary::of(std::move(values));
      }
    }
    report.domains.push_back(std::move(dr));
  }
  for (const char* metric : {"ild", "interest_entropy", "coverage"}) {
    std::vector<double> values;
    for (const auto& r : per_run)
      if (auto it = r.global.find(metric); it != r.global.end()) values.push_back(it->second);
    if (values.size() == per_run.size()) report.global[metric] = MetricSummary::of(std::move(values));
  }
  return report;
}

namespace detail {

inline nlohmann::json to_json(const MetricSummary& s) {
  nlohmann::json j = {{"per_run", s.per_run}, {"mean", s.mean}};
  j["ci_half_width"] = s.ci_half_width ? nlohmann::json(*s.ci_half_width) : nlohmann::json(nullptr);
  return j;
}

inline MetricSummary metric_summary_from_json(const nlohmann::json& j) {
  MetricSummary s;
  s.per_run = j.at("per_run").get<std::vector<double>>();
  s.mean = j.at("mean").get<double>();
  if (!j.at("ci_half_width").is_null()) s.ci_half_width = j.at("ci_half_width").get<double>();
  return s;
}

}  // namespace detail

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : r.domains) {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [name, s] : d.metrics) metrics[name] = detail::to_json(s);
    domains.push_back({{"domain", d.domain}, {"present", d.present}, {"users", d.users}, {"metrics", metrics}});
  }
  nlohmann::json global = nlohmann::json::object();
  for (const auto& [name, s] : r.global) global[name] = detail::to_json(s);
  return {{"schema_version", kSchemaVersion},
          {"model", r.model},
          {"k", r.k},
          {"runs", r.runs()},
          {"seeds", r.seeds},
          {"skipped_users", r.skipped_users},
          {"metadata",
           {{"relevance", "binary, held-out test items"},
            {"domain_slice", "users with a test positive in the domain; relevance restricted to that domain"},
            {"interest_entropy", "user-averaged, natural log"},
            {"ci", "95% Student-t over runs"}}},
          {"domains", domains},
          {"global", global}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.k = j.at("k").get<std::size_t>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.skipped_users = j.value("skipped_users", std::size_t{0});
  for (const auto& d : j.at("domains")) {
    DomainReport dr;
    dr.domain = d.at("domain").get<std::string>();
    dr.present = d.at("present").get<bool>();
    dr.users = d.at("users").get<std::size_t>();
    for (const auto& [name, s] : d.at("metrics").items()) dr.metrics[name] = detail::metric_summary_from_json(s);
    r.domains.push_back(std::move(dr));
  }
  for (const auto& [name, s] : j.at("global").items()) r.global[name] = detail::metric_summary_from_json(s);
  return r;
}

inline void save_eval_report(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << to_json(r).dump(2) << '\n';
}

inline EvalReport load_eval_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return eval_report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

// `model,domain,metric,mean,ci_low,ci_high`; empty CI fields with one run.
inline void write_eval_csv(const EvalReport& r, std::ostream& out) {
  out << "model,domain,metric,mean,ci_low,ci_high\n";
  out << std::setprecision(10);
  auto row = [&](const std::string& domain, const std::string& metric, const MetricSummary& s) {
    out << r.model << ',' << domain << ',' << metric << ',' << s.mean << ',';
    if (s.ci_half_width) {
      out << s.mean - *s.ci_half_width << ',' << s.mean + *s.ci_half_width;
    } else {
      out << ',';
    }
    out << '\n';
  };
  for (const auto& d : r.domains)
    for (const auto& [metric, s] : d.metrics) row(d.domain, metric, s);
  for (const auto& [metric, s] : r.global) row(kGlobal, metric, s);
}

// ---------------------------------------------------------------------------
// Cross-model comparison.

struct ComparisonRow {
  std::string domain, metric;
  std::vector<std::pair<std::string, double>> means;  // per model
  std::vector<std::pair<std::string, double>> lifts;  // percent, versus the baseline model
  std::vector<PairedStats> tests;
};

inline std::vector<ComparisonRow> compare_reports(std::span<const EvalReport> reports, std::size_t baseline = 0) {
  if (reports.size() < 2) throw ConfigError("compare: need at least two model reports");
  if (baseline >= reports.size()) throw ConfigError("compare: baseline index out of range");
  std::vector<ComparisonRow> rows;
  auto add = [&](const std::string& domain, const std::string& metric, auto&& lookup) {
    std::vector<std::pair<std::string, std::vector<double>>> samples;
    ComparisonRow row{domain, metric, {}, {}, {}};
    for (const auto& r : reports) {
      const MetricSummary* s = lookup(r);
      if (!s) return;
      samples.emplace_back(r.model, s->per_run);
      row.means.emplace_back(r.model, s->mean);
    }
    const double base = row.means[baseline].second;
    for (std::size_t i = 0; i < row.means.size(); ++i)
      if (i != baseline && base != 0.0) row.lifts.emplace_back(row.means[i].first, lift_percent(base, row.means[i].second));
    bool aligned = true;
    for (const auto& s : samples) aligned = aligned && s.second.size() == samples.front().second.size() && s.second.size() >= 2;
    if (aligned) row.tests = significance_suite(samples);
    rows.push_back(std::move(row));
  };
  for (const auto& d : reports[baseline].domains) {
    for (const auto& [metric, unused] : d.metrics) {
      add(d.domain, metric, [&](const EvalReport& r) -> const MetricSummary* {
        const auto* dr = r.find(d.domain);
        if (!dr) return nullptr;
        const auto it = dr->metrics.find(metric);
        return it == dr->metrics.end() ? nullptr : &it->second;
      });
    }
  }
  for (const auto& [metric, unused] : reports[baseline].global) {
    add(kGlobal, metric, [&](const EvalReport& r) -> const MetricSummary* {
      const auto it = r.global.find(metric);
      return it == r.global.end() ? nullptr : &it->second;
    });
  }
  return rows;
}

inline std::string format_lift(double percent) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << (percent >= 0 ? "+" : "") << percent << '%';
  return s.str();
}

inline void print_comparison(const std::vector<ComparisonRow>& rows, std::ostream& out) {
  out << std::fixed;
  for (const auto& row : rows) {
    out << row.domain << ' ' << row.metric << ":";
    for (const auto& [model, m] : row.means) out << ' ' << model << '=' << std::setprecision(4) << m;
    for (const auto& [model, l] : row.lifts) out << " lift(" << model << ")=" << format_lift(l);
    out << '\n';
    for (const auto& t : row.tests) {
      out << "  " << t.b << " vs " << t.a << ": diff=" << std::setprecision(4) << t.mean_diff << " 95%CI=["
          << t.ci_low << ", " << t.ci_high << "]";
      if (t.t) {
        out << " t=" << *t.t << " p=" << *t.p << " p_bonf=" << *t.p_adjusted << " d=" << *t.cohens_d;
      } else {
        out << " t=undefined (zero-variance differences)" << (t.infinite_effect ? " d=inf" : " d=undefined");
      }
      out << '\n';
    }
  }
  out.unsetf(std::ios::fixed);
}

inline nlohmann::json to_json(const std::vector<ComparisonRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& row : rows) {
    nlohmann::json tests = nlohmann::json::array();
    for (const auto& t : row.tests) {
      tests.push_back({{"a", t.a}, {"b", t.b}, {"n", t.n}, {"mean_diff", t.mean_diff}, {"sd_diff", t.sd_diff},
                       {"t", opt(t.t)}, {"p", opt(t.p)}, {"p_bonferroni", opt(t.p_adjusted)},
                       {"cohens_d", opt(t.cohens_d)}, {"infinite_effect", t.infinite_effect},
                       {"ci_low", t.ci_low}, {"ci_high", t.ci_high}});
    }
    nlohmann::json means = nlohmann::json::object(), lifts = nlohmann::json::object();
    for (const auto& [m, v] : row.means) means[m] = v;
    for (const auto& [m, v] : row.lifts) lifts[m] = v;
    out.push_back({{"domain", row.domain}, {"metric", row.metric}, {"means", means}, {"lift_percent", lifts},
                   {"tests", tests}});
  }
  return {{"schema_version", kSchemaVersion}, {"comparisons", out}};
}

// Side-by-side top-K table for one user across models.
inline void print_topk_table(const std::vector<std::pair<std::string, RankedList>>& columns,
                             const std::function<std::string(const std::string&)>& describe, std::ostream& out) {
  out << "rank";
  for (const auto& [name, list] : columns) out << '\t' << name;
  out << '\n';
  std::size_t depth = 0;
  for (const auto& [name, list] : columns) depth = std::max(depth, list.items.size());
  for (std::size_t r = 0; r < depth; ++r) {
    out << r + 1;
    for (const auto& [name, list] : columns) out << '\t' << (r < list.items.size() ? describe(list.items[r]) : "");
    out << '\n';
  }
}

}  // namespace dwrec
