// dwrec: command-line driver for the domain-weighted recommender pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dwrec/config.hpp"
#include "dwrec/corpus.hpp"
#include "dwrec/evaluation.hpp"
#include "dwrec/sparsity.hpp"
#include "dwrec/synth.hpp"
#include "dwrec/trainer.hpp"

namespace fs = std::filesystem;
using namespace dwrec;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "flat key=value configuration file");
  cmd->add_option("--set", common.overrides, "override one configuration key (key=value), repeatable");
  cmd->add_option("--seed", common.seed, "seed for every random choice (overrides the 'seed' key)");
}

CliConfig load_config(const Common& common) {
  CliConfig cfg;
  if (!common.config_path.empty()) cfg.parse_file(common.config_path);
  for (const auto& kv : common.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(CliConfig::trim(kv.substr(0, eq)), CliConfig::trim(kv.substr(eq + 1)));
  }
  if (common.seed_given) cfg.seed = common.seed;
  cfg.sync_seed();
  return cfg;
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << j.dump(2) << '\n';
}

nlohmann::json stats_json(const DomainStats& s) {
  nlohmann::json domains = nlohmann::json::array();
  for (std::size_t d = 0; d < s.size(); ++d) {
    domains.push_back({{"domain", s.domains[d]},
                       {"frequency", s.frequency[d]},
                       {"user_ratio", s.user_ratio[d]},
                       {"entropy", s.entropy[d]},
                       {"score", s.score[d]},
                       {"distinct_items", s.distinct_items[d]}});
  }
  return domains;
}

nlohmann::json corpus_summary(const Corpus& c) {
  return {{"interactions", c.num_interactions()}, {"users", c.num_users()}, {"items", c.num_items()},
          {"domains", c.num_domains()}};
}

std::vector<Corpus> read_corpora(const std::vector<std::string>& paths) {
  std::vector<Corpus> out;
  for (const auto& p : paths) out.push_back(read_tsv(p));
  return out;
}

std::vector<const Corpus*> pointers(const std::vector<Corpus>& cs) {
  std::vector<const Corpus*> out;
  for (const auto& c : cs) out.push_back(&c);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dwrec: sequential recommendation with sparsity-aware domain loss weighting"};
  app.require_subcommand(1);
  Common common;

  // prepare
  auto* prepare = app.add_subcommand("prepare", "parse a corpus, split it temporally, write split TSVs and stats");
  std::string prep_input, prep_ratings, prep_movies, prep_out;
  prepare->add_option("--input", prep_input, "interaction TSV (user_id, item_id, timestamp, domains)");
  prepare->add_option("--ratings", prep_ratings, "MovieLens ratings.csv (with --movies)");
  prepare->add_option("--movies", prep_movies, "MovieLens movies.csv (with --ratings)");
  prepare->add_option("--out-dir", prep_out, "output directory")->required();
  add_common(prepare, common);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-domain corpus");
  std::string synth_out;
  synth->add_option("--out", synth_out, "output TSV")->required();
  add_common(synth, common);

  // weights
  auto* weights = app.add_subcommand("weights", "compute domain sparsity statistics and loss weights");
  std::string w_train, w_out, w_stats;
  weights->add_option("--train", w_train, "training split TSV")->required();
  weights->add_option("--out", w_out, "weight table JSON")->required();
  weights->add_option("--stats", w_stats, "also write per-domain statistics JSON");
  add_common(weights, common);

  // train
  auto* train = app.add_subcommand("train", "train an encoder and write a checkpoint and run record");
  std::string t_train, t_val, t_out, t_record, t_resume, t_mode, t_history;
  int t_epochs = 0;
  bool t_quiet = false;
  train->add_option("--train", t_train, "training split TSV")->required();
  train->add_option("--val", t_val, "validation split TSV (loss is logged per epoch)");
  train->add_option("--out", t_out, "checkpoint path (a .json sidecar is written next to it)")->required();
  train->add_option("--record", t_record, "run record JSON (default <out>.record.json)");
  train->add_option("--weights-history", t_history, "weight schedule history as JSON lines");
  train->add_option("--resume", t_resume, "continue from this checkpoint");
  train->add_option("--mode", t_mode, "loss mode: generic, fixed or dynamic (overrides loss.mode)");
  train->add_option("--epochs", t_epochs, "epoch budget (overrides train.epochs)");
  train->add_flag("--quiet", t_quiet, "no per-epoch progress on stderr");
  add_common(train, common);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "evaluate seed-aligned checkpoints of one model");
  std::vector<std::string> e_ckpts, e_history, e_domains;
  std::string e_test, e_name, e_out, e_csv;
  std::size_t e_k = 0;
  evaluate->add_option("--checkpoint", e_ckpts, "checkpoint per run, repeatable")->required();
  evaluate->add_option("--history", e_history, "splits forming each user's history (train, val), repeatable")
      ->required();
  evaluate->add_option("--test", e_test, "test split TSV")->required();
  evaluate->add_option("--name", e_name, "model name in the report (default: loss mode)");
  evaluate->add_option("--domains", e_domains, "domains to break down (default: all)");
  evaluate->add_option("--k", e_k, "list length (overrides eval.k)");
  evaluate->add_option("--out", e_out, "report JSON")->required();
  evaluate->add_option("--csv", e_csv, "flat CSV report");
  add_common(evaluate, common);

  // compare
  auto* compare = app.add_subcommand("compare", "significance tests and lifts across model reports");
  std::vector<std::string> c_reports;
  std::string c_baseline, c_out;
  compare->add_option("--report", c_reports, "evaluation report JSON, one per model, repeatable")->required();
  compare->add_option("--baseline", c_baseline, "model name lifts are measured against (default: first)");
  compare->add_option("--out", c_out, "comparison JSON");

  // report
  auto* report = app.add_subcommand("report", "top-K table for one user, side by side across checkpoints");
  std::vector<std::string> r_ckpts, r_names, r_history;
  std::string r_user, r_titles;
  std::size_t r_k = 0;
  report->add_option("--checkpoint", r_ckpts, "checkpoint, repeatable")->required();
  report->add_option("--name", r_names, "column name per checkpoint");
  report->add_option("--history", r_history, "splits forming the user's history, repeatable")->required();
  report->add_option("--user", r_user, "user token")->required();
  report->add_option("--titles", r_titles, "MovieLens movies.csv for item titles");
  report->add_option("--k", r_k, "list length (overrides eval.k)");
  add_common(report, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }
  for (auto* cmd : app.get_subcommands())
    if (cmd != compare && cmd->count("--seed")) common.seed_given = true;

  try {
    const CliConfig cfg = load_config(common);

    if (prepare->parsed()) {
      if (prep_input.empty() == prep_ratings.empty() || prep_ratings.empty() != prep_movies.empty())
        throw ConfigError("prepare: give either --input or both --ratings and --movies");
      const Corpus corpus =
          prep_input.empty() ? read_movielens(prep_ratings, prep_movies, cfg.movielens_threshold) : read_tsv(prep_input);
      const auto splits = temporal_split(corpus, cfg.split);
      fs::create_directories(prep_out);
      const fs::path dir(prep_out);
      write_tsv(splits.train, (dir / "train.tsv").string());
      write_tsv(splits.val, (dir / "val.tsv").string());
      write_tsv(splits.test, (dir / "test.tsv").string());
      const auto stats = compute_domain_stats(splits.train, cfg.train.sparsity);
      write_json({{"schema_version", kSchemaVersion},
                  {"corpus", corpus_summary(corpus)},
                  {"train", corpus_summary(splits.train)},
                  {"val", corpus_summary(splits.val)},
                  {"test", corpus_summary(splits.test)},
                  {"train_domain_stats", stats_json(stats)}},
                 (dir / "stats.json").string());
      std::cout << "train=" << splits.train.num_interactions() << " val=" << splits.val.num_interactions()
                << " test=" << splits.test.num_interactions() << " users=" << splits.train.num_users() << '\n';
    } else if (synth->parsed()) {
      const Corpus corpus = generate_synthetic(cfg.synth);
      write_tsv(corpus, synth_out);
      std::cout << "interactions=" << corpus.num_interactions() << " users=" << corpus.num_users()
                << " items=" << corpus.num_items() << '\n';
    } else if (weights->parsed()) {
      const Corpus corpus = read_tsv(w_train);
      const auto stats = compute_domain_stats(corpus, cfg.train.sparsity);
      const auto table = compute_weights(stats, cfg.train.sparsity, w_train);
      save_weight_table(table, w_out);
      if (!w_stats.empty())
        write_json({{"schema_version", kSchemaVersion}, {"domains", stats_json(stats)}}, w_stats);
      for (std::size_t d = 0; d < stats.size(); ++d)
        std::cout << stats.domains[d] << " f=" << stats.frequency[d] << " r=" << stats.user_ratio[d]
                  << " H=" << stats.entropy[d] << " s=" << stats.score[d] << " w=" << table.weights[d] << '\n';
    } else if (train->parsed()) {
      TrainConfig tc = cfg.train;
      if (!t_mode.empty()) tc.loss.mode = parse_loss_mode(t_mode);
      if (t_epochs > 0) tc.epochs = t_epochs;
      tc.verbose = !t_quiet;
      const Corpus train_corpus = read_tsv(t_train);
      std::optional<Corpus> val;
      if (!t_val.empty()) val = read_tsv(t_val);
      std::optional<TrainingState> resume;
      if (!t_resume.empty()) resume = load_checkpoint(t_resume);
      EpochCallback on_epoch;
      if (tc.checkpoint_every > 0) {
        on_epoch = [&](const TrainingState& s) {
          if (s.epoch % tc.checkpoint_every == 0) save_checkpoint(s, t_out + ".epoch" + std::to_string(s.epoch));
        };
      }
      auto state = fit(train_corpus, val ? &*val : nullptr, cfg.encoder, tc, resume ? &*resume : nullptr, on_epoch);
      state.record.checkpoint = t_out;
      save_checkpoint(state, t_out);
      write_json(to_json(state.record), t_record.empty() ? t_out + ".record.json" : t_record);
      if (!t_history.empty()) {
        std::ofstream out(t_history);
        if (!out) throw ValidationError("cannot write " + t_history);
        write_history_jsonl(state.record.weight_history, out);
      }
    } else if (evaluate->parsed()) {
      std::vector<TrainingState> runs;
      for (const auto& p : e_ckpts) runs.push_back(load_checkpoint(p));
      const auto history = read_corpora(e_history);
      const auto hp = pointers(history);
      const Corpus test = read_tsv(e_test);
      const std::string name = e_name.empty() ? runs.front().record.mode : e_name;
      const auto rep = evaluate_model(name, runs, hp, test, e_domains, e_k ? e_k : cfg.eval_k);
      save_eval_report(rep, e_out);
      if (!e_csv.empty()) {
        std::ofstream out(e_csv);
        if (!out) throw ValidationError("cannot write " + e_csv);
        write_eval_csv(rep, out);
      }
      write_eval_csv(rep, std::cout);
    } else if (compare->parsed()) {
      if (c_reports.size() < 2) {
        std::cerr << "compare: need at least two --report files\n" << compare->help();
        return kUsage;
      }
      std::vector<EvalReport> reports;
      for (const auto& p : c_reports) reports.push_back(load_eval_report(p));
      std::size_t base = 0;
      if (!c_baseline.empty()) {
        while (base < reports.size() && reports[base].model != c_baseline) ++base;
        if (base == reports.size()) throw ConfigError("compare: no report for baseline '" + c_baseline + "'");
      }
      const auto rows = compare_reports(reports, base);
      print_comparison(rows, std::cout);
      if (!c_out.empty()) write_json(to_json(rows), c_out);
    } else if (report->parsed()) {
      if (!r_names.empty() && r_names.size() != r_ckpts.size())
        throw ConfigError("report: need one --name per --checkpoint");
      const auto history = read_corpora(r_history);
      std::map<std::string, std::string> titles;
      if (!r_titles.empty()) {
        std::ifstream in(r_titles);
        if (!in) throw ValidationError("cannot open " + r_titles);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
          const auto fields = detail::split_csv(detail::chomp(line));
          if (fields && fields->size() >= 2) titles[(*fields)[0]] = (*fields)[1];
        }
      }
      std::vector<std::pair<std::string, RankedList>> columns;
      const Vocabulary* vocab = nullptr;
      std::vector<TrainingState> states;
      for (const auto& p : r_ckpts) states.push_back(load_checkpoint(p));
      for (std::size_t m = 0; m < states.size(); ++m) {
        const auto& s = states[m];
        std::vector<std::pair<std::int64_t, std::int32_t>> events;
        for (const auto& h : history) {
          if (const auto u = h.find_user(r_user)) {
            for (auto pos : h.user_sequence(*u))
              if (auto id = s.vocab.id(h.interaction(pos).item_id)) events.emplace_back(h.interaction(pos).timestamp, *id);
          }
        }
        if (events.empty()) throw ValidationError("report: user '" + r_user + "' has no known history");
        std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<std::int32_t> prefix;
        std::unordered_set<std::int32_t> exclude;
        for (const auto& [ts, id] : events) {
          prefix.push_back(id);
          exclude.insert(id);
        }
        const std::string name = r_names.empty() ? s.record.mode : r_names[m];
        columns.emplace_back(name, rank_topk(s.params, s.vocab, prefix, exclude, r_k ? r_k : cfg.eval_k, r_user));
        vocab = &s.vocab;
      }
      const auto describe = [&](const std::string& token) {
        std::string label = token;
        if (const auto t = titles.find(token); t != titles.end()) label = t->second;
        std::string ds;
        if (const auto id = vocab->id(token))
          for (const auto& d : vocab->domain_names_of(*id)) ds += (ds.empty() ? "" : "|") + d;
        return label + " [" + ds + "]";
      };
      std::cout << "user " << r_user << '\n';
      print_topk_table(columns, describe, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_data_error() ? kData : kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return 0;
}
