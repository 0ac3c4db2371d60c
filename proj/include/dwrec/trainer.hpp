#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dwrec/corpus.hpp"
#include "dwrec/encoder.hpp"
#include "dwrec/error.hpp"
#include "dwrec/loss.hpp"
#include "dwrec/optimizer.hpp"
#include "dwrec/rng.hpp"
#include "dwrec/scheduler.hpp"
#include "dwrec/sparsity.hpp"
#include "dwrec/vocabulary.hpp"

namespace dwrec {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 256;
  AdamWConfig optimizer;
  std::uint64_t seed = 1;
  LossConfig loss;
  SparsityConfig sparsity;
  ScheduleConfig schedule;
  int checkpoint_every = 0;  // 0: only the caller decides
  bool verbose = false;      // progress lines on stderr

  void validate() const {
    if (epochs < 1 || batch_size < 2) throw ConfigError("train: need epochs >= 1 and batch_size >= 2");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be non-negative");
    optimizer.validate();
    loss.validate();
    sparsity.validate();
    schedule.validate();
  }
};

inline nlohmann::json to_json(const LossConfig& c) {
  return {{"mode", to_string(c.mode)},       {"fixed_weight", c.fixed_weight},
          {"fixed_domains", c.fixed_domains}, {"horizon", c.horizon},
          {"temperature", c.temperature},    {"aggregation", to_string(c.aggregation)}};
}

inline LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  c.mode = parse_loss_mode(j.at("mode").get<std::string>());
  c.fixed_weight = j.at("fixed_weight").get<double>();
  c.fixed_domains = j.at("fixed_domains").get<std::vector<std::string>>();
  c.horizon = j.at("horizon").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.optimizer.learning_rate},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"epsilon", c.optimizer.epsilon},
          {"weight_decay", c.optimizer.weight_decay},
          {"seed", c.seed},
          {"loss", to_json(c.loss)},
          {"sparsity", to_json(c.sparsity)},
          {"schedule", {{"mu", c.schedule.mu}, {"update_period_epochs", c.schedule.update_period_epochs}}},
          {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.optimizer.learning_rate = j.at("learning_rate").get<double>();
  c.optimizer.beta1 = j.at("beta1").get<double>();
  c.optimizer.beta2 = j.at("beta2").get<double>();
  c.optimizer.epsilon = j.at("epsilon").get<double>();
  c.optimizer.weight_decay = j.at("weight_decay").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.loss = loss_config_from_json(j.at("loss"));
  c.sparsity = sparsity_config_from_json(j.at("sparsity"));
  c.schedule.mu = j.at("schedule").at("mu").get<double>();
  c.schedule.update_period_epochs = j.at("schedule").at("update_period_epochs").get<int>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  return c;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

// Hash of everything that shapes a run except the epoch budget, so a resumed
// run may extend training.
inline std::string config_hash(const EncoderConfig& enc, const TrainConfig& train) {
  auto t = to_json(train);
  t.erase("epochs");
  t.erase("checkpoint_every");
  const nlohmann::json j = {{"encoder", to_json(enc)}, {"train", t}};
  return hex64(fnv1a64(j.dump()));
}

struct RunRecord {
  std::string mode;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<double> epoch_losses;
  std::vector<double> val_losses;
  std::vector<double> wall_ms;
  std::optional<WeightTable> initial_weights;
  std::vector<WeightRecord> weight_history;
  std::vector<std::string> fixed_domains;
  std::string checkpoint;

  // Equality of everything except wall-clock timings.
  bool same_trajectory(const RunRecord& o) const {
    return mode == o.mode && seed == o.seed && config_hash == o.config_hash && epoch_losses == o.epoch_losses &&
           val_losses == o.val_losses && initial_weights == o.initial_weights && weight_history == o.weight_history &&
           fixed_domains == o.fixed_domains;
  }
};

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : r.weight_history) history.push_back({{"epoch", h.epoch}, {"table", to_json(h.table)}});
  return {{"schema_version", kSchemaVersion},
          {"mode", r.mode},
          {"seed", r.seed},
          {"config_hash", r.config_hash},
          {"epoch_losses", r.epoch_losses},
          {"val_losses", r.val_losses},
          {"wall_ms", r.wall_ms},
          {"initial_weights", r.initial_weights ? to_json(*r.initial_weights) : nlohmann::json(nullptr)},
          {"weight_history", history},
          {"fixed_domains", r.fixed_domains},
          {"checkpoint", r.checkpoint}};
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.mode = j.at("mode").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
  r.val_losses = j.at("val_losses").get<std::vector<double>>();
  r.wall_ms = j.at("wall_ms").get<std::vector<double>>();
  if (!j.at("initial_weights").is_null()) r.initial_weights = weight_table_from_json(j.at("initial_weights"));
  for (const auto& h : j.at("weight_history"))
    r.weight_history.push_back({h.at("epoch").get<int>(), weight_table_from_json(h.at("table"))});
  r.fixed_domains = j.at("fixed_domains").get<std::vector<std::string>>();
  r.checkpoint = j.value("checkpoint", std::string());
  return r;
}

// Everything needed to evaluate a model or resume its training.
struct TrainingState {
  EncoderConfig encoder_config;
  TrainConfig train_config;
  Vocabulary vocab;
  EncoderParams params;
  AdamW optimizer;
  std::optional<WeightSchedule> schedule;
  RunRecord record;
  int epoch = 0;  // last completed epoch
};

// Per-user chronological model-id sequences of a corpus.
inline std::vector<std::vector<std::int32_t>> user_item_sequences(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<std::vector<std::int32_t>> out(corpus.num_users());
  for (Corpus::Index u = 0; u < corpus.num_users(); ++u) {
    for (auto pos : corpus.user_sequence(u)) {
      const auto id = vocab.id(corpus.interaction(pos).item_id);
      if (id) out[u].push_back(*id);
    }
  }
  return out;
}

// One cut point per user, drawn from (seed, epoch, user); users visited in a
// (seed, epoch) shuffle.
inline std::vector<TrainingExample> epoch_examples(const Corpus& train, const Vocabulary& vocab,
                                                   const std::vector<std::vector<std::int32_t>>& sequences,
                                                   const EncoderConfig& enc, const LossConfig& loss,
                                                   std::uint64_t seed, int epoch) {
  std::vector<Corpus::Index> users;
  for (Corpus::Index u = 0; u < sequences.size(); ++u)
    if (sequences[u].size() >= 2) users.push_back(u);
  Rng order_rng = make_rng(seed, "shuffle", static_cast<std::uint64_t>(epoch));
  shuffle(users.begin(), users.end(), order_rng);

  std::vector<TrainingExample> out;
  out.reserve(users.size());
  for (auto u : users) {
    const auto& seq = sequences[u];
    Rng cut_rng = make_rng(seed, "cut", static_cast<std::uint64_t>(epoch), u);
    const auto cut = 1 + uniform_index(cut_rng, seq.size() - 1);
    const auto start = cut > static_cast<std::size_t>(enc.max_seq_len) ? cut - static_cast<std::size_t>(enc.max_seq_len) : 0;
    const auto stop = std::min(seq.size(), cut + static_cast<std::size_t>(loss.horizon));
    TrainingExample ex;
    ex.user = train.users()[u];
    ex.prefix.assign(seq.begin() + static_cast<std::ptrdiff_t>(start), seq.begin() + static_cast<std::ptrdiff_t>(cut));
    ex.positives.assign(seq.begin() + static_cast<std::ptrdiff_t>(cut), seq.begin() + static_cast<std::ptrdiff_t>(stop));
    for (auto p : ex.positives) ex.positive_domains.push_back(vocab.domains_of(p));
    out.push_back(std::move(ex));
  }
  return out;
}

// Consecutive chunks of `batch_size`; a trailing singleton joins the previous
// chunk since in-batch negatives need two examples.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t lo = 0; lo < n; lo += batch_size) out.emplace_back(lo, std::min(n, lo + batch_size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

inline std::vector<std::string> sparsest_domains(const DomainStats& stats) {
  if (stats.size() == 0) return {};
  const auto it = std::min_element(stats.frequency.begin(), stats.frequency.end());
  return {stats.domains[static_cast<std::size_t>(it - stats.frequency.begin())]};
}

using EpochCallback = std::function<void(const TrainingState&)>;

namespace detail {

inline double validation_loss(const Corpus& train, const Corpus& val, const Vocabulary& vocab,
                              const TrainingState& state) {
  std::vector<TrainingExample> examples;
  const auto& enc = state.encoder_config;
  for (Corpus::Index u = 0; u < val.num_users(); ++u) {
    const auto tu = train.find_user(val.users()[u]);
    if (!tu) continue;
    TrainingExample ex;
    ex.user = val.users()[u];
    for (auto pos : train.user_sequence(*tu))
      if (auto id = vocab.id(train.interaction(pos).item_id)) ex.prefix.push_back(*id);
    for (auto pos : val.user_sequence(u)) {
      if (ex.positives.size() >= static_cast<std::size_t>(state.train_config.loss.horizon)) break;
      if (auto id = vocab.id(val.interaction(pos).item_id)) {
        ex.positives.push_back(*id);
        ex.positive_domains.push_back(vocab.domains_of(*id));
      }
    }
    if (ex.prefix.empty() || ex.positives.empty()) continue;
    ex.prefix = truncate_recent(ex.prefix, enc.max_seq_len);
    examples.push_back(std::move(ex));
  }
  if (examples.size() < 2) return std::nan("");
  DomainWeights unweighted;
  double sum = 0.0;
  std::size_t batches = 0;
  for (auto [lo, hi] : batch_ranges(examples.size(), static_cast<std::size_t>(state.train_config.batch_size))) {
    std::span<const TrainingExample> batch(examples.data() + lo, hi - lo);
    try {
      sum += weighted_batch_loss(batch, state.params, unweighted, state.train_config.loss, 0, false, Mode::kEval).loss;
      ++batches;
    } catch (const DegenerateBatchError&) {
    }
  }
  return batches ? sum / static_cast<double>(batches) : std::nan("");
}

}  // namespace detail

// Full training run: Algorithm-1 weights on the training split, then
// shuffled cut-point epochs with AdamW and periodic EMA weight refresh.
// Passing `resume` continues from its last completed epoch.
inline TrainingState fit(const Corpus& train, const Corpus* val, EncoderConfig enc, const TrainConfig& config,
                         const TrainingState* resume = nullptr, const EpochCallback& on_epoch = {}) {
  config.validate();
  TrainingState state;
  if (resume) {
    state = *resume;
    if (!(state.vocab == Vocabulary::from_corpus(train)))
      throw CheckpointError("resume: training corpus does not match the checkpoint vocabulary");
    if (config_hash(state.encoder_config, config) != state.record.config_hash)
      throw CheckpointError("resume: configuration differs from the checkpoint");
    state.train_config = config;
  } else {
    state.vocab = Vocabulary::from_corpus(train);
    enc.vocab_size = state.vocab.vocab_size();
    enc.validate();
    state.encoder_config = enc;
    state.train_config = config;
    state.params = init_params(enc, config.seed);
    state.optimizer = AdamW(config.optimizer, enc);
    state.record.mode = to_string(config.loss.mode);
    state.record.seed = config.seed;
    state.record.config_hash = config_hash(enc, config);

    if (config.loss.mode == LossMode::kDynamic) {
      auto initial = compute_weights(compute_domain_stats(train, config.sparsity), config.sparsity, "train");
      state.record.initial_weights = initial;
      state.schedule = WeightSchedule(config.schedule, std::move(initial));
    } else if (config.loss.mode == LossMode::kFixed) {
      state.record.fixed_domains = config.loss.fixed_domains.empty()
                                       ? sparsest_domains(compute_domain_stats(train, config.sparsity))
                                       : config.loss.fixed_domains;
    }
  }

  LossConfig loss = config.loss;
  loss.fixed_domains = state.record.fixed_domains;
  const auto sequences = user_item_sequences(train, state.vocab);
  const auto& catalog = state.vocab.domains();
  WeightTable empty_table;
  auto resolve = [&] {
    return DomainWeights::resolve(catalog, state.schedule ? state.schedule->current() : empty_table, loss);
  };
  DomainWeights weights = resolve();

  for (int epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto examples = epoch_examples(train, state.vocab, sequences, state.encoder_config, loss, config.seed, epoch);
    const auto ranges = batch_ranges(examples.size(), static_cast<std::size_t>(config.batch_size));
    if (examples.size() < 2) throw ConfigError("train: fewer than two trainable users, no batches to build");

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < ranges.size(); ++bi) {
      const auto [lo, hi] = ranges[bi];
      std::span<const TrainingExample> batch(examples.data() + lo, hi - lo);
      auto result = weighted_batch_loss(batch, state.params, weights, loss,
                                        derive_seed(config.seed, "batch", static_cast<std::uint64_t>(epoch), bi));
      if (!std::isfinite(result.loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(bi));
      loss_sum += result.loss;
      state.optimizer.step(state.params, result.grads);
    }
    const double epoch_loss = loss_sum / static_cast<double>(ranges.size());

    if (state.schedule && state.schedule->should_update(epoch)) {
      const auto computed = compute_weights(compute_domain_stats(train, config.sparsity), config.sparsity, "train");
      state.schedule->update(epoch, computed);
      state.record.weight_history = state.schedule->history();
      weights = resolve();
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    state.epoch = epoch;
    state.record.epoch_losses.push_back(epoch_loss);
    state.record.wall_ms.push_back(ms);
    if (val) state.record.val_losses.push_back(detail::validation_loss(train, *val, state.vocab, state));
    if (config.verbose)
      std::cerr << "epoch=" << epoch << " loss=" << epoch_loss << " wall_ms=" << static_cast<long long>(ms) << '\n';
    if (on_epoch) on_epoch(state);
  }
  return state;
}

// ---------------------------------------------------------------------------
// Checkpoints: `<path>` holds the tensors, `<path>.json` the metadata.

inline constexpr char kCheckpointMagic[8] = {'D', 'W', 'R', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError("checkpoint: truncated tensor file");
  return v;
}

inline std::vector<std::pair<std::string, const Matrix*>> named_tensors(const TrainingState& s) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  s.params.for_each([&](const std::string& n, const Matrix& m) { out.emplace_back(n, &m); });
  s.optimizer.first_moment().for_each([&](const std::string& n, const Matrix& m) { out.emplace_back("adam_m." + n, &m); });
  s.optimizer.second_moment().for_each([&](const std::string& n, const Matrix& m) { out.emplace_back("adam_v." + n, &m); });
  return out;
}

}  // namespace detail

inline void save_checkpoint(const TrainingState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_pod(out, kCheckpointVersion);
  const auto tensors = detail::named_tensors(state);
  detail::write_pod(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(out, static_cast<std::uint64_t>(m->rows()));
    detail::write_pod(out, static_cast<std::uint64_t>(m->cols()));
    out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("failed writing " + path);

  nlohmann::json meta = {{"schema_version", kSchemaVersion},
                         {"format_version", kCheckpointVersion},
                         {"encoder", to_json(state.encoder_config)},
                         {"train", to_json(state.train_config)},
                         {"seed", state.train_config.seed},
                         {"epoch", state.epoch},
                         {"config_hash", state.record.config_hash},
                         {"optimizer_steps", state.optimizer.steps()},
                         {"vocabulary", state.vocab.to_json()},
                         {"record", to_json(state.record)}};
  if (state.schedule) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : state.schedule->history()) history.push_back({{"epoch", h.epoch}, {"table", to_json(h.table)}});
    meta["schedule"] = {{"mu", state.schedule->config().mu},
                        {"update_period_epochs", state.schedule->config().update_period_epochs},
                        {"current", to_json(state.schedule->current())},
                        {"history", history}};
  } else {
    meta["schedule"] = nullptr;
  }
  std::ofstream side(path + ".json");
  if (!side) throw CheckpointError("cannot write " + path + ".json");
  side << meta.dump(2) << '\n';
}

// Loads and validates a checkpoint. When `expected` is given its architecture
// fields must match the stored configuration.
inline TrainingState load_checkpoint(const std::string& path, const EncoderConfig* expected = nullptr) {
  std::ifstream side(path + ".json");
  if (!side) throw CheckpointError("cannot open " + path + ".json");
  nlohmann::json meta;
  TrainingState s;
  try {
    meta = nlohmann::json::parse(side);
    s.encoder_config = encoder_config_from_json(meta.at("encoder"));
    s.train_config = train_config_from_json(meta.at("train"));
    s.epoch = meta.at("epoch").get<int>();
    s.vocab = Vocabulary::from_json(meta.at("vocabulary"));
    s.record = run_record_from_json(meta.at("record"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ".json: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(path + ".json: " + e.what());
  }
  if (config_hash(s.encoder_config, s.train_config) != meta.at("config_hash").get<std::string>())
    throw CheckpointError("checkpoint: config hash mismatch");
  if (s.encoder_config.vocab_size != s.vocab.vocab_size())
    throw CheckpointError("checkpoint: vocabulary size does not match encoder config");
  if (expected) {
    EncoderConfig want = *expected;
    if (want.vocab_size == 0) want.vocab_size = s.encoder_config.vocab_size;
    if (!(want == s.encoder_config)) throw CheckpointError("checkpoint: encoder configuration mismatch");
  }

  s.params = EncoderParams::zeros(s.encoder_config);
  auto m = EncoderParams::zeros(s.encoder_config);
  auto v = EncoderParams::zeros(s.encoder_config);
  std::vector<std::pair<std::string, Matrix*>> slots;
  s.params.for_each([&](const std::string& n, Matrix& x) { slots.emplace_back(n, &x); });
  m.for_each([&](const std::string& n, Matrix& x) { slots.emplace_back("adam_m." + n, &x); });
  v.for_each([&](const std::string& n, Matrix& x) { slots.emplace_back("adam_v." + n, &x); });

  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + sizeof magic, kCheckpointMagic)) throw CheckpointError("checkpoint: bad magic");
  if (detail::read_pod<std::uint32_t>(in) != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version");
  if (detail::read_pod<std::uint32_t>(in) != slots.size()) throw CheckpointError("checkpoint: tensor count mismatch");
  for (auto& [name, dst] : slots) {
    const auto len = detail::read_pod<std::uint32_t>(in);
    std::string stored(len, '\0');
    in.read(stored.data(), len);
    const auto rows = detail::read_pod<std::uint64_t>(in);
    const auto cols = detail::read_pod<std::uint64_t>(in);
    if (!in || stored != name) throw CheckpointError("checkpoint: expected tensor " + name);
    if (rows != static_cast<std::uint64_t>(dst->rows()) || cols != static_cast<std::uint64_t>(dst->cols()))
      throw CheckpointError("checkpoint: shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(dst->data()), static_cast<std::streamsize>(dst->size() * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint: truncated tensor " + name);
  }
  s.optimizer = AdamW::restore(s.train_config.optimizer, std::move(m), std::move(v),
                               meta.at("optimizer_steps").get<std::uint64_t>());

  const auto& sched = meta.at("schedule");
  if (!sched.is_null()) {
    std::vector<WeightRecord> history;
    for (const auto& h : sched.at("history"))
      history.push_back({h.at("epoch").get<int>(), weight_table_from_json(h.at("table"))});
    s.schedule = WeightSchedule::restore({sched.at("mu").get<double>(), sched.at("update_period_epochs").get<int>()},
                                         weight_table_from_json(sched.at("current")), std::move(history));
  }
  return s;
}

}  // namespace dwrec
