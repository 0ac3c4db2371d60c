#pragma once

#include <algorithm>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dwrec/error.hpp"
#include "dwrec/sparsity.hpp"

namespace dwrec {

// EMA refresh of the weight table, applied every `update_period_epochs`.
struct ScheduleConfig {
  double mu = 0.9;
  int update_period_epochs = 2;

  void validate() const {
    if (!(mu > 0.0 && mu < 1.0)) throw ConfigError("schedule: mu must lie in (0, 1)");
    if (update_period_epochs < 1) throw ConfigError("schedule: update period must be positive");
  }
};

inline bool should_update(int epoch, int update_period_epochs) {
  if (epoch < 1) throw ContractError("should_update: epochs are numbered from 1");
  if (update_period_epochs < 1) throw ConfigError("schedule: update period must be positive");
  return epoch % update_period_epochs == 0;
}

// mu * old + (1 - mu) * computed per domain, clipped to the bounds of `old`.
inline WeightTable ema_update(const WeightTable& old, const WeightTable& computed, double mu) {
  if (!(mu > 0.0 && mu < 1.0)) throw ConfigError("schedule: mu must lie in (0, 1)");
  if (old.domains != computed.domains) throw ScheduleError("ema_update: domain sets differ");
  WeightTable next = old;
  for (std::size_t k = 0; k < old.size(); ++k) {
    const double w = mu * old.weights[k] + (1.0 - mu) * computed.weights[k];
    next.weights[k] = std::clamp(w, old.config.w_min, old.config.w_max);
  }
  return next;
}

struct WeightRecord {
  int epoch = 0;
  WeightTable table;

  friend bool operator==(const WeightRecord&, const WeightRecord&) = default;
};

class WeightSchedule {
 public:
  WeightSchedule() = default;
  WeightSchedule(ScheduleConfig config, WeightTable initial) : config_(config), current_(std::move(initial)) {
    config_.validate();
  }

  const ScheduleConfig& config() const { return config_; }
  const WeightTable& current() const { return current_; }
  const std::vector<WeightRecord>& history() const { return history_; }

  bool should_update(int epoch) const { return dwrec::should_update(epoch, config_.update_period_epochs); }

  // Blends `computed` into the current table and records it under `epoch`.
  const WeightTable& update(int epoch, const WeightTable& computed) {
    if (!history_.empty() && epoch <= history_.back().epoch)
      throw ScheduleError("schedule: update epochs must be strictly increasing");
    current_ = ema_update(current_, computed, config_.mu);
    history_.push_back({epoch, current_});
    return current_;
  }

  // Restores a schedule from a checkpoint.
  static WeightSchedule restore(ScheduleConfig config, WeightTable current, std::vector<WeightRecord> history) {
    WeightSchedule s(config, std::move(current));
    s.history_ = std::move(history);
    return s;
  }

 private:
  ScheduleConfig config_;
  WeightTable current_;
  std::vector<WeightRecord> history_;
};

inline nlohmann::json to_json(const WeightRecord& r) {
  nlohmann::json weights = nlohmann::json::object();
  for (std::size_t k = 0; k < r.table.size(); ++k) weights[r.table.domains[k]] = r.table.weights[k];
  return {{"schema_version", kSchemaVersion}, {"epoch", r.epoch}, {"weights", weights}};
}

// One JSON object per line.
inline void write_history_jsonl(const std::vector<WeightRecord>& history, std::ostream& out) {
  for (const auto& r : history) out << to_json(r).dump() << '\n';
}

}  // namespace dwrec
