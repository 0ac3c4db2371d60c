#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dwrec/encoder.hpp"
#include "dwrec/error.hpp"

namespace dwrec {

struct AdamWConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("optimizer: moment decays must lie in [0, 1)");
    if (!(epsilon > 0.0) || weight_decay < 0.0) throw ConfigError("optimizer: invalid epsilon or weight decay");
  }
};

// Adam with decoupled weight decay. Moments mirror the parameter tensors.
class AdamW {
 public:
  AdamW() = default;
  AdamW(AdamWConfig config, const EncoderConfig& shape)
      : config_(config), m_(EncoderParams::zeros(shape)), v_(EncoderParams::zeros(shape)) {
    config_.validate();
  }

  void step(EncoderParams& params, const EncoderParams& grads) {
    ++steps_;
    const double lr = config_.learning_rate;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    std::vector<Matrix*> p, m, v;
    std::vector<const Matrix*> g;
    params.for_each([&](const std::string&, Matrix& x) { p.push_back(&x); });
    m_.for_each([&](const std::string&, Matrix& x) { m.push_back(&x); });
    v_.for_each([&](const std::string&, Matrix& x) { v.push_back(&x); });
    grads.for_each([&](const std::string&, const Matrix& x) { g.push_back(&x); });
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto pa = p[i]->array();
      auto ma = m[i]->array();
      auto va = v[i]->array();
      const auto ga = g[i]->array();
      ma = config_.beta1 * ma + (1.0 - config_.beta1) * ga;
      va = config_.beta2 * va + (1.0 - config_.beta2) * ga.square();
      pa -= lr * config_.weight_decay * pa;
      pa -= lr * (ma / c1) / ((va / c2).sqrt() + config_.epsilon);
    }
    ++params.version;
  }

  const AdamWConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }
  const EncoderParams& first_moment() const { return m_; }
  const EncoderParams& second_moment() const { return v_; }

  static AdamW restore(AdamWConfig config, EncoderParams m, EncoderParams v, std::uint64_t steps) {
    AdamW opt;
    opt.config_ = config;
    opt.m_ = std::move(m);
    opt.v_ = std::move(v);
    opt.steps_ = steps;
    return opt;
  }

 private:
  AdamWConfig config_;
  EncoderParams m_, v_;
  std::uint64_t steps_ = 0;
};

}  // namespace dwrec
