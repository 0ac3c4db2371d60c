#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "dwrec/error.hpp"

namespace dwrec {

inline double mean(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Sample standard deviation (n - 1 denominator).
inline double sample_sd(std::span<const double> xs) {
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Two-sided 97.5% Student-t quantile.
inline double t_critical_975(double df) {
  return boost::math::quantile(boost::math::students_t_distribution<double>(df), 0.975);
}

inline double two_sided_p(double t, double df) {
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(df), std::abs(t)));
}

// Half-width of the 95% confidence interval of the mean; needs two samples.
inline std::optional<double> ci95_half_width(std::span<const double> xs) {
  if (xs.size() < 2) return std::nullopt;
  return t_critical_975(static_cast<double>(xs.size() - 1)) * sample_sd(xs) / std::sqrt(static_cast<double>(xs.size()));
}

inline double bonferroni(double p, std::size_t comparisons) {
  return std::min(1.0, p * static_cast<double>(comparisons));
}

// Paired comparison of b against a (differences b - a).
struct PairedStats {
  std::string a, b;
  std::size_t n = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  std::optional<double> t;           // empty when the differences have zero variance
  std::optional<double> p;           // two-sided, df = n - 1
  std::optional<double> p_adjusted;  // Bonferroni, capped at 1
  std::optional<double> cohens_d;    // mean / sd of differences
  bool infinite_effect = false;      // zero variance with a non-zero mean
  double ci_low = 0.0, ci_high = 0.0;
};

inline PairedStats paired_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw MetricError("paired_test: samples are not run-aligned");
  if (a.size() < 2) throw MetricError("paired_test: need at least two aligned runs");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = b[i] - a[i];
  PairedStats s;
  s.n = diff.size();
  s.mean_diff = mean(diff);
  s.sd_diff = sample_sd(diff);
  const double df = static_cast<double>(s.n - 1);
  const double se = s.sd_diff / std::sqrt(static_cast<double>(s.n));
  const double half = t_critical_975(df) * se;
  s.ci_low = s.mean_diff - half;
  s.ci_high = s.mean_diff + half;
  if (s.sd_diff > 0.0) {
    s.t = s.mean_diff / se;
    s.p = two_sided_p(*s.t, df);
    s.cohens_d = s.mean_diff / s.sd_diff;
  } else {
    s.infinite_effect = s.mean_diff != 0.0;
  }
  return s;
}

// All model pairs, Bonferroni-corrected over the number of pairs.
inline std::vector<PairedStats> significance_suite(
    const std::vector<std::pair<std::string, std::vector<double>>>& samples) {
  std::vector<PairedStats> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      auto s = paired_test(samples[i].second, samples[j].second);
      s.a = samples[i].first;
      s.b = samples[j].first;
      out.push_back(std::move(s));
    }
  }
  for (auto& s : out)
    if (s.p) s.p_adjusted = bonferroni(*s.p, out.size());
  return out;
}

// Relative lift of `value` over `baseline`, in percent.
inline double lift_percent(double baseline, double value) {
  if (baseline == 0.0) throw MetricError("lift: baseline is zero");
  return (value / baseline - 1.0) * 100.0;
}

}  // namespace dwrec
