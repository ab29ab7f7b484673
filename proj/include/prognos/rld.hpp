#pragma once

// Remaining lifetime distribution: closed form through the effective
// (stationary-averaged) drift, and Monte-Carlo over posterior draws.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "prognos/bayes.hpp"
#include "prognos/ctmc.hpp"
#include "prognos/degradation.hpp"
#include "prognos/error.hpp"

namespace prognos {

/// μ_α·Σπ_iψ_i + μ_β.
inline double effective_rate(double mu_alpha, double mu_beta, std::span<const double> pi,
                             std::span<const double> severity) {
  validate_distribution(pi, severity.size());
  const double rate = mu_alpha * expected_severity(pi, severity) + mu_beta;
  if (!(rate > 0.0))
    throw DegenerateDriftError("effective degradation rate is not positive");
  return rate;
}

struct RldClosedForm {
  InverseGaussian distribution;
  double effective_rate;
  double residual_barrier;
};

inline RldClosedForm rld_approach1(double a_ck, double threshold, double rate, double gamma) {
  if (a_ck >= threshold)
    throw AlreadyFailedError("observed accuracy is already at or beyond the threshold");
  if (!(rate > 0.0))
    throw DegenerateDriftError("effective degradation rate is not positive");
  if (!(gamma > 0.0))
    throw ValidationError("gamma must be positive for the closed-form distribution");
  const double barrier = threshold - a_ck;
  return {InverseGaussian(barrier / rate, barrier * barrier / (gamma * gamma)), rate, barrier};
}

/// Censored first-passage sample. `failure_times` is sorted.
struct RldEmpirical {
  std::vector<double> failure_times;
  std::size_t censored = 0;
  double horizon = 0.0;
  std::size_t m_total = 0;

  double failure_fraction() const {
    return static_cast<double>(failure_times.size()) / static_cast<double>(m_total);
  }

  /// Defective empirical cdf: (#failures <= t) / M.
  double cdf(double t) const {
    const auto n = std::upper_bound(failure_times.begin(), failure_times.end(), t) - failure_times.begin();
    return static_cast<double>(n) / static_cast<double>(m_total);
  }
};

struct Approach2Options {
  std::size_t m_total = 10000;
  double horizon = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> dt;
  unsigned jobs = 1;
};

/// Rate used for the default grid: posterior mean drift under the model's
/// stationary mix (or the current state's severity for a reducible chain).
inline double reference_rate(const PosteriorState& post, const TaskSeverityModel& model, StateIndex current_state) {
  if (is_ergodic(model)) {
    const auto pi = stationary_distribution(model);
    return post.mu_alpha() * expected_severity(pi.probabilities, model.severity()) + post.mu_beta();
  }
  return post.mu_alpha() * model.severity(current_state) + post.mu_beta();
}

/// Grid step (D − a)/(1000 × rate).
inline double default_dt(double a_ck, double threshold, double rate) {
  if (!(rate > 0.0))
    throw DegenerateDriftError("cannot choose a default dt for a non-positive drift; pass dt explicitly");
  return (threshold - a_ck) / (1000.0 * rate);
}

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, jobs);
  if (jobs == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> workers;
  workers.reserve(jobs);
  for (unsigned w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
        fn(i);
    });
  }
}

}  // namespace detail

/// For each m: draw (α, β, q), simulate severity from the current state and
/// degradation from a_ck, and record the first passage or censor at the
/// horizon. Path m consumes only the stream (seed, m).
inline RldEmpirical rld_approach2(double a_ck, double threshold, const PosteriorState& post,
                                  const TaskSeverityModel& model, StateIndex current_state,
                                  const Approach2Options& opts) {
  if (opts.m_total < 1)
    throw ValidationError("M must be at least 1");
  if (!(opts.horizon > 0.0))
    throw ValidationError("horizon must be positive");
  if (a_ck >= threshold)
    throw AlreadyFailedError("observed accuracy is already at or beyond the threshold");
  if (current_state >= model.size())
    throw ValidationError("unknown current state");
  post.validate();
  const double dt = opts.dt ? *opts.dt : default_dt(a_ck, threshold, reference_rate(post, model, current_state));
  if (!(dt > 0.0))
    throw ValidationError("dt must be positive");

  const auto chol = psd_cholesky(post.cov);
  const auto model_chain = JumpChain::from_generator(model.generator());
  std::vector<double> times(opts.m_total, std::numeric_limits<double>::quiet_NaN());
  detail::parallel_for(opts.m_total, opts.jobs, [&](std::size_t m) {
    Engine rng = make_engine(opts.seed, m);
    const auto draw = draw_parameters(post, chol, rng);
    const PassageProblem pb{draw.alpha, draw.beta, post.gamma, a_ck, threshold, dt, opts.horizon};
    const auto hit = stream_first_passage(pb, draw.chain ? *draw.chain : model_chain, model.severity(),
                                          current_state, rng);
    if (hit)
      times[m] = *hit;
  });

  RldEmpirical out;
  out.horizon = opts.horizon;
  out.m_total = opts.m_total;
  for (double t : times) {
    if (std::isnan(t))
      ++out.censored;
    else
      out.failure_times.push_back(t);
  }
  std::sort(out.failure_times.begin(), out.failure_times.end());
  return out;
}

/// Converts hours to operational cycles using the observed epoch duration.
struct CycleScale {
  double epoch_hours = 0.0;
  long long cycles_per_epoch = 1;

  double to_cycles(double hours) const {
    return hours / epoch_hours * static_cast<double>(cycles_per_epoch);
  }
};

struct MedianRul {
  double hours = 0.0;
  std::optional<double> cycles;
};

inline MedianRul rul_median(const RldClosedForm& rld, std::optional<CycleScale> scale = std::nullopt) {
  MedianRul out{rld.distribution.median(), std::nullopt};
  if (scale)
    out.cycles = scale->to_cycles(out.hours);
  return out;
}

/// Interpolated sample median over all M paths, censored paths ranked last.
inline MedianRul rul_median(const RldEmpirical& rld, std::optional<CycleScale> scale = std::nullopt) {
  if (rld.m_total == 0)
    throw ValidationError("empty Monte-Carlo result");
  const double pos = 0.5 * static_cast<double>(rld.m_total - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  if (hi >= rld.failure_times.size())
    throw HorizonTooShortError("median is censored; extend the prediction horizon");
  const double frac = pos - static_cast<double>(lo);
  MedianRul out{rld.failure_times[lo] + frac * (rld.failure_times[hi] - rld.failure_times[lo]), std::nullopt};
  if (scale)
    out.cycles = scale->to_cycles(out.hours);
  return out;
}

struct WhatIfRow {
  std::vector<double> pi;
  MedianRul median;
  InverseGaussian distribution;
};

/// Closed-form RLD under each hypothesized future task mix.
inline std::vector<WhatIfRow> whatif(double mu_alpha, double mu_beta, double a_ck, double threshold, double gamma,
                                     std::span<const std::vector<double>> scenarios,
                                     std::span<const double> severity, std::optional<CycleScale> scale) {
  if (scenarios.empty())
    throw ValidationError("no what-if scenarios given");
  std::vector<WhatIfRow> rows;
  rows.reserve(scenarios.size());
  for (const auto& pi : scenarios) {
    const double rate = effective_rate(mu_alpha, mu_beta, pi, severity);
    const auto rld = rld_approach1(a_ck, threshold, rate, gamma);
    rows.push_back({pi, rul_median(rld, scale), rld.distribution});
  }
  return rows;
}

inline std::vector<WhatIfRow> whatif(const PosteriorState& post, double a_ck, double threshold,
                                     std::span<const std::vector<double>> scenarios,
                                     std::span<const double> severity, std::optional<CycleScale> scale) {
  return whatif(post.mu_alpha(), post.mu_beta(), a_ck, threshold, post.gamma, scenarios, severity, scale);
}

struct Lemma1Report {
  double expected_t1 = 0.0;
  double mean_t2 = 0.0;
  double se_t2 = 0.0;
  double jensen_gap = 0.0;  // mean_t2 − expected_t1
  double failure_fraction = 0.0;
  std::size_t m_total = 0;
  bool pass = false;    // mean_t2 >= expected_t1 − 2·SE
  bool strict = false;  // mean_t2 > expected_t1
};

struct Lemma1Options {
  std::size_t m_total = 5000;
  double horizon_multiplier = 50.0;
  std::uint64_t seed = 0;
  std::optional<double> dt;
  unsigned jobs = 1;
};

inline constexpr double kLemma1MinHorizonMultiplier = 20.0;
inline constexpr double kLemma1MinFailureFraction = 0.999;

/// Compares the Monte-Carlo mean lifetime against the closed-form mean under
/// the stationary task mix; the former should not fall below the latter.
inline Lemma1Report lemma1_check(const PosteriorState& post, const TaskSeverityModel& model,
                                 StateIndex current_state, double a_ck, double threshold,
                                 const Lemma1Options& opts) {
  const auto pi = stationary_distribution(model);
  const double rate = effective_rate(post.mu_alpha(), post.mu_beta(), pi.probabilities, model.severity());
  const auto t1 = rld_approach1(a_ck, threshold, rate, post.gamma);
  Lemma1Report rep;
  rep.expected_t1 = t1.distribution.mean();
  rep.m_total = opts.m_total;
  if (opts.horizon_multiplier < kLemma1MinHorizonMultiplier)
    throw HorizonTooShortError("excessive censoring: horizon must be at least 20 x E[T1]");

  Approach2Options a2{opts.m_total, opts.horizon_multiplier * rep.expected_t1, opts.seed, opts.dt, opts.jobs};
  const auto t2 = rld_approach2(a_ck, threshold, post, model, current_state, a2);
  rep.failure_fraction = t2.failure_fraction();
  if (rep.failure_fraction < kLemma1MinFailureFraction)
    throw HorizonTooShortError("excessive censoring: failure fraction below 0.999");

  const auto n = static_cast<double>(t2.failure_times.size());
  rep.mean_t2 = std::accumulate(t2.failure_times.begin(), t2.failure_times.end(), 0.0) / n;
  double ss = 0.0;
  for (double t : t2.failure_times)
    ss += (t - rep.mean_t2) * (t - rep.mean_t2);
  rep.se_t2 = std::sqrt(ss / (n - 1.0) / n);
  rep.jensen_gap = rep.mean_t2 - rep.expected_t1;
  rep.pass = rep.mean_t2 >= rep.expected_t1 - 2.0 * rep.se_t2;
  rep.strict = rep.mean_t2 > rep.expected_t1;
  return rep;
}

struct BenchmarkRow {
  std::size_t m_total = 0;
  double approach1_seconds = 0.0;
  double approach2_seconds = 0.0;
  double speedup = 0.0;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  double approach1_spread = 0.0;  // max/min of Approach 1 timings
  double approach2_r2 = 0.0;      // linear fit of Approach 2 time on M
};

struct BenchmarkOptions {
  std::vector<std::size_t> m_grid;
  double horizon_multiplier = 50.0;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::size_t approach1_reps = 2000;
};

/// Coefficient of determination of an ordinary least-squares line.
inline double linear_r2(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    return 0.0;
  return sxy * sxy / (sxx * syy);
}

/// Wall-clock of each approach, from inputs to median RUL, over an M grid.
inline BenchmarkReport benchmark(const PosteriorState& post, const TaskSeverityModel& model, StateIndex current_state,
                                 double a_ck, double threshold, std::span<const double> pi,
                                 const BenchmarkOptions& opts) {
  using clock = std::chrono::steady_clock;
  BenchmarkReport rep;
  const double rate = effective_rate(post.mu_alpha(), post.mu_beta(), pi, model.severity());
  const double horizon = opts.horizon_multiplier * (threshold - a_ck) / rate;
  volatile double sink = 0.0;
  std::vector<double> ms, t2s;
  for (const auto m : opts.m_grid) {
    BenchmarkRow row;
    row.m_total = m;
    const auto s1 = clock::now();
    for (std::size_t r = 0; r < opts.approach1_reps; ++r) {
      const double rr = effective_rate(post.mu_alpha(), post.mu_beta(), pi, model.severity());
      sink = sink + rul_median(rld_approach1(a_ck, threshold, rr, post.gamma)).hours;
    }
    row.approach1_seconds =
        std::chrono::duration<double>(clock::now() - s1).count() / static_cast<double>(opts.approach1_reps);

    const auto s2 = clock::now();
    const auto emp = rld_approach2(a_ck, threshold, post, model, current_state,
                                   {m, horizon, opts.seed, std::nullopt, opts.jobs});
    if (emp.failure_fraction() >= 0.5)
      sink = sink + rul_median(emp).hours;
    row.approach2_seconds = std::chrono::duration<double>(clock::now() - s2).count();
    row.speedup = row.approach2_seconds / row.approach1_seconds;
    ms.push_back(static_cast<double>(m));
    t2s.push_back(row.approach2_seconds);
    rep.rows.push_back(row);
  }
  if (!rep.rows.empty()) {
    const auto [lo, hi] = std::minmax_element(rep.rows.begin(), rep.rows.end(), [](const auto& a, const auto& b) {
      return a.approach1_seconds < b.approach1_seconds;
    });
    rep.approach1_spread = hi->approach1_seconds / lo->approach1_seconds;
  }
  rep.approach2_r2 = ms.size() >= 2 ? linear_r2(ms, t2s) : 0.0;
  return rep;
}

}  // namespace prognos
