#pragma once

// Position-accuracy degradation: Brownian motion whose drift is
// α·ψ(t) + β, and the inverse-Gaussian law of its first passage.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "prognos/ctmc.hpp"
#include "prognos/error.hpp"
#include "prognos/random.hpp"

namespace prognos {

struct DegradationModel {
  double alpha = 0.0;      // accuracy per severity-hour
  double beta = 0.0;       // accuracy per hour
  double gamma = 0.0;      // accuracy per sqrt(hour)
  double threshold = 0.0;  // D
  double initial = 0.0;    // A(0)

  /// γ = 0 is accepted here so the deterministic limit can be simulated;
  /// the closed-form RLD separately requires γ > 0.
  void validate() const {
    if (!std::isfinite(alpha) || !std::isfinite(beta))
      throw ValidationError("drift coefficients must be finite");
    if (!std::isfinite(gamma) || gamma < 0.0)
      throw ValidationError("gamma must be finite and non-negative");
    if (!(threshold > initial))
      throw ValidationError("threshold must exceed the initial accuracy");
  }
};

namespace detail {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// log(1 − Φ(y)), accurate far into the upper tail.
inline double log_normal_sf(double y) {
  if (y < 30.0)
    return std::log(0.5 * std::erfc(y / std::numbers::sqrt2));
  // Mills-ratio expansion; relative error below 1e-14 for y >= 30.
  const double y2 = y * y;
  const double series = 1.0 - 1.0 / y2 + 3.0 / (y2 * y2) - 15.0 / (y2 * y2 * y2) + 105.0 / (y2 * y2 * y2 * y2);
  return -0.5 * y2 - std::log(y) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

}  // namespace detail

/// Inverse-Gaussian distribution, parameterized by mean μ and shape λ.
class InverseGaussian {
public:
  InverseGaussian(double mean, double shape) : mean_(mean), shape_(shape) {
    if (!(mean > 0.0) || !std::isfinite(mean))
      throw ValidationError("inverse-Gaussian mean must be positive and finite");
    if (!(shape > 0.0))
      throw ValidationError("inverse-Gaussian shape must be positive");
  }

  double mean() const noexcept { return mean_; }
  double shape() const noexcept { return shape_; }
  double variance() const noexcept { return mean_ * mean_ * mean_ / shape_; }

  double pdf(double t) const {
    if (t <= 0.0)
      return 0.0;
    const double d = t - mean_;
    return std::sqrt(shape_ / (2.0 * std::numbers::pi * t * t * t)) *
           std::exp(-shape_ * d * d / (2.0 * mean_ * mean_ * t));
  }

  double cdf(double t) const {
    if (t < 0.0)
      throw ValidationError("cdf evaluated at negative time");
    if (t == 0.0)
      return 0.0;
    if (std::isinf(t))
      return 1.0;
    const double r = std::sqrt(shape_ / t);
    const double first = detail::normal_cdf(r * (t / mean_ - 1.0));
    const double log_second = 2.0 * shape_ / mean_ + detail::log_normal_sf(r * (t / mean_ + 1.0));
    const double value = first + std::exp(log_second);
    return std::min(1.0, std::max(0.0, value));
  }

  /// Inverse cdf to |F(t) − p| <= tol (safeguarded Newton inside a bracket).
  double quantile(double p, double tol = 1e-10) const {
    if (!(p > 0.0 && p < 1.0))
      throw ValidationError("quantile level must lie in (0, 1)");
    double lo = 0.0;
    double hi = mean_;
    while (cdf(hi) < p) {
      lo = hi;
      hi *= 2.0;
    }
    double t = std::min(std::max(mean_, lo), hi);
    for (int iter = 0; iter < 200; ++iter) {
      const double err = cdf(t) - p;
      if (std::abs(err) <= tol)
        return t;
      if (err > 0.0)
        hi = t;
      else
        lo = t;
      const double density = pdf(t);
      double next = density > 0.0 ? t - err / density : 0.5 * (lo + hi);
      if (!(next > lo && next < hi))
        next = 0.5 * (lo + hi);
      if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi)
        return next;
      t = next;
    }
    return t;
  }

  double median() const { return quantile(0.5); }

  /// One Michael–Schucany–Haas draw.
  double sample(Engine& rng) const {
    const double nu = std::normal_distribution<double>(0.0, 1.0)(rng);
    const double z = mean_ * nu * nu / (2.0 * shape_);
    const double x = mean_ / (1.0 + z + std::sqrt(z * z + 2.0 * z));
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return u <= mean_ / (mean_ + x) ? x : mean_ * mean_ / x;
  }

  std::vector<double> sample(std::uint64_t seed, std::size_t n) const {
    if (n == 0)
      throw ValidationError("sample count must be at least 1");
    Engine rng = make_engine(seed);
    std::vector<double> out(n);
    for (auto& v : out)
      v = sample(rng);
    return out;
  }

  friend bool operator==(const InverseGaussian&, const InverseGaussian&) = default;

private:
  double mean_;
  double shape_;
};

/// α·∫ψ + β·(t1 − t0) over the interval.
inline double drift_integral(double alpha, double beta, const SeverityPath& path,
                             std::span<const double> severity, double t0, double t1) {
  return alpha * integrated_severity(path, severity, t0, t1) + beta * (t1 - t0);
}

/// Accuracy samples on a uniform time grid.
struct DegradationPath {
  double dt = 0.0;
  std::vector<double> time;
  std::vector<double> accuracy;

  std::size_t size() const noexcept { return time.size(); }
  bool empty() const noexcept { return time.empty(); }
};

/// Simulates A(t) on the grid t_j = t_begin + j·dt covering the severity
/// path. Drift is integrated exactly per step; the diffusion increment is
/// γ·sqrt(dt)·Z.
inline DegradationPath simulate_degradation(const DegradationModel& model, const SeverityPath& severity_path,
                                            std::span<const double> severity, double dt,
                                            std::uint64_t seed) {
  if (!(dt > 0.0))
    throw ValidationError("dt must be positive");
  model.validate();
  if (severity_path.empty())
    throw ValidationError("severity path is empty");
  const double t_begin = severity_path.begin_time();
  const auto steps = static_cast<std::size_t>(std::floor(severity_path.span() / dt + 1e-9));
  Engine rng = make_engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double diffusion = model.gamma * std::sqrt(dt);

  DegradationPath out;
  out.dt = dt;
  out.time.reserve(steps + 1);
  out.accuracy.reserve(steps + 1);
  out.time.push_back(t_begin);
  out.accuracy.push_back(model.initial);
  double a = model.initial;
  for (std::size_t j = 1; j <= steps; ++j) {
    const double t0 = t_begin + static_cast<double>(j - 1) * dt;
    const double t1 = std::min(t_begin + static_cast<double>(j) * dt, severity_path.end_time());
    a += drift_integral(model.alpha, model.beta, severity_path, severity, t0, t1);
    if (diffusion > 0.0)
      a += diffusion * normal(rng);
    out.time.push_back(t1);
    out.accuracy.push_back(a);
  }
  return out;
}

/// First grid crossing of the threshold, refined by linear interpolation
/// inside the bracketing step.
inline std::optional<double> first_passage(const DegradationPath& path, double threshold) {
  if (path.empty())
    throw ValidationError("degradation path is empty");
  if (path.accuracy.front() >= threshold)
    return path.time.front();
  for (std::size_t j = 1; j < path.size(); ++j) {
    if (path.accuracy[j] >= threshold) {
      const double a0 = path.accuracy[j - 1];
      const double a1 = path.accuracy[j];
      const double frac = (threshold - a0) / (a1 - a0);
      return path.time[j - 1] + frac * (path.time[j] - path.time[j - 1]);
    }
  }
  return std::nullopt;
}

// Bridge crossing probabilities below e^-80 are treated as zero.
inline constexpr double kBridgeCutoff = 80.0;

/// Parameters of one streamed run: drift, diffusion, start and barrier.
struct PassageProblem {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double start = 0.0;
  double threshold = 0.0;
  double dt = 0.0;
  double horizon = 0.0;
};

/// Simulates severity and degradation together on the grid j·dt without
/// materializing either path, stopping at the first crossing. Returns none
/// when the horizon is reached first.
///
/// A step whose endpoints both stay below the barrier still counts as a
/// crossing with the Brownian-bridge probability exp(−2(D−a₀)(D−a₁)/(γ²h)),
/// placed at the step midpoint. Without this the grid misses excursions and
/// overstates lifetimes by about 0.58·γ·√dt / rate.
inline std::optional<double> stream_first_passage(const PassageProblem& pb, const JumpChain& chain,
                                                  std::span<const double> severity, StateIndex initial_state,
                                                  Engine& rng) {
  if (pb.start >= pb.threshold)
    return 0.0;
  CtmcSampler sampler(chain, initial_state);
  Segment seg = sampler.next(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const auto steps = static_cast<std::size_t>(std::ceil(pb.horizon / pb.dt - 1e-9));
  double a = pb.start;
  for (std::size_t j = 1; j <= steps; ++j) {
    const double t0 = static_cast<double>(j - 1) * pb.dt;
    const double t1 = std::min(static_cast<double>(j) * pb.dt, pb.horizon);
    double exposure = 0.0;
    double lo = t0;
    while (seg.end < t1) {
      exposure += severity[seg.state] * (seg.end - lo);
      lo = seg.end;
      seg = sampler.next(rng);
    }
    exposure += severity[seg.state] * (t1 - lo);
    const double h = t1 - t0;
    double next = a + pb.alpha * exposure + pb.beta * h;
    if (pb.gamma > 0.0)
      next += pb.gamma * std::sqrt(h) * normal(rng);
    if (next >= pb.threshold)
      return t0 + (pb.threshold - a) / (next - a) * h;
    if (pb.gamma > 0.0) {
      const double e = 2.0 * (pb.threshold - a) * (pb.threshold - next) / (pb.gamma * pb.gamma * h);
      if (e < kBridgeCutoff && uniform(rng) < std::exp(-e))
        return t0 + 0.5 * h;
    }
    a = next;
  }
  return std::nullopt;
}

}  // namespace prognos
