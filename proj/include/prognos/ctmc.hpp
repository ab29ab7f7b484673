#pragma once

// Task-severity process: a finite continuous-time Markov chain whose state
// carries a scalar severity (e.g. payload mass). Time is in hours.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prognos/error.hpp"
#include "prognos/random.hpp"

namespace prognos {

using StateIndex = std::size_t;

struct GeneratorReport {
  bool ok = true;
  std::vector<std::string> failures;
};

/// Checks the row-sum and sign rules of a rate matrix. Throws on a shape
/// problem; every other defect is listed in the report.
inline GeneratorReport validate_generator(const Eigen::MatrixXd& q,
                                          std::size_t n_states,
                                          double row_tol = 1e-10) {
  if (q.rows() != q.cols())
    throw ValidationError("generator is not square");
  if (static_cast<std::size_t>(q.rows()) != n_states)
    throw ValidationError("generator has " + std::to_string(q.rows()) +
                          " rows but there are " + std::to_string(n_states) + " states");
  GeneratorReport report;
  auto fail = [&](std::string msg) {
    report.ok = false;
    report.failures.push_back(std::move(msg));
  };
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      const double v = q(i, j);
      if (!std::isfinite(v)) {
        fail("non-finite entry at (" + std::to_string(i) + "," + std::to_string(j) + ")");
        continue;
      }
      sum += v;
      if (i != j && v < 0.0)
        fail("negative off-diagonal at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      if (i == j && v > 0.0)
        fail("positive diagonal at (" + std::to_string(i) + "," + std::to_string(i) + ")");
    }
    if (std::abs(sum) > row_tol)
      fail("row " + std::to_string(i) + " sums to " + std::to_string(sum));
  }
  return report;
}

/// State space S, generator Q and severity map ψ. Immutable once built.
class TaskSeverityModel {
public:
  TaskSeverityModel(std::vector<std::string> states, Eigen::MatrixXd generator,
                    std::vector<double> severity)
      : states_(std::move(states)), generator_(std::move(generator)), severity_(std::move(severity)) {
    if (states_.empty())
      throw ValidationError("model needs at least one state");
    if (severity_.size() != states_.size())
      throw ValidationError("severity map must cover every state exactly once");
    for (std::size_t i = 0; i < states_.size(); ++i) {
      if (!std::isfinite(severity_[i]))
        throw ValidationError("severity of state '" + states_[i] + "' is not finite");
      for (std::size_t j = 0; j < i; ++j)
        if (states_[i] == states_[j])
          throw ValidationError("duplicate state '" + states_[i] + "'");
    }
    const auto report = validate_generator(generator_, states_.size());
    if (!report.ok)
      throw ValidationError("invalid generator: " + report.failures.front());
  }

  std::size_t size() const noexcept { return states_.size(); }
  const std::vector<std::string>& states() const noexcept { return states_; }
  const Eigen::MatrixXd& generator() const noexcept { return generator_; }
  std::span<const double> severity() const noexcept { return severity_; }
  double severity(StateIndex i) const { return severity_.at(i); }
  double exit_rate(StateIndex i) const { return -generator_(i, i); }

  StateIndex index_of(const std::string& name) const {
    const auto it = std::find(states_.begin(), states_.end(), name);
    if (it == states_.end())
      throw ValidationError("unknown state '" + name + "'");
    return static_cast<StateIndex>(it - states_.begin());
  }

private:
  std::vector<std::string> states_;
  Eigen::MatrixXd generator_;
  std::vector<double> severity_;
};

struct Segment {
  StateIndex state = 0;
  double start = 0.0;
  double end = 0.0;

  double length() const noexcept { return end - start; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Piecewise-constant realization of the severity process.
class SeverityPath {
public:
  SeverityPath() = default;
  explicit SeverityPath(std::vector<Segment> segments) : segments_(std::move(segments)) {
    for (std::size_t k = 0; k < segments_.size(); ++k) {
      const auto& s = segments_[k];
      if (!(s.end > s.start))
        throw ValidationError("segment " + std::to_string(k) + " has end_time <= start_time");
      if (k > 0 && s.start != segments_[k - 1].end)
        throw ValidationError("segment " + std::to_string(k) + " is not contiguous with its predecessor");
    }
  }

  bool empty() const noexcept { return segments_.empty(); }
  std::size_t size() const noexcept { return segments_.size(); }
  const std::vector<Segment>& segments() const noexcept { return segments_; }
  double begin_time() const { return segments_.empty() ? 0.0 : segments_.front().start; }
  double end_time() const { return segments_.empty() ? 0.0 : segments_.back().end; }
  double span() const { return end_time() - begin_time(); }

  /// Index of the segment containing t; right-continuous, and the final
  /// segment also owns its end point.
  std::size_t segment_at(double t) const {
    if (segments_.empty() || t < begin_time() || t > end_time())
      throw ValidationError("time " + std::to_string(t) + " outside path coverage");
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                               [](double v, const Segment& s) { return v < s.start; });
    return static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - segments_.begin()) - 1));
  }

  StateIndex state_at(double t) const { return segments_[segment_at(t)].state; }

  void append(const Segment& s) {
    if (!segments_.empty() && s.start != segments_.back().end)
      throw ValidationError("appended segment is not contiguous");
    if (!(s.end > s.start))
      throw ValidationError("appended segment has end_time <= start_time");
    segments_.push_back(s);
  }

  friend bool operator==(const SeverityPath&, const SeverityPath&) = default;

private:
  std::vector<Segment> segments_;
};

/// ∫_{t0}^{t1} ψ(ν) dν, summed exactly over the overlapped segments.
inline double integrated_severity(const SeverityPath& path, std::span<const double> severity,
                                  double t0, double t1) {
  if (t1 < t0)
    throw ValidationError("integration interval is reversed");
  if (path.empty() || t0 < path.begin_time() || t1 > path.end_time())
    throw ValidationError("interval outside path coverage");
  if (t0 == t1)
    return 0.0;
  const auto& segs = path.segments();
  double total = 0.0;
  for (std::size_t k = path.segment_at(t0); k < segs.size() && segs[k].start < t1; ++k) {
    const double lo = std::max(segs[k].start, t0);
    const double hi = std::min(segs[k].end, t1);
    if (hi > lo)
      total += severity[segs[k].state] * (hi - lo);
  }
  return total;
}

inline double time_average_severity(const SeverityPath& path, std::span<const double> severity) {
  if (path.empty() || path.span() <= 0.0)
    throw ValidationError("time average of a zero-length path");
  return integrated_severity(path, severity, path.begin_time(), path.end_time()) / path.span();
}

/// Strongly-connected check on the graph of strictly positive rates.
inline bool is_ergodic(const TaskSeverityModel& model) {
  const auto& q = model.generator();
  const auto n = static_cast<Eigen::Index>(model.size());
  auto reaches_all = [&](bool forward) {
    std::vector<char> seen(n, 0);
    std::vector<Eigen::Index> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double rate = forward ? q(i, j) : q(j, i);
        if (j != i && rate > 0.0 && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  return reaches_all(true) && reaches_all(false);
}

struct StationaryDistribution {
  std::vector<double> probabilities;

  std::size_t size() const noexcept { return probabilities.size(); }
  double operator[](std::size_t i) const { return probabilities[i]; }
};

/// Throws unless entries are non-negative and sum to one within `tol`.
inline void validate_distribution(std::span<const double> p, std::size_t n_states,
                                  double tol = 1e-10) {
  if (p.size() != n_states)
    throw ValidationError("distribution has " + std::to_string(p.size()) + " entries, expected " +
                          std::to_string(n_states));
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0)
      throw ValidationError("distribution entries must be finite and non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol)
    throw ValidationError("distribution sums to " + std::to_string(sum) + ", not 1");
}

/// Solves πQ = 0, Σπ = 1 by replacing the last balance equation with the
/// normalization row.
inline StationaryDistribution stationary_distribution(const TaskSeverityModel& model) {
  if (!is_ergodic(model))
    throw NotErgodicError("task-severity chain is not irreducible");
  const auto n = static_cast<Eigen::Index>(model.size());
  Eigen::MatrixXd a = model.generator().transpose();
  a.row(n - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(n - 1) = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible())
    throw ComputationError("stationary system is singular");
  Eigen::VectorXd pi = lu.solve(b);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (pi(i) < 0.0) {
      if (pi(i) < -1e-9)
        throw ComputationError("stationary solve produced a negative probability");
      pi(i) = 0.0;
    }
  }
  pi /= pi.sum();
  return {std::vector<double>(pi.data(), pi.data() + n)};
}

inline double expected_severity(std::span<const double> pi, std::span<const double> severity) {
  if (pi.size() != severity.size())
    throw ValidationError("distribution and severity map differ in size");
  return std::inner_product(pi.begin(), pi.end(), severity.begin(), 0.0);
}

/// Exit rates and jump probabilities of the embedded chain; the form in
/// which posterior draws of q are expressed.
struct JumpChain {
  std::vector<double> exit_rate;
  std::vector<std::vector<double>> jump_prob;

  static JumpChain from_generator(const Eigen::MatrixXd& q) {
    const auto n = static_cast<std::size_t>(q.rows());
    JumpChain chain{std::vector<double>(n, 0.0), std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0))};
    for (std::size_t i = 0; i < n; ++i) {
      double out = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i)
          out += q(i, j);
      chain.exit_rate[i] = out;
      if (out > 0.0)
        for (std::size_t j = 0; j < n; ++j)
          if (j != i)
            chain.jump_prob[i][j] = q(i, j) / out;
    }
    return chain;
  }

  Eigen::MatrixXd generator() const {
    const auto n = static_cast<Eigen::Index>(exit_rate.size());
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i)
          q(i, j) = exit_rate[i] * jump_prob[i][j];
      q(i, i) = -exit_rate[i];
    }
    return q;
  }
};

/// Draws holding intervals of a CTMC one at a time. A state with zero exit
/// rate yields a single infinite segment.
class CtmcSampler {
public:
  CtmcSampler(const JumpChain& chain, StateIndex initial, double t0 = 0.0)
      : chain_(&chain), state_(initial), time_(t0) {
    if (initial >= chain.exit_rate.size())
      throw ValidationError("unknown initial state " + std::to_string(initial));
  }

  Segment next(Engine& rng) {
    const double rate = chain_->exit_rate[state_];
    Segment seg{state_, time_, std::numeric_limits<double>::infinity()};
    if (rate > 0.0) {
      seg.end = time_ + std::exponential_distribution<double>(rate)(rng);
      state_ = draw_next(rng);
    }
    time_ = seg.end;
    return seg;
  }

private:
  StateIndex draw_next(Engine& rng) const {
    const auto& row = chain_->jump_prob[state_];
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    StateIndex last = state_;
    for (StateIndex j = 0; j < row.size(); ++j) {
      if (j == state_ || row[j] <= 0.0)
        continue;
      last = j;
      if (u < row[j])
        return j;
      u -= row[j];
    }
    return last;
  }

  const JumpChain* chain_;
  StateIndex state_;
  double time_;
};

/// Exact simulation on [0, horizon]; the final segment is truncated at the
/// horizon. Bitwise deterministic in (model, initial state, horizon, seed).
inline SeverityPath simulate_path(const JumpChain& chain, StateIndex initial_state, double horizon,
                                  std::uint64_t seed) {
  if (!(horizon > 0.0))
    throw ValidationError("horizon must be positive");
  Engine rng = make_engine(seed);
  CtmcSampler sampler(chain, initial_state);
  std::vector<Segment> segs;
  for (;;) {
    Segment s = sampler.next(rng);
    if (s.end >= horizon) {
      s.end = horizon;
      segs.push_back(s);
      break;
    }
    segs.push_back(s);
  }
  return SeverityPath(std::move(segs));
}

inline SeverityPath simulate_path(const TaskSeverityModel& model, StateIndex initial_state,
                                  double horizon, std::uint64_t seed) {
  if (initial_state >= model.size())
    throw ValidationError("unknown initial state " + std::to_string(initial_state));
  const auto chain = JumpChain::from_generator(model.generator());
  return simulate_path(chain, initial_state, horizon, seed);
}

/// Sufficient statistics for the CTMC likelihood: transition counts N_ij and
/// dwell times T_i.
struct TransitionStats {
  Eigen::MatrixXd counts;
  std::vector<double> dwell;

  static TransitionStats zeros(std::size_t n) {
    return {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
            std::vector<double>(n, 0.0)};
  }
  std::size_t size() const noexcept { return dwell.size(); }
  bool empty() const noexcept { return dwell.empty(); }
  double departures(std::size_t i) const { return counts.row(static_cast<Eigen::Index>(i)).sum(); }

  TransitionStats& operator+=(const TransitionStats& other) {
    if (other.size() != size())
      throw ValidationError("transition statistics differ in state count");
    counts += other.counts;
    for (std::size_t i = 0; i < dwell.size(); ++i)
      dwell[i] += other.dwell[i];
    return *this;
  }
};

/// Statistics restricted to the window [t0, t1): dwell overlap, plus every
/// jump whose time lies in the window. Additive over adjacent windows, and a
/// jump at t1 is left for the next window even when the path stops at t1.
inline TransitionStats transition_stats(const SeverityPath& path, std::size_t n_states, double t0,
                                        double t1) {
  auto stats = TransitionStats::zeros(n_states);
  const auto& segs = path.segments();
  for (std::size_t k = 0; k < segs.size(); ++k) {
    const auto& s = segs[k];
    if (s.state >= n_states)
      throw ValidationError("path references state " + std::to_string(s.state) + " outside model");
    const double lo = std::max(s.start, t0);
    const double hi = std::min(s.end, t1);
    if (hi > lo)
      stats.dwell[s.state] += hi - lo;
    if (k + 1 < segs.size() && s.end >= t0 && s.end < t1 && segs[k + 1].state != s.state)
      stats.counts(static_cast<Eigen::Index>(s.state), static_cast<Eigen::Index>(segs[k + 1].state)) += 1.0;
  }
  return stats;
}

inline TransitionStats transition_stats(const SeverityPath& path, std::size_t n_states) {
  return transition_stats(path, n_states, path.begin_time(), path.end_time());
}

struct GeneratorEstimate {
  Eigen::MatrixXd rates;
  TransitionStats stats;
  std::vector<bool> unidentifiable;  // states never visited
};

/// Maximum-likelihood rates q_ij = N_ij / T_i pooled over histories.
inline GeneratorEstimate estimate_generator(std::span<const SeverityPath> histories, std::size_t n_states) {
  auto stats = TransitionStats::zeros(n_states);
  for (const auto& h : histories)
    stats += transition_stats(h, n_states);
  const auto n = static_cast<Eigen::Index>(n_states);
  GeneratorEstimate est{Eigen::MatrixXd::Zero(n, n), stats, std::vector<bool>(n_states, false)};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (stats.dwell[i] <= 0.0) {
      est.unidentifiable[i] = true;
      continue;
    }
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i)
        est.rates(i, j) = stats.counts(i, j) / stats.dwell[i];
    est.rates(i, i) = -est.rates.row(i).sum();
  }
  return est;
}

/// π̂_i = T_i / Σ_j T_j.
inline StationaryDistribution empirical_proportions(std::span<const SeverityPath> histories,
                                                    std::size_t n_states) {
  if (histories.empty())
    throw ValidationError("no histories given");
  auto stats = TransitionStats::zeros(n_states);
  for (const auto& h : histories)
    stats += transition_stats(h, n_states);
  const double total = std::accumulate(stats.dwell.begin(), stats.dwell.end(), 0.0);
  if (!(total > 0.0))
    throw ValidationError("histories cover zero time");
  StationaryDistribution pi{stats.dwell};
  for (auto& p : pi.probabilities)
    p /= total;
  return pi;
}

}  // namespace prognos
