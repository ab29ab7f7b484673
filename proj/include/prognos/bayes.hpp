#pragma once

// Conjugate updating of the drift coefficients (α, β) from inspection
// increments, offline estimation of γ, and posterior draws of (α, β, q).

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prognos/ctmc.hpp"
#include "prognos/error.hpp"
#include "prognos/random.hpp"

namespace prognos {

struct InspectionRecord {
  std::size_t epoch = 0;
  long long cycles = 0;
  double time = 0.0;      // hours
  double accuracy = 0.0;  // observed A(c_k)

  friend bool operator==(const InspectionRecord&, const InspectionRecord&) = default;
};

/// Observations taken every `cycles_per_epoch` operational cycles, plus the
/// task history that produced them.
struct InspectionLog {
  std::vector<InspectionRecord> epochs;
  SeverityPath tasks;
  long long cycles_per_epoch = 1;

  void validate() const {
    if (cycles_per_epoch < 1)
      throw ValidationError("cycles_per_epoch must be at least 1");
    for (std::size_t k = 1; k < epochs.size(); ++k) {
      const auto& prev = epochs[k - 1];
      const auto& cur = epochs[k];
      if (cur.epoch != prev.epoch + 1)
        throw ValidationError("epoch indices must be consecutive at record " + std::to_string(k));
      if (cur.cycles - prev.cycles != cycles_per_epoch)
        throw ValidationError("cycle counts must increase by cycles_per_epoch at record " + std::to_string(k));
      if (!(cur.time > prev.time))
        throw ValidationError("inspection times must be strictly increasing at record " + std::to_string(k));
    }
    if (!epochs.empty() && epochs.size() > 1) {
      if (tasks.empty() || tasks.begin_time() > epochs.front().time || tasks.end_time() < epochs.back().time)
        throw ValidationError("task history does not cover the inspection window");
    }
  }

  /// Mean wall-clock hours between consecutive inspections.
  double mean_epoch_hours() const {
    if (epochs.size() < 2)
      throw ValidationError("need two inspections to measure epoch duration");
    return (epochs.back().time - epochs.front().time) / static_cast<double>(epochs.size() - 1);
  }
};

/// One inter-inspection observation ΔA ~ N(α·E + β·Δt, γ²·Δt).
struct Increment {
  double delta_a = 0.0;
  double exposure = 0.0;  // ∫ψ over the interval
  double dt = 0.0;
};

/// Increments between consecutive records in [first, last] (record indices).
inline std::vector<Increment> increments(const InspectionLog& log, std::span<const double> severity,
                                         std::size_t first, std::size_t last) {
  std::vector<Increment> out;
  for (std::size_t k = first + 1; k <= last && k < log.epochs.size(); ++k) {
    const auto& a = log.epochs[k - 1];
    const auto& b = log.epochs[k];
    out.push_back({b.accuracy - a.accuracy, integrated_severity(log.tasks, severity, a.time, b.time),
                   b.time - a.time});
  }
  return out;
}

inline std::vector<Increment> increments(const InspectionLog& log, std::span<const double> severity) {
  return log.epochs.empty() ? std::vector<Increment>{} : increments(log, severity, 0, log.epochs.size() - 1);
}

/// Gaussian belief over (α, β) with a fixed γ, and the CTMC counts used to
/// draw q. Empty `ctmc_stats` means q is held at the model generator.
struct PosteriorState {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = 1e4 * Eigen::Matrix2d::Identity();
  double gamma = 1.0;
  TransitionStats ctmc_stats;
  std::size_t last_epoch = 0;  // index of the last log record consumed

  double mu_alpha() const { return mean(0); }
  double mu_beta() const { return mean(1); }

  static PosteriorState diffuse(double gamma, std::size_t n_states, double variance = 1e4) {
    PosteriorState p;
    p.cov = variance * Eigen::Matrix2d::Identity();
    p.gamma = gamma;
    p.ctmc_stats = TransitionStats::zeros(n_states);
    return p;
  }

  /// Point mass at (α, β); q fixed at the model generator.
  static PosteriorState degenerate(double alpha, double beta, double gamma) {
    PosteriorState p;
    p.mean = {alpha, beta};
    p.cov.setZero();
    p.gamma = gamma;
    return p;
  }

  /// Symmetric positive semi-definite covariance, γ > 0. Zero covariance is
  /// allowed so that point-mass posteriors can be sampled.
  void validate() const {
    if (!(gamma > 0.0) || !std::isfinite(gamma))
      throw ValidationError("posterior gamma must be positive");
    if (!mean.allFinite() || !cov.allFinite())
      throw ValidationError("posterior has non-finite entries");
    if (std::abs(cov(0, 1) - cov(1, 0)) > 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
      throw ValidationError("posterior covariance is not symmetric");
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    const double scale = std::max(1e-300, cov(0, 0) * cov(1, 1));
    if (cov(0, 0) < 0.0 || cov(1, 1) < 0.0 || det < -1e-12 * scale)
      throw ValidationError("posterior covariance is not positive semi-definite");
  }
};

/// Conjugate bivariate-normal update with a batch of increments.
inline PosteriorState update_posterior(const PosteriorState& prior, std::span<const Increment> data) {
  prior.validate();
  if (data.empty())
    return prior;
  const double det0 = prior.cov.determinant();
  if (!(det0 > 0.0))
    throw ComputationError("prior covariance is singular; cannot update");
  Eigen::Matrix2d precision = prior.cov.inverse();
  Eigen::Vector2d info = precision * prior.mean;
  const double g2 = prior.gamma * prior.gamma;
  for (const auto& inc : data) {
    if (!(inc.dt > 0.0))
      throw ValidationError("increment has non-positive duration");
    const Eigen::Vector2d x(inc.exposure, inc.dt);
    const double w = 1.0 / (g2 * inc.dt);
    precision += w * x * x.transpose();
    info += w * inc.delta_a * x;
  }
  Eigen::LLT<Eigen::Matrix2d> llt(precision);
  if (llt.info() != Eigen::Success)
    throw ComputationError("posterior precision is not positive definite");
  PosteriorState post = prior;
  post.cov = llt.solve(Eigen::Matrix2d::Identity());
  post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
  post.mean = llt.solve(info);
  return post;
}

struct UpdateOptions {
  bool update_ctmc = true;
};

/// Consumes every record after `prior.last_epoch`. CTMC counts accumulate
/// over the same time window unless disabled.
inline PosteriorState update_posterior(const PosteriorState& prior, const InspectionLog& log,
                                       std::span<const double> severity, UpdateOptions opts = {}) {
  if (log.epochs.empty() || prior.last_epoch + 1 >= log.epochs.size())
    return prior;
  const auto data = increments(log, severity, prior.last_epoch, log.epochs.size() - 1);
  PosteriorState post = update_posterior(prior, std::span<const Increment>(data));
  if (opts.update_ctmc && !post.ctmc_stats.empty()) {
    post.ctmc_stats += transition_stats(log.tasks, post.ctmc_stats.size(),
                                        log.epochs[prior.last_epoch].time, log.epochs.back().time);
  }
  post.last_epoch = log.epochs.size() - 1;
  return post;
}

/// Weighted least-squares (weights 1/Δt) fit of one log's increments;
/// returns the coefficients, the weighted residual sum and the design rank.
struct DriftFit {
  Eigen::Vector2d coef = Eigen::Vector2d::Zero();
  double weighted_rss = 0.0;
  std::size_t n = 0;
  std::size_t rank = 0;
};

inline DriftFit fit_drift(std::span<const Increment> data) {
  DriftFit fit;
  fit.n = data.size();
  if (data.empty())
    return fit;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.size()), 2);
  Eigen::VectorXd y(static_cast<Eigen::Index>(data.size()));
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!(data[k].dt > 0.0))
      throw ValidationError("increment has non-positive duration");
    const double s = 1.0 / std::sqrt(data[k].dt);
    x(static_cast<Eigen::Index>(k), 0) = data[k].exposure * s;
    x(static_cast<Eigen::Index>(k), 1) = data[k].dt * s;
    y(static_cast<Eigen::Index>(k)) = data[k].delta_a * s;
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
  fit.coef = cod.solve(y);
  fit.rank = static_cast<std::size_t>(cod.rank());
  fit.weighted_rss = (y - x * fit.coef).squaredNorm();
  return fit;
}

/// Moment estimate of γ from standardized residuals pooled over historical
/// logs, each log fitted separately. Residual degrees of freedom are
/// n − rank per log.
inline double estimate_gamma(std::span<const InspectionLog> logs, std::span<const double> severity) {
  double rss = 0.0;
  std::size_t total = 0;
  std::size_t dof = 0;
  for (const auto& log : logs) {
    const auto data = increments(log, severity);
    total += data.size();
    if (data.size() < 2)
      continue;
    const auto fit = fit_drift(data);
    rss += fit.weighted_rss;
    dof += fit.n - fit.rank;
  }
  if (total < 3 || dof == 0)
    throw ValidationError("need at least 3 increments (and residual degrees of freedom) to estimate gamma");
  return std::sqrt(rss / static_cast<double>(dof));
}

struct ParameterDraw {
  double alpha = 0.0;
  double beta = 0.0;
  std::optional<JumpChain> chain;  // none: use the model generator
};

inline constexpr double kRatePriorShape = 1e-3;
inline constexpr double kRatePriorRate = 1e-3;

/// Lower factor of a PSD 2×2 matrix; tolerates exact zeros.
inline Eigen::Matrix2d psd_cholesky(const Eigen::Matrix2d& c) {
  if (c(0, 0) < 0.0 || c(1, 1) < 0.0)
    throw ValidationError("covariance has a negative variance");
  Eigen::Matrix2d l = Eigen::Matrix2d::Zero();
  l(0, 0) = std::sqrt(c(0, 0));
  l(1, 0) = l(0, 0) > 0.0 ? c(1, 0) / l(0, 0) : 0.0;
  const double rest = c(1, 1) - l(1, 0) * l(1, 0);
  if (rest < -1e-12 * std::max(1e-300, c(1, 1)))
    throw ValidationError("covariance is not positive semi-definite");
  l(1, 1) = std::sqrt(std::max(0.0, rest));
  return l;
}

/// Draws (α, β) from the Gaussian posterior and, when counts are present,
/// exit rates ~ Gamma(N_i + a₀, T_i + b₀) and jump probabilities
/// ~ Dirichlet(N_ij + 1).
inline ParameterDraw draw_parameters(const PosteriorState& post, const Eigen::Matrix2d& chol, Engine& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Vector2d z(normal(rng), normal(rng));
  const Eigen::Vector2d ab = post.mean + chol * z;
  ParameterDraw d{ab(0), ab(1), std::nullopt};
  if (!post.ctmc_stats.empty()) {
    const auto n = post.ctmc_stats.size();
    JumpChain chain{std::vector<double>(n, 0.0), std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0))};
    for (std::size_t i = 0; i < n; ++i) {
      if (n == 1)
        break;
      const double shape = post.ctmc_stats.departures(i) + kRatePriorShape;
      const double rate = post.ctmc_stats.dwell[i] + kRatePriorRate;
      chain.exit_rate[i] = std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i)
          continue;
        const double conc = post.ctmc_stats.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) + 1.0;
        chain.jump_prob[i][j] = std::gamma_distribution<double>(conc, 1.0)(rng);
        total += chain.jump_prob[i][j];
      }
      for (auto& p : chain.jump_prob[i])
        p /= total;
    }
    d.chain = std::move(chain);
  }
  return d;
}

/// M posterior draws; draw m depends only on (seed, m).
inline std::vector<ParameterDraw> sample_parameters(const PosteriorState& post, std::size_t m_total,
                                                    std::uint64_t seed) {
  if (m_total < 1)
    throw ValidationError("sample count must be at least 1");
  post.validate();
  const auto chol = psd_cholesky(post.cov);
  std::vector<ParameterDraw> out;
  out.reserve(m_total);
  for (std::size_t m = 0; m < m_total; ++m) {
    Engine rng = make_engine(seed, m);
    out.push_back(draw_parameters(post, chol, rng));
  }
  return out;
}

/// Central credible interval for coefficient `index` (0 = α, 1 = β).
inline std::pair<double, double> credible_interval(const PosteriorState& post, int index, double z = 1.959963984540054) {
  const double sd = std::sqrt(post.cov(index, index));
  return {post.mean(index) - z * sd, post.mean(index) + z * sd};
}

}  // namespace prognos
