#pragma once

// Synthetic task planner and fleet generator: each task is one holding
// interval of the severity chain, and inspections happen every n_c tasks.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "prognos/bayes.hpp"
#include "prognos/ctmc.hpp"
#include "prognos/error.hpp"
#include "prognos/random.hpp"
#include "prognos/rld.hpp"

namespace prognos {

enum class TaskMode {
  ctmc,           // task duration = exponential holding time
  fixed_duration  // every task lasts `task_duration`; states follow the jump chain
};

struct PlannerOptions {
  TaskMode mode = TaskMode::ctmc;
  double task_duration = 1.0;       // fixed_duration mode
  double max_task_duration = 1e3;   // cap for long or absorbing holds
  std::optional<StateIndex> initial_state;  // default: draw from π (state 0 if reducible)
};

/// Stateful task generator. Capping a hold leaves the chain in the same
/// state, which is exact because holding times are memoryless.
class TaskPlanner {
public:
  TaskPlanner(const TaskSeverityModel& model, const PlannerOptions& opts, Engine& rng)
      : model_(&model), opts_(opts), chain_(JumpChain::from_generator(model.generator())) {
    if (!(opts.max_task_duration > 0.0))
      throw ValidationError("max_task_duration must be positive");
    if (opts.mode == TaskMode::fixed_duration && !(opts.task_duration > 0.0))
      throw ValidationError("task_duration must be positive");
    if (opts.initial_state) {
      if (*opts.initial_state >= model.size())
        throw ValidationError("unknown initial state");
      state_ = *opts.initial_state;
    } else if (model.size() > 1 && is_ergodic(model)) {
      const auto pi = stationary_distribution(model);
      state_ = draw_index(pi.probabilities, rng);
    }
  }

  Segment next(Engine& rng) {
    Segment task{state_, time_, time_};
    const double rate = chain_.exit_rate[state_];
    bool jump = false;
    if (opts_.mode == TaskMode::ctmc) {
      const double hold = rate > 0.0 ? std::exponential_distribution<double>(rate)(rng)
                                     : std::numeric_limits<double>::infinity();
      jump = hold <= opts_.max_task_duration;
      task.end = time_ + (jump ? hold : opts_.max_task_duration);
    } else {
      jump = rate > 0.0;
      task.end = time_ + opts_.task_duration;
    }
    if (jump)
      state_ = draw_index(chain_.jump_prob[state_], rng);
    time_ = task.end;
    return task;
  }

private:
  static StateIndex draw_index(std::span<const double> probs, Engine& rng) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    StateIndex last = 0;
    for (StateIndex j = 0; j < probs.size(); ++j) {
      if (probs[j] <= 0.0)
        continue;
      last = j;
      if (u < probs[j])
        return j;
      u -= probs[j];
    }
    return last;
  }

  const TaskSeverityModel* model_;
  PlannerOptions opts_;
  JumpChain chain_;
  StateIndex state_ = 0;
  double time_ = 0.0;
};

struct TaskSchedule {
  SeverityPath path;  // one segment per task
  std::size_t n_tasks() const { return path.size(); }
};

inline TaskSchedule simulate_task_planner(const TaskSeverityModel& model, std::size_t n_tasks, std::uint64_t seed,
                                          const PlannerOptions& opts = {}) {
  if (n_tasks < 1)
    throw ValidationError("n_tasks must be at least 1");
  Engine rng = make_engine(seed);
  TaskPlanner planner(model, opts, rng);
  std::vector<Segment> tasks;
  tasks.reserve(n_tasks);
  for (std::size_t k = 0; k < n_tasks; ++k)
    tasks.push_back(planner.next(rng));
  return {SeverityPath(std::move(tasks))};
}

struct NormalParameter {
  double mean = 0.0;
  double sd = 0.0;
};

struct FleetProfile {
  std::size_t n_robots = 25;
  NormalParameter alpha{0.1, 0.0};
  NormalParameter beta{0.05, 0.0};
  double gamma = 0.2;
  double threshold = 10.0;
  double initial = 0.0;
  double measurement_noise = 0.0;  // σ_m
  long long cycles_per_epoch = 10;
  double dt = 0.05;                // degradation grid step within a task (hours)
  std::size_t max_tasks = 1'000'000;
  PlannerOptions planner;

  void validate() const {
    if (n_robots < 1)
      throw ValidationError("n_robots must be at least 1");
    if (!(measurement_noise >= 0.0))
      throw ValidationError("measurement_noise must be non-negative");
    if (cycles_per_epoch < 1)
      throw ValidationError("cycles_per_epoch must be at least 1");
    if (!(dt > 0.0))
      throw ValidationError("dt must be positive");
    if (!(gamma >= 0.0))
      throw ValidationError("gamma must be non-negative");
    if (!(threshold > initial))
      throw ValidationError("threshold must exceed the initial accuracy");
    if (alpha.sd < 0.0 || beta.sd < 0.0)
      throw ValidationError("parameter standard deviations must be non-negative");
  }
};

struct RobotRun {
  std::size_t index = 0;
  double alpha = 0.0;
  double beta = 0.0;
  bool failed = false;
  double failure_time = std::numeric_limits<double>::infinity();  // L_f
  std::size_t tasks_run = 0;
  InspectionLog log;  // ends at the last inspection before failure
  std::vector<double> true_accuracy;  // noise-free A(c_k) per record
};

/// One robot under stream (seed, index). Degradation steps by profile.dt
/// inside each task with a shorter final step at the task boundary, so the
/// accuracy at every task completion is exact in law.
inline RobotRun simulate_robot(const FleetProfile& profile, const TaskSeverityModel& model, std::uint64_t seed,
                               std::size_t index) {
  Engine rng = make_engine(seed, index);
  std::normal_distribution<double> normal(0.0, 1.0);
  RobotRun run;
  run.index = index;
  run.alpha = profile.alpha.mean + profile.alpha.sd * normal(rng);
  run.beta = profile.beta.mean + profile.beta.sd * normal(rng);
  run.log.cycles_per_epoch = profile.cycles_per_epoch;
  run.log.epochs.push_back({0, 0, 0.0, profile.initial});
  run.true_accuracy.push_back(profile.initial);

  TaskPlanner planner(model, profile.planner, rng);
  std::vector<Segment> tasks;
  double a = profile.initial;
  while (run.tasks_run < profile.max_tasks) {
    const Segment task = planner.next(rng);
    const double rate = run.alpha * model.severity(task.state) + run.beta;
    double t = task.start;
    std::optional<double> hit;
    while (t < task.end) {
      const double h = std::min(profile.dt, task.end - t);
      const double next = a + rate * h + profile.gamma * std::sqrt(h) * normal(rng);
      if (next >= profile.threshold) {
        hit = t + (profile.threshold - a) / (next - a) * h;
        break;
      }
      a = next;
      t += h;
    }
    if (hit) {
      run.failed = true;
      run.failure_time = *hit;
      break;
    }
    tasks.push_back(task);
    ++run.tasks_run;
    if (run.tasks_run % static_cast<std::size_t>(profile.cycles_per_epoch) == 0) {
      const auto k = run.log.epochs.size();
      const double observed = a + (profile.measurement_noise > 0.0 ? profile.measurement_noise * normal(rng) : 0.0);
      run.log.epochs.push_back({k, static_cast<long long>(k) * profile.cycles_per_epoch, task.end, observed});
      run.true_accuracy.push_back(a);
    }
  }
  const double last = run.log.epochs.back().time;
  std::vector<Segment> observed;
  for (const auto& s : tasks) {
    if (s.start >= last)
      break;
    observed.push_back(s);
  }
  run.log.tasks = SeverityPath(std::move(observed));
  return run;
}

inline std::vector<RobotRun> simulate_fleet(const FleetProfile& profile, const TaskSeverityModel& model,
                                            std::uint64_t seed, unsigned jobs = 1) {
  profile.validate();
  if (!is_ergodic(model))
    throw NotErgodicError("fleet simulation requires an ergodic task-severity chain");
  std::vector<RobotRun> runs(profile.n_robots);
  detail::parallel_for(profile.n_robots, jobs,
                       [&](std::size_t r) { runs[r] = simulate_robot(profile, model, seed, r); });
  return runs;
}

/// Record indices of the latest inspections (k >= 1) at or before each
/// fraction of the realized lifetime.
inline std::vector<std::size_t> update_schedule(const InspectionLog& log, double failure_time,
                                                std::span<const double> fractions) {
  if (!std::isfinite(failure_time) || !(failure_time > 0.0))
    throw ValidationError("update schedule needs a finite failure time");
  std::vector<std::size_t> out;
  for (double f : fractions) {
    const double target = f * failure_time;
    std::optional<std::size_t> best;
    for (std::size_t k = 1; k < log.epochs.size(); ++k) {
      if (log.epochs[k].time <= target * (1.0 + 1e-12))
        best = k;
      else
        break;
    }
    if (!best)
      throw ValidationError("fraction " + std::to_string(f) + " of the lifetime precedes the first inspection");
    out.push_back(*best);
  }
  return out;
}

/// Log restricted to records [0, last] with the task history cut at t_last.
inline InspectionLog truncate_log(const InspectionLog& log, std::size_t last) {
  InspectionLog out;
  out.cycles_per_epoch = log.cycles_per_epoch;
  out.epochs.assign(log.epochs.begin(), log.epochs.begin() + static_cast<std::ptrdiff_t>(last + 1));
  const double t_end = out.epochs.back().time;
  std::vector<Segment> segs;
  for (auto s : log.tasks.segments()) {
    if (s.start >= t_end)
      break;
    s.end = std::min(s.end, t_end);
    segs.push_back(s);
  }
  out.tasks = SeverityPath(std::move(segs));
  return out;
}

}  // namespace prognos
