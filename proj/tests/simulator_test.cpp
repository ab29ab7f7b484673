#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "prognos/simulator.hpp"
#include "support/stats.hpp"

namespace prognos {
namespace {

TaskSeverityModel single_state(double psi) {
  return TaskSeverityModel({"only"}, Eigen::MatrixXd::Zero(1, 1), {psi});
}

TaskSeverityModel two_state(double to_heavy, double to_light) {
  return TaskSeverityModel({"light", "heavy"},
                           (Eigen::MatrixXd(2, 2) << -to_heavy, to_heavy, to_light, -to_light).finished(), {1.0, 5.0});
}

InspectionLog grid_log(double step, std::size_t n, double first = -1.0) {
  InspectionLog log;
  log.cycles_per_epoch = 10;
  log.epochs.push_back({0, 0, 0.0, 0.0});
  double t = first > 0.0 ? first : step;
  for (std::size_t k = 1; k <= n; ++k, t += step)
    log.epochs.push_back({k, static_cast<long long>(k) * 10, t, 0.1 * static_cast<double>(k)});
  log.tasks = SeverityPath({{0, 0.0, log.epochs.back().time}});
  return log;
}

TEST(TaskPlanner, SingleStateTaskIsCappedHold) {
  PlannerOptions opts;
  opts.max_task_duration = 250.0;
  const auto s = simulate_task_planner(single_state(3.0), 1, 1, opts);
  ASSERT_EQ(s.n_tasks(), 1u);
  EXPECT_EQ(s.path.segments()[0].end - s.path.segments()[0].start, 250.0);
}

TEST(TaskPlanner, TwoStateProportions) {
  const auto model = two_state(1.0, 2.0);
  const auto s = simulate_task_planner(model, 10000, 4);
  ASSERT_EQ(s.n_tasks(), 10000u);
  std::size_t heavy_tasks = 0;
  for (const auto& seg : s.path.segments())
    heavy_tasks += seg.state;
  // embedded jump chain of a 2-state CTMC alternates: [1/2, 1/2]
  EXPECT_NEAR(static_cast<double>(heavy_tasks) / 1e4, 0.5, 0.001);
  const auto stats = transition_stats(s.path, 2);
  const double total = stats.dwell[0] + stats.dwell[1];
  EXPECT_NEAR(stats.dwell[0] / total, 2.0 / 3.0, 0.02);
  for (std::size_t k = 1; k < s.path.size(); ++k)
    EXPECT_NE(s.path.segments()[k].state, s.path.segments()[k - 1].state);
}

TEST(TaskPlanner, SameSeedSameTasks) {
  const auto model = two_state(1.0, 2.0);
  const auto a = simulate_task_planner(model, 500, 12);
  const auto b = simulate_task_planner(model, 500, 12);
  const auto c = simulate_task_planner(model, 500, 13);
  ASSERT_EQ(a.path.size(), b.path.size());
  for (std::size_t k = 0; k < a.path.size(); ++k) {
    EXPECT_EQ(a.path.segments()[k].state, b.path.segments()[k].state);
    EXPECT_EQ(a.path.segments()[k].end, b.path.segments()[k].end);
  }
  EXPECT_NE(a.path.end_time(), c.path.end_time());
  EXPECT_THROW(simulate_task_planner(model, 0, 1), ValidationError);
}

TEST(TaskPlanner, FixedDurationMode) {
  PlannerOptions opts;
  opts.mode = TaskMode::fixed_duration;
  opts.task_duration = 0.5;
  opts.initial_state = 1;
  const auto s = simulate_task_planner(two_state(1.0, 2.0), 20, 3, opts);
  EXPECT_EQ(s.path.segments()[0].state, 1u);
  for (std::size_t k = 0; k < s.path.size(); ++k)
    EXPECT_DOUBLE_EQ(s.path.segments()[k].end - s.path.segments()[k].start, 0.5);
  EXPECT_NEAR(s.path.end_time(), 10.0, 1e-12);
  opts.task_duration = 0.0;
  EXPECT_THROW(simulate_task_planner(two_state(1.0, 2.0), 20, 3, opts), ValidationError);
}

TEST(TaskPlanner, CapKeepsTheState) {
  PlannerOptions opts;
  opts.max_task_duration = 0.05;
  opts.initial_state = 0;
  const auto s = simulate_task_planner(two_state(1.0, 2.0), 2000, 5, opts);
  std::size_t repeats = 0;
  for (std::size_t k = 1; k < s.path.size(); ++k) {
    EXPECT_LE(s.path.segments()[k].end - s.path.segments()[k].start, 0.05 + 1e-15);
    repeats += s.path.segments()[k].state == s.path.segments()[k - 1].state;
  }
  EXPECT_GT(repeats, 1000u);
  // memoryless cap: time shares unchanged
  const auto stats = transition_stats(s.path, 2);
  EXPECT_NEAR(stats.dwell[0] / (stats.dwell[0] + stats.dwell[1]), 2.0 / 3.0, 0.05);
}

TEST(SimulateFleet, NoiselessSingleStateLifetimeIsExact) {
  FleetProfile p;
  p.n_robots = 3;
  p.gamma = 0.0;
  p.threshold = 10.0;
  p.initial = 1.0;
  p.planner.max_task_duration = 0.7;
  const auto runs = simulate_fleet(p, single_state(3.0), 8);
  for (const auto& r : runs) {
    ASSERT_TRUE(r.failed);
    EXPECT_NEAR(r.failure_time, 9.0 / 0.35, 1e-9);
    EXPECT_LT(r.log.epochs.back().time, r.failure_time);
    EXPECT_EQ(r.log.epochs.back().time, r.log.tasks.end_time());
    for (std::size_t k = 0; k < r.log.epochs.size(); ++k) {
      EXPECT_NEAR(r.log.epochs[k].accuracy, 1.0 + 0.35 * r.log.epochs[k].time, 1e-9);
      EXPECT_EQ(r.log.epochs[k].cycles, static_cast<long long>(k) * 10);
    }
    r.log.validate();
  }
}

TEST(SimulateFleet, ReproducibleAndIndependentOfJobs) {
  FleetProfile p;
  p.alpha = {0.1, 0.02};
  p.beta = {0.05, 0.01};
  const auto model = two_state(1.0, 2.0);
  const auto a = simulate_fleet(p, model, 7, 1);
  const auto b = simulate_fleet(p, model, 7, 3);
  ASSERT_EQ(a.size(), 25u);
  for (std::size_t r = 0; r < a.size(); ++r) {
    EXPECT_EQ(a[r].alpha, b[r].alpha);
    EXPECT_EQ(a[r].failure_time, b[r].failure_time);
    EXPECT_EQ(a[r].log.epochs, b[r].log.epochs);
    EXPECT_TRUE(a[r].failed);
  }
  EXPECT_NE(a[0].alpha, a[1].alpha);
}

TEST(SimulateFleet, MeasurementNoiseHasRequestedSpread) {
  FleetProfile p;
  p.n_robots = 20;
  p.measurement_noise = 0.3;
  p.cycles_per_epoch = 2;
  p.threshold = 80.0;
  std::vector<double> err;
  for (const auto& r : simulate_fleet(p, two_state(1.0, 2.0), 3))
    for (std::size_t k = 1; k < r.log.epochs.size(); ++k)
      err.push_back(r.log.epochs[k].accuracy - r.true_accuracy[k]);
  ASSERT_GT(err.size(), 2000u);
  EXPECT_NEAR(std::sqrt(testing::variance_of(err)), 0.3, 0.015);
  EXPECT_NEAR(testing::mean_of(err), 0.0, 0.02);
}

TEST(SimulateFleet, TaskCapFlagsNonFailingRobots) {
  FleetProfile p;
  p.n_robots = 2;
  p.max_tasks = 50;
  p.threshold = 1e6;
  for (const auto& r : simulate_fleet(p, two_state(1.0, 2.0), 3)) {
    EXPECT_FALSE(r.failed);
    EXPECT_TRUE(std::isinf(r.failure_time));
    EXPECT_EQ(r.tasks_run, 50u);
    EXPECT_EQ(r.log.epochs.size(), 6u);
  }
}

TEST(SimulateFleet, Preconditions) {
  const TaskSeverityModel absorbing({"a", "b"}, (Eigen::MatrixXd(2, 2) << -1, 1, 0, 0).finished(), {1.0, 5.0});
  FleetProfile p;
  EXPECT_THROW(simulate_fleet(p, absorbing, 1), NotErgodicError);
  p.n_robots = 0;
  EXPECT_THROW(simulate_fleet(p, two_state(1, 2), 1), ValidationError);
  p.n_robots = 1;
  p.measurement_noise = -1.0;
  EXPECT_THROW(simulate_fleet(p, two_state(1, 2), 1), ValidationError);
  p.measurement_noise = 0.0;
  p.cycles_per_epoch = 0;
  EXPECT_THROW(simulate_fleet(p, two_state(1, 2), 1), ValidationError);
}

TEST(SimulateFleet, HeavierMixFailsSooner) {
  FleetProfile p;
  p.alpha = {0.1, 0.01};
  p.beta = {0.05, 0.005};
  auto median_lf = [&](const TaskSeverityModel& m) {
    std::vector<double> lf;
    for (const auto& r : simulate_fleet(p, m, 31))
      lf.push_back(r.failure_time);
    std::nth_element(lf.begin(), lf.begin() + 12, lf.end());
    return lf[12];
  };
  EXPECT_LT(median_lf(two_state(2.0, 1.0)), median_lf(two_state(1.0, 2.0)));
}

TEST(UpdateSchedule, GridExamples) {
  const auto log = grid_log(10.0, 9);
  const std::vector<double> f{0.3, 0.5, 0.7, 0.9};
  auto times = [&](double lf) {
    std::vector<double> t;
    for (auto k : update_schedule(log, lf, f))
      t.push_back(log.epochs[k].time);
    return t;
  };
  EXPECT_EQ(times(100.0), (std::vector<double>{30, 50, 70, 90}));
  EXPECT_EQ(times(95.0), (std::vector<double>{20, 40, 60, 80}));

  const auto late = grid_log(10.0, 8, 20.0);
  const std::vector<double> early{0.1};
  EXPECT_THROW(update_schedule(late, 100.0, early), ValidationError);
  EXPECT_THROW(update_schedule(log, std::numeric_limits<double>::infinity(), f), ValidationError);
}

TEST(TruncateLog, CutsRecordsAndTasks) {
  FleetProfile p;
  p.n_robots = 1;
  const auto run = simulate_robot(p, two_state(1.0, 2.0), 2, 0);
  ASSERT_GT(run.log.epochs.size(), 5u);
  const auto cut = truncate_log(run.log, 4);
  EXPECT_EQ(cut.epochs.size(), 5u);
  EXPECT_EQ(cut.tasks.end_time(), cut.epochs.back().time);
  cut.validate();
}

TEST(Pipeline, RelativeErrorShrinksTowardFailure) {
  const auto model = two_state(1.0, 2.0);
  FleetProfile p;
  p.alpha = {0.1, 0.01};
  p.beta = {0.05, 0.005};
  p.gamma = 0.2;
  p.threshold = 10.0;
  p.cycles_per_epoch = 2;
  const auto runs = simulate_fleet(p, model, 77);
  const auto pi = stationary_distribution(model);
  const std::vector<double> f{0.3, 0.9};
  double err30 = 0.0, err90 = 0.0;
  for (const auto& r : runs) {
    const auto pts = update_schedule(r.log, r.failure_time, f);
    std::vector<double> errs;
    for (auto k : pts) {
      const auto log = truncate_log(r.log, k);
      const auto post = update_posterior(PosteriorState::diffuse(p.gamma, 2), log, model.severity());
      const double rate = effective_rate(post.mu_alpha(), post.mu_beta(), pi.probabilities, model.severity());
      const double pred = rul_median(rld_approach1(log.epochs.back().accuracy, p.threshold, rate, p.gamma)).hours;
      const double truth = r.failure_time - log.epochs.back().time;
      errs.push_back(std::abs(pred - truth) / truth);
    }
    err30 += errs[0];
    err90 += errs[1];
  }
  EXPECT_LT(err90, err30);
}

}  // namespace
}  // namespace prognos
