// prognos: simulate fleets, fit posteriors, predict remaining lifetime,
// run what-if scenarios, check the Monte-Carlo bound, benchmark, serve.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error. lemma-check
// also exits 2 when the bound is violated (the report is still written).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "prognos/io.hpp"
#include "prognos/api_http.hpp"
#include "CLI11.hpp"

namespace fs = std::filesystem;
using namespace prognos;
using json = nlohmann::json;

namespace {

struct RunConfig {
  std::string model;
  std::string fleet;
  std::string data;
  std::string posterior;
  std::string out;
  std::string data_dir = "prognos-data";
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> m_values;
  std::optional<double> horizon;
  std::optional<double> dt;
  std::optional<double> gamma;
  std::vector<std::string> pi;
  int approach = 1;
  unsigned jobs = 1;
  int port = 8080;
  double prior_variance = 1e4;
  bool fixed_ctmc = false;
};

std::uint64_t require_seed(const RunConfig& cfg) {
  if (!cfg.seed)
    throw ValidationError("--seed is required for randomized subcommands");
  return *cfg.seed;
}

void emit(const RunConfig& cfg, const std::string& content) {
  if (cfg.out.empty() || cfg.out == "-")
    std::cout << content;
  else
    io::write_file(cfg.out, content);
}

std::vector<double> parse_pi(const std::string& text) {
  std::vector<double> pi;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      pi.push_back(std::stod(cell, &used));
      if (used != cell.size())
        throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ValidationError("--pi value '" + text + "' is not a comma-separated list of numbers");
    }
  }
  return pi;
}

/// Everything needed to predict at the posterior's last consumed epoch.
struct PredictionContext {
  TaskSeverityModel model;
  FleetProfile fleet;
  InspectionLog log;
  PosteriorState posterior;
  double a_ck = 0.0;
  StateIndex state = 0;
  std::optional<CycleScale> scale;
};

PredictionContext load_context(const RunConfig& cfg) {
  auto model = io::load_model(cfg.model);
  auto fleet = io::fleet_from_json(io::load_json(cfg.fleet));
  auto log = io::load_robot_log(cfg.data, model, fleet.cycles_per_epoch);
  auto posterior = io::posterior_from_json(io::load_json(cfg.posterior));
  if (posterior.last_epoch >= log.epochs.size())
    throw ValidationError("posterior refers to epoch " + std::to_string(posterior.last_epoch) +
                          " beyond the inspection log");
  if (!posterior.ctmc_stats.empty() && posterior.ctmc_stats.size() != model.size())
    throw ValidationError("posterior CTMC statistics do not match the model's state count");
  const auto& rec = log.epochs[posterior.last_epoch];
  PredictionContext ctx{std::move(model), fleet, std::move(log), std::move(posterior), rec.accuracy, 0, std::nullopt};
  if (!ctx.log.tasks.empty())
    ctx.state = ctx.log.tasks.state_at(std::min(rec.time, ctx.log.tasks.end_time()));
  if (ctx.posterior.last_epoch >= 1)
    ctx.scale = CycleScale{rec.time / static_cast<double>(ctx.posterior.last_epoch), ctx.fleet.cycles_per_epoch};
  return ctx;
}

std::string robot_dir_name(std::size_t index, std::size_t n) {
  const auto width = std::to_string(n > 0 ? n - 1 : 0).size();
  return fmt::format("robot_{:0{}}", index, std::max<std::size_t>(width, 2));
}

int cmd_simulate(const RunConfig& cfg) {
  const auto seed = require_seed(cfg);
  const auto model = io::load_model(cfg.model);
  const auto fleet = io::fleet_from_json(io::load_json(cfg.fleet));
  if (cfg.out.empty())
    throw ValidationError("--out directory is required");
  const auto runs = simulate_fleet(fleet, model, seed, cfg.jobs);
  const fs::path out(cfg.out);
  io::write_file(out / "model.json", io::to_json(model).dump(2) + "\n");
  io::write_file(out / "fleet.json", io::to_json(fleet).dump(2) + "\n");
  for (const auto& run : runs) {
    const auto dir = out / robot_dir_name(run.index, runs.size());
    io::write_file(dir / "tasks.csv", io::path_to_csv(run.log.tasks, model));
    io::write_file(dir / "inspections.csv", io::inspections_to_csv(run.log));
    io::write_file(dir / "truth.json", io::truth_json(run).dump(2) + "\n");
  }
  std::cerr << "simulated " << runs.size() << " robots into " << out.string() << "\n";
  return 0;
}

int cmd_fit(const RunConfig& cfg) {
  const auto model = io::load_model(cfg.model);
  const auto fleet = io::fleet_from_json(io::load_json(cfg.fleet));
  if (cfg.out.empty() || cfg.data.empty())
    throw ValidationError("fit needs --data and --out");
  std::vector<fs::path> dirs;
  const fs::path data(cfg.data);
  if (fs::exists(data / "inspections.csv")) {
    dirs.push_back(data);
  } else {
    for (const auto& e : fs::directory_iterator(data))
      if (e.is_directory() && fs::exists(e.path() / "inspections.csv"))
        dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty())
    throw ValidationError("no robot directories with inspections.csv under " + cfg.data);

  std::vector<InspectionLog> logs;
  for (const auto& d : dirs)
    logs.push_back(io::load_robot_log(d, model, fleet.cycles_per_epoch));
  const double gamma = cfg.gamma ? *cfg.gamma : estimate_gamma(logs, model.severity());
  const fs::path out(cfg.out);
  io::write_file(out / "gamma.json", json{{"gamma", gamma}, {"robots", logs.size()}}.dump(2) + "\n");

  static constexpr double kFractions[] = {0.3, 0.5, 0.7, 0.9};
  for (std::size_t r = 0; r < dirs.size(); ++r) {
    auto prior = PosteriorState::diffuse(gamma, model.size(), cfg.prior_variance);
    if (cfg.fixed_ctmc)
      prior.ctmc_stats = TransitionStats{};
    const UpdateOptions opts{!cfg.fixed_ctmc};
    const auto target = out / (dirs.size() == 1 && dirs[0] == data ? fs::path() : dirs[r].filename());
    io::write_file(target / "posterior.json",
                   io::to_json(update_posterior(prior, logs[r], model.severity(), opts)).dump(2) + "\n");
    const auto truth_path = dirs[r] / "truth.json";
    if (!fs::exists(truth_path))
      continue;
    const auto truth = io::load_json(truth_path);
    if (!truth.value("failed", false))
      continue;
    const auto lf = truth.at("L_f").get<double>();
    const auto points = update_schedule(logs[r], lf, kFractions);
    PosteriorState post = prior;
    for (std::size_t i = 0; i < points.size(); ++i) {
      post = update_posterior(post, truncate_log(logs[r], points[i]), model.severity(), opts);
      const auto pct = static_cast<int>(std::lround(kFractions[i] * 100));
      io::write_file(target / fmt::format("posterior_{}.json", pct), io::to_json(post).dump(2) + "\n");
    }
  }
  std::cerr << "fitted " << dirs.size() << " robots (gamma = " << gamma << ")\n";
  return 0;
}

int cmd_predict(const RunConfig& cfg) {
  const auto ctx = load_context(cfg);
  const auto pi = stationary_distribution(ctx.model);
  const double rate =
      effective_rate(ctx.posterior.mu_alpha(), ctx.posterior.mu_beta(), pi.probabilities, ctx.model.severity());
  const auto closed = rld_approach1(ctx.a_ck, ctx.fleet.threshold, rate, ctx.posterior.gamma);
  if (cfg.approach == 1) {
    emit(cfg, io::to_json(closed, rul_median(closed, ctx.scale)).dump(2) + "\n");
    return 0;
  }
  if (cfg.approach != 2)
    throw ValidationError("--approach must be 1 or 2");
  Approach2Options opts;
  opts.seed = require_seed(cfg);
  opts.m_total = cfg.m_values.empty() ? 10000 : cfg.m_values.front();
  opts.horizon = cfg.horizon ? *cfg.horizon : 50.0 * closed.distribution.mean();
  opts.dt = cfg.dt;
  opts.jobs = cfg.jobs;
  const auto emp = rld_approach2(ctx.a_ck, ctx.fleet.threshold, ctx.posterior, ctx.model, ctx.state, opts);
  std::optional<MedianRul> med;
  if (emp.failure_fraction() >= 0.5)
    med = rul_median(emp, ctx.scale);
  emit(cfg, io::to_json(emp, med).dump(2) + "\n");
  return 0;
}

int cmd_whatif(const RunConfig& cfg) {
  const auto ctx = load_context(cfg);
  std::vector<std::vector<double>> scenarios;
  for (const auto& p : cfg.pi)
    scenarios.push_back(parse_pi(p));
  if (scenarios.empty()) {
    if (ctx.model.size() != 2)
      throw ValidationError("--pi is required unless the model has exactly two states");
    scenarios = {{1.0, 0.0}, {0.75, 0.25}, {0.5, 0.5}, {0.25, 0.75}, {0.0, 1.0}};
  }
  const auto rows = whatif(ctx.posterior, ctx.a_ck, ctx.fleet.threshold, scenarios, ctx.model.severity(), ctx.scale);
  emit(cfg, io::whatif_to_csv(rows));
  return 0;
}

int cmd_lemma_check(const RunConfig& cfg) {
  const auto ctx = load_context(cfg);
  Lemma1Options opts;
  opts.seed = require_seed(cfg);
  opts.m_total = cfg.m_values.empty() ? 5000 : cfg.m_values.front();
  opts.horizon_multiplier = cfg.horizon ? *cfg.horizon : 50.0;
  opts.dt = cfg.dt;
  opts.jobs = cfg.jobs;
  const auto rep = lemma1_check(ctx.posterior, ctx.model, ctx.state, ctx.a_ck, ctx.fleet.threshold, opts);
  emit(cfg, io::to_json(rep).dump(2) + "\n");
  return rep.pass ? 0 : 2;
}

int cmd_bench(const RunConfig& cfg) {
  const auto ctx = load_context(cfg);
  BenchmarkOptions opts;
  opts.seed = require_seed(cfg);
  opts.m_grid = cfg.m_values.empty() ? std::vector<std::size_t>{1000, 2000, 5000, 10000} : cfg.m_values;
  opts.horizon_multiplier = cfg.horizon ? *cfg.horizon : 50.0;
  opts.jobs = cfg.jobs;
  const auto pi = stationary_distribution(ctx.model);
  const auto rep = benchmark(ctx.posterior, ctx.model, ctx.state, ctx.a_ck, ctx.fleet.threshold, pi.probabilities, opts);
  emit(cfg, io::to_json(rep).dump(2) + "\n");
  return 0;
}

int cmd_serve(const RunConfig& cfg) {
  api::Service service(fs::path(cfg.data_dir));
  httplib::Server server;
  api::mount(server, service);
  std::cerr << "listening on port " << cfg.port << " (" << service.robot_count() << " robots loaded)\n";
  if (!server.listen("0.0.0.0", cfg.port))
    throw ComputationError("cannot listen on port " + std::to_string(cfg.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Remaining-lifetime prognostics under task-severity dynamics"};
  app.require_subcommand(1);
  RunConfig cfg;

  auto add_model = [&](CLI::App* sub) { sub->add_option("--model", cfg.model, "task-severity model JSON")->required(); };
  auto add_fleet = [&](CLI::App* sub) {
    sub->add_option("--fleet", cfg.fleet, "fleet profile JSON (threshold, cycles_per_epoch, ...)")->required();
  };
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", cfg.seed, "master random seed"); };
  auto add_jobs = [&](CLI::App* sub) {
    sub->add_option("--jobs", cfg.jobs, "worker threads")->check(CLI::Range(1u, 1024u));
  };
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", cfg.out, "output path ('-' for stdout)"); };
  auto add_context = [&](CLI::App* sub) {
    add_model(sub);
    add_fleet(sub);
    sub->add_option("--data", cfg.data, "robot directory with inspections.csv and tasks.csv")->required();
    sub->add_option("--posterior", cfg.posterior, "posterior JSON")->required();
    add_out(sub);
  };

  auto* simulate = app.add_subcommand("simulate", "simulate a fleet of degrading robots");
  add_model(simulate);
  add_fleet(simulate);
  add_seed(simulate);
  add_jobs(simulate);
  add_out(simulate);

  auto* fit = app.add_subcommand("fit", "estimate gamma and posteriors at the update points");
  add_model(fit);
  add_fleet(fit);
  fit->add_option("--data", cfg.data, "fleet directory or a single robot directory")->required();
  fit->add_option("--gamma", cfg.gamma, "use this gamma instead of estimating it")->check(CLI::PositiveNumber);
  fit->add_option("--prior-variance", cfg.prior_variance, "diffuse prior variance")->check(CLI::PositiveNumber);
  fit->add_flag("--fixed-ctmc", cfg.fixed_ctmc, "hold q at the model generator instead of updating it online");
  add_out(fit);

  auto* predict = app.add_subcommand("predict", "remaining lifetime distribution at the posterior's epoch");
  add_context(predict);
  predict->add_option("--approach", cfg.approach, "1 = closed form, 2 = Monte Carlo")->check(CLI::IsMember({1, 2}));
  predict->add_option("--M", cfg.m_values, "Monte-Carlo paths")->expected(1);
  predict->add_option("--horizon", cfg.horizon, "prediction horizon in hours")->check(CLI::PositiveNumber);
  predict->add_option("--dt", cfg.dt, "simulation step in hours")->check(CLI::PositiveNumber);
  add_seed(predict);
  add_jobs(predict);

  auto* whatif_cmd = app.add_subcommand("whatif", "closed-form lifetimes under hypothesized task proportions");
  add_context(whatif_cmd);
  whatif_cmd->add_option("--pi", cfg.pi, "task proportions p1,p2,... (repeatable)");

  auto* lemma = app.add_subcommand("lemma-check", "check that the Monte-Carlo mean lifetime bounds the closed form");
  add_context(lemma);
  lemma->add_option("--M", cfg.m_values, "Monte-Carlo paths")->expected(1);
  lemma->add_option("--horizon", cfg.horizon, "horizon as a multiple of E[T1]")->check(CLI::PositiveNumber);
  lemma->add_option("--dt", cfg.dt, "simulation step in hours")->check(CLI::PositiveNumber);
  add_seed(lemma);
  add_jobs(lemma);

  auto* bench = app.add_subcommand("bench", "time closed form against Monte Carlo over an M grid");
  add_context(bench);
  bench->add_option("--M", cfg.m_values, "Monte-Carlo path counts (repeatable)");
  bench->add_option("--horizon", cfg.horizon, "horizon as a multiple of E[T1]")->check(CLI::PositiveNumber);
  add_seed(bench);
  add_jobs(bench);

  auto* serve = app.add_subcommand("serve", "start the JSON API");
  serve->add_option("--port", cfg.port, "TCP port")->check(CLI::Range(1, 65535));
  serve->add_option("--data-dir", cfg.data_dir, "event-log directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*simulate)
      return cmd_simulate(cfg);
    if (*fit)
      return cmd_fit(cfg);
    if (*predict)
      return cmd_predict(cfg);
    if (*whatif_cmd)
      return cmd_whatif(cfg);
    if (*lemma)
      return cmd_lemma_check(cfg);
    if (*bench)
      return cmd_bench(cfg);
    if (*serve)
      return cmd_serve(cfg);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
