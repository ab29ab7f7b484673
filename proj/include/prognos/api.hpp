#pragma once

// JSON service behind the what-if dashboard. `Service::handle` is
// transport-free; api_http.hpp binds it to an HTTP listener.
//
// Endpoints
//   GET  /healthz
//   POST /robots                      register {id, model, config, prior?}
//   POST /robots/{id}/inspections     append {epochs, tasks, expected_last_epoch?}
//   GET  /robots/{id}/posterior
//   GET  /robots/{id}/rld?approach=1|2&M=&horizon=&seed=&dt=
//   POST /robots/{id}/whatif          {scenarios: [[p...], ...]}

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>

#include "prognos/bayes.hpp"
#include "prognos/io.hpp"
#include "prognos/rld.hpp"

namespace prognos::api {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Response {
  int status = 200;
  json body;
};

/// Carries an HTTP status through the handler stack.
class HttpError : public std::runtime_error {
public:
  HttpError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const noexcept { return status_; }

private:
  int status_;
};

inline constexpr std::size_t kMaxApproach2Paths = 100000;

struct RobotConfig {
  double threshold = 0.0;
  long long cycles_per_epoch = 1;
  double gamma = 1.0;
  double initial = 0.0;
  bool update_ctmc = true;
};

struct RobotRecord {
  std::string id;
  TaskSeverityModel model;
  RobotConfig config;
  PosteriorState prior;
  InspectionLog log;
  PosteriorState posterior;
  mutable std::shared_mutex mutex;

  RobotRecord(std::string id_, TaskSeverityModel model_, RobotConfig cfg, PosteriorState prior_)
      : id(std::move(id_)), model(std::move(model_)), config(cfg), prior(prior_), posterior(prior_) {
    log.cycles_per_epoch = cfg.cycles_per_epoch;
    log.epochs.push_back({0, 0, 0.0, cfg.initial});
  }

  std::optional<CycleScale> scale() const {
    if (log.epochs.size() < 2)
      return std::nullopt;
    return CycleScale{log.mean_epoch_hours(), log.cycles_per_epoch};
  }
};

namespace detail {

inline bool valid_id(std::string_view id) {
  if (id.empty() || id.size() > 64)
    return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'))
      return false;
  return true;
}

inline std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    if (path[pos] == '/') {
      ++pos;
      continue;
    }
    const auto next = path.find('/', pos);
    parts.push_back(path.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    pos = next == std::string_view::npos ? path.size() : next;
  }
  return parts;
}

inline double query_number(const std::map<std::string, std::string>& q, const std::string& key, double fallback) {
  const auto it = q.find(key);
  if (it == q.end())
    return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size())
      throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw HttpError(422, "query parameter '" + key + "' is not a number");
  }
}

}  // namespace detail

class Service {
public:
  /// With a data directory, each robot has an append-only JSON-lines event
  /// log there and all robots are replayed on construction.
  explicit Service(std::optional<fs::path> data_dir = std::nullopt) : data_dir_(std::move(data_dir)) {
    if (data_dir_) {
      fs::create_directories(*data_dir_);
      replay();
    }
  }

  Response handle(std::string_view method, std::string_view path,
                  const std::map<std::string, std::string>& query, std::string_view body) {
    try {
      return route(method, path, query, body);
    } catch (const HttpError& e) {
      return {e.status(), {{"error", e.what()}}};
    } catch (const ValidationError& e) {
      return {422, {{"error", e.what()}}};
    } catch (const ComputationError& e) {
      return {422, {{"error", e.what()}}};
    } catch (const json::exception& e) {
      return {400, {{"error", e.what()}}};
    } catch (const std::exception& e) {
      return {500, {{"error", e.what()}}};
    }
  }

  std::size_t robot_count() const {
    std::shared_lock lock(registry_mutex_);
    return robots_.size();
  }

private:
  Response route(std::string_view method, std::string_view path, const std::map<std::string, std::string>& query,
                 std::string_view body) {
    const auto parts = detail::split_path(path);
    if (parts.size() == 1 && parts[0] == "healthz") {
      require(method, "GET");
      return {200, {{"status", "ok"}, {"robots", robot_count()}}};
    }
    if (parts.empty() || parts[0] != "robots")
      throw HttpError(404, "no such endpoint");
    if (parts.size() == 1) {
      require(method, "POST");
      return register_robot(parse_body(body), true);
    }
    auto robot = find(std::string(parts[1]));
    if (parts.size() == 3 && parts[2] == "inspections") {
      require(method, "POST");
      return append_inspections(*robot, parse_body(body), true);
    }
    if (parts.size() == 3 && parts[2] == "posterior") {
      require(method, "GET");
      std::shared_lock lock(robot->mutex);
      return {200, posterior_body(*robot)};
    }
    if (parts.size() == 3 && parts[2] == "rld") {
      require(method, "GET");
      return rld(*robot, query);
    }
    if (parts.size() == 3 && parts[2] == "whatif") {
      require(method, "POST");
      return run_whatif(*robot, parse_body(body));
    }
    throw HttpError(404, "no such endpoint");
  }

  static void require(std::string_view method, std::string_view expected) {
    if (method != expected)
      throw HttpError(405, "method not allowed");
  }

  static json parse_body(std::string_view body) {
    try {
      return json::parse(body);
    } catch (const json::parse_error& e) {
      throw HttpError(400, std::string("malformed JSON body: ") + e.what());
    }
  }

  std::shared_ptr<RobotRecord> find(const std::string& id) const {
    std::shared_lock lock(registry_mutex_);
    const auto it = robots_.find(id);
    if (it == robots_.end())
      throw HttpError(404, "unknown robot '" + id + "'");
    return it->second;
  }

  Response register_robot(const json& req, bool persist) {
    const auto id = req.at("id").get<std::string>();
    if (!detail::valid_id(id))
      throw HttpError(422, "robot id must be 1-64 characters of [A-Za-z0-9_-]");
    auto model = io::model_from_json(req.at("model"));
    const auto& c = req.at("config");
    RobotConfig cfg;
    cfg.threshold = c.at("threshold").get<double>();
    cfg.cycles_per_epoch = c.at("cycles_per_epoch").get<long long>();
    cfg.gamma = c.at("gamma").get<double>();
    cfg.initial = c.value("initial", 0.0);
    cfg.update_ctmc = c.value("update_ctmc", true);
    if (cfg.cycles_per_epoch < 1)
      throw HttpError(422, "cycles_per_epoch must be at least 1");
    if (!(cfg.gamma > 0.0))
      throw HttpError(422, "gamma must be positive");
    if (!(cfg.threshold > cfg.initial))
      throw HttpError(422, "threshold must exceed the initial accuracy");

    PosteriorState prior = PosteriorState::diffuse(cfg.gamma, model.size());
    if (req.contains("prior") && !req["prior"].is_null()) {
      const auto& p = req["prior"];
      auto mean = p.at("mean").get<std::vector<double>>();
      auto cov = p.at("cov").get<std::vector<std::vector<double>>>();
      if (mean.size() != 2 || cov.size() != 2 || cov[0].size() != 2 || cov[1].size() != 2)
        throw HttpError(422, "prior mean must be a 2-vector and cov 2x2");
      prior.mean = {mean[0], mean[1]};
      prior.cov << cov[0][0], cov[0][1], cov[1][0], cov[1][1];
      prior.validate();
      if (!(prior.cov.determinant() > 0.0))
        throw HttpError(422, "prior covariance must be positive definite");
    }
    if (!cfg.update_ctmc)
      prior.ctmc_stats = TransitionStats{};

    auto rec = std::make_shared<RobotRecord>(id, std::move(model), cfg, prior);
    {
      std::unique_lock lock(registry_mutex_);
      if (robots_.contains(id))
        throw HttpError(409, "robot '" + id + "' already exists");
      if (persist)
        append_event(id, {{"event", "register"}, {"body", req}}, true);
      robots_.emplace(id, rec);
    }
    return {201, summary(*rec)};
  }

  Response append_inspections(RobotRecord& rec, const json& req, bool persist) {
    std::unique_lock lock(rec.mutex);
    if (req.contains("expected_last_epoch") && req["expected_last_epoch"].get<std::size_t>() != rec.log.epochs.back().epoch)
      throw HttpError(409, "robot was updated concurrently; last epoch is " + std::to_string(rec.log.epochs.back().epoch));

    InspectionLog next = rec.log;
    for (const auto& e : req.value("tasks", json::array())) {
      Segment s{rec.model.index_of(e.at("state").get<std::string>()), e.at("start_time").get<double>(),
                e.at("end_time").get<double>()};
      next.tasks.append(s);
    }
    const auto new_epochs = req.at("epochs");
    if (new_epochs.empty())
      throw HttpError(422, "no epochs given");
    for (const auto& e : new_epochs) {
      const auto& prev = next.epochs.back();
      InspectionRecord r{e.value("epoch", prev.epoch + 1), e.at("cycles").get<long long>(), e.at("time").get<double>(),
                         e.at("accuracy").get<double>()};
      if (r.epoch != prev.epoch + 1 || r.cycles <= prev.cycles || !(r.time > prev.time))
        throw HttpError(422, "epochs must be appended in order with increasing cycles and time");
      if (r.cycles - prev.cycles != next.cycles_per_epoch)
        throw HttpError(422, "cycle spacing must equal cycles_per_epoch");
      next.epochs.push_back(r);
    }
    if (next.tasks.empty() || next.tasks.begin_time() > 0.0 || next.tasks.end_time() < next.epochs.back().time)
      throw HttpError(422, "task history must cover [0, last inspection time]");
    auto posterior = update_posterior(rec.posterior, next, rec.model.severity(), {rec.config.update_ctmc});
    if (persist)
      append_event(rec.id, {{"event", "inspections"}, {"id", rec.id}, {"body", req}}, false);
    rec.log = std::move(next);
    rec.posterior = std::move(posterior);
    return {200, summary(rec)};
  }

  Response rld(const RobotRecord& rec, const std::map<std::string, std::string>& query) {
    std::shared_lock lock(rec.mutex);
    const auto approach = static_cast<int>(detail::query_number(query, "approach", 1));
    const double a_ck = rec.log.epochs.back().accuracy;
    if (approach == 1)
      return {200, closed_form_json(rec.posterior, rec.model, a_ck, rec.config.threshold, rec.scale())};
    if (approach != 2)
      throw HttpError(422, "approach must be 1 or 2");
    if (!query.contains("seed"))
      throw HttpError(422, "approach 2 requires an explicit seed");
    const double m = detail::query_number(query, "M", 10000);
    if (!(m >= 1) || m > static_cast<double>(kMaxApproach2Paths) || m != std::floor(m))
      throw HttpError(422, "M must be an integer in [1, 100000]");
    const auto seed = static_cast<std::uint64_t>(detail::query_number(query, "seed", 0));
    const auto pi = stationary_distribution(rec.model);
    const double rate = effective_rate(rec.posterior.mu_alpha(), rec.posterior.mu_beta(), pi.probabilities,
                                       rec.model.severity());
    const double mean_t1 = (rec.config.threshold - a_ck) / rate;
    Approach2Options opts;
    opts.m_total = static_cast<std::size_t>(m);
    opts.horizon = detail::query_number(query, "horizon", 50.0 * mean_t1);
    opts.seed = seed;
    if (query.contains("dt"))
      opts.dt = detail::query_number(query, "dt", 0.0);
    const double t_k = rec.log.epochs.back().time;
    const auto state =
        rec.log.tasks.empty() ? StateIndex{0} : rec.log.tasks.state_at(std::min(t_k, rec.log.tasks.end_time()));
    const auto emp = rld_approach2(a_ck, rec.config.threshold, rec.posterior, rec.model, state, opts);
    std::optional<MedianRul> med;
    if (emp.failure_fraction() >= 0.5)
      med = rul_median(emp, rec.scale());
    return {200, io::to_json(emp, med)};
  }

  Response run_whatif(const RobotRecord& rec, const json& req) {
    std::shared_lock lock(rec.mutex);
    const auto scenarios = req.at("scenarios").get<std::vector<std::vector<double>>>();
    if (scenarios.empty())
      throw HttpError(422, "scenarios must be non-empty");
    for (const auto& pi : scenarios) {
      try {
        validate_distribution(pi, rec.model.size());
      } catch (const ValidationError& e) {
        throw HttpError(422, std::string("invalid scenario: ") + e.what());
      }
    }
    const auto rows = whatif(rec.posterior, rec.log.epochs.back().accuracy, rec.config.threshold, scenarios,
                             rec.model.severity(), rec.scale());
    return {200, {{"rows", io::to_json(rows)}}};
  }

  static json closed_form_json(const PosteriorState& post, const TaskSeverityModel& model, double a_ck,
                               double threshold, std::optional<CycleScale> scale) {
    const auto pi = stationary_distribution(model);
    const double rate = effective_rate(post.mu_alpha(), post.mu_beta(), pi.probabilities, model.severity());
    const auto res = rld_approach1(a_ck, threshold, rate, post.gamma);
    return io::to_json(res, rul_median(res, scale));
  }

  static json posterior_body(const RobotRecord& rec) {
    json j = io::to_json(rec.posterior);
    j["id"] = rec.id;
    return j;
  }

  static json summary(const RobotRecord& rec) {
    return {{"id", rec.id},
            {"last_epoch", rec.log.epochs.back().epoch},
            {"inspections", rec.log.epochs.size()},
            {"posterior", io::to_json(rec.posterior)}};
  }

  void append_event(const std::string& id, const json& event, bool create) {
    if (!data_dir_)
      return;
    const auto file = *data_dir_ / (id + ".jsonl");
    if (create && fs::exists(file))
      throw HttpError(409, "event log for '" + id + "' already exists");
    std::ofstream out(file, std::ios::app | std::ios::binary);
    if (!out)
      throw ComputationError("cannot open event log " + file.string());
    out << event.dump() << '\n';
    out.flush();
  }

  void replay() {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(*data_dir_))
      if (entry.path().extension() == ".jsonl")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      std::ifstream in(file);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
          continue;
        const auto ev = io::parse_json(line, file.string() + " line " + std::to_string(line_no));
        const auto kind = ev.at("event").get<std::string>();
        if (kind == "register") {
          register_robot(ev.at("body"), false);
        } else if (kind == "inspections") {
          auto rec = find(ev.value("id", file.stem().string()));
          append_inspections(*rec, ev.at("body"), false);
        } else {
          throw ParseError(file.string(), line_no, "unknown event '" + kind + "'");
        }
      }
    }
  }

  std::optional<fs::path> data_dir_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<RobotRecord>> robots_;
};

}  // namespace prognos::api
