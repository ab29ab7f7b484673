#pragma once

// JSON and CSV formats for models, paths, logs, posteriors and results.
// Doubles are written in shortest round-trip form.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include "json.hpp"

#include "prognos/bayes.hpp"
#include "prognos/ctmc.hpp"
#include "prognos/degradation.hpp"
#include "prognos/error.hpp"
#include "prognos/rld.hpp"
#include "prognos/simulator.hpp"

namespace prognos::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw ValidationError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, std::string_view content) {
  if (p.has_parent_path())
    fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out)
    throw ComputationError("cannot write " + p.string());
  out << content;
}

inline json parse_json(std::string_view text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line number
    std::size_t line = 1;
    for (std::size_t i = 0; i < text.size() && i < e.byte; ++i)
      if (text[i] == '\n')
        ++line;
    throw ParseError(source, line, e.what());
  }
}

inline json load_json(const fs::path& p) { return parse_json(read_file(p), p.string()); }

inline std::string num(double v) { return fmt::format("{}", v); }

// ---------------------------------------------------------------- CSV

struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based file line of each row

  double number(std::size_t row, std::size_t col) const {
    const auto& cell = rows[row][col];
    double v = 0.0;
    const auto* first = cell.data();
    const auto* last = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
      throw ParseError(source, lines[row], "'" + cell + "' is not a number in column '" + header[col] + "'");
    return v;
  }

  long long integer(std::size_t row, std::size_t col) const {
    const auto& cell = rows[row][col];
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size())
      throw ParseError(source, lines[row], "'" + cell + "' is not an integer in column '" + header[col] + "'");
    return v;
  }
};

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

inline CsvTable parse_csv(std::string_view text, const std::string& source,
                          const std::vector<std::string>& expected_header) {
  CsvTable table;
  table.source = source;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (line.empty() || line == "\r")
      continue;
    auto cells = split_csv_line(line);
    if (table.header.empty()) {
      if (cells != expected_header)
        throw ParseError(source, line_no, "expected header '" + fmt::format("{}", fmt::join(expected_header, ",")) + "'");
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size())
      throw ParseError(source, line_no,
                       "expected " + std::to_string(table.header.size()) + " fields, found " + std::to_string(cells.size()));
    table.rows.push_back(std::move(cells));
    table.lines.push_back(line_no);
  }
  if (table.header.empty())
    throw ParseError(source, 1, "missing header");
  return table;
}

// ---------------------------------------------------------------- model

inline json to_json(const TaskSeverityModel& m) {
  json j;
  j["states"] = m.states();
  json gen = json::array();
  for (Eigen::Index i = 0; i < m.generator().rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.generator().cols(); ++k)
      row.push_back(m.generator()(i, k));
    gen.push_back(row);
  }
  j["generator"] = gen;
  json sev = json::object();
  for (std::size_t i = 0; i < m.size(); ++i)
    sev[m.states()[i]] = m.severity(i);
  j["severity"] = sev;
  return j;
}

inline TaskSeverityModel model_from_json(const json& j) {
  try {
    const auto states = j.at("states").get<std::vector<std::string>>();
    const auto& gen = j.at("generator");
    const auto n = static_cast<Eigen::Index>(gen.size());
    Eigen::MatrixXd q(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto row = gen.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != n)
        throw ValidationError("generator row " + std::to_string(i) + " has the wrong length");
      for (Eigen::Index k = 0; k < n; ++k)
        q(i, k) = row[static_cast<std::size_t>(k)];
    }
    const auto& sev = j.at("severity");
    if (sev.size() != states.size())
      throw ValidationError("severity map must cover every state exactly once");
    std::vector<double> severity;
    for (const auto& s : states) {
      if (!sev.contains(s))
        throw ValidationError("severity map is missing state '" + s + "'");
      severity.push_back(sev.at(s).get<double>());
    }
    return TaskSeverityModel(states, std::move(q), std::move(severity));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model: ") + e.what());
  }
}

inline TaskSeverityModel load_model(const fs::path& p) {
  try {
    return model_from_json(load_json(p));
  } catch (const ParseError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- paths

inline std::string path_to_csv(const SeverityPath& path, const TaskSeverityModel& model) {
  std::string out = "state,start_time,end_time\n";
  for (const auto& s : path.segments())
    out += fmt::format("{},{},{}\n", model.states().at(s.state), s.start, s.end);
  return out;
}

inline SeverityPath path_from_csv(std::string_view text, const std::string& source, const TaskSeverityModel& model) {
  const auto t = parse_csv(text, source, {"state", "start_time", "end_time"});
  std::vector<Segment> segs;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Segment s;
    try {
      s.state = model.index_of(t.rows[r][0]);
    } catch (const ValidationError& e) {
      throw ParseError(source, t.lines[r], e.what());
    }
    s.start = t.number(r, 1);
    s.end = t.number(r, 2);
    if (!(s.end > s.start))
      throw ParseError(source, t.lines[r], "end_time must exceed start_time");
    if (!segs.empty() && s.start != segs.back().end)
      throw ParseError(source, t.lines[r], "segment is not contiguous with the previous row");
    segs.push_back(s);
  }
  return SeverityPath(std::move(segs));
}

inline std::string degradation_to_csv(const DegradationPath& p) {
  std::string out = "time,accuracy\n";
  for (std::size_t j = 0; j < p.size(); ++j)
    out += fmt::format("{},{}\n", p.time[j], p.accuracy[j]);
  return out;
}

inline json to_json(const InverseGaussian& d) { return {{"mean", d.mean()}, {"shape", d.shape()}}; }

inline InverseGaussian ig_from_json(const json& j) {
  return InverseGaussian(j.at("mean").get<double>(), j.at("shape").get<double>());
}

// ---------------------------------------------------------------- inspections

inline std::string inspections_to_csv(const InspectionLog& log) {
  std::string out = "epoch,cycles,time,accuracy\n";
  for (const auto& r : log.epochs)
    out += fmt::format("{},{},{},{}\n", r.epoch, r.cycles, r.time, r.accuracy);
  return out;
}

/// Records must be consecutive with strictly increasing cycles and times and
/// a constant cycle spacing.
inline std::vector<InspectionRecord> inspections_from_csv(std::string_view text, const std::string& source) {
  const auto t = parse_csv(text, source, {"epoch", "cycles", "time", "accuracy"});
  std::vector<InspectionRecord> recs;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto epoch = t.integer(r, 0);
    if (epoch < 0)
      throw ParseError(source, t.lines[r], "negative epoch");
    InspectionRecord rec{static_cast<std::size_t>(epoch), t.integer(r, 1), t.number(r, 2), t.number(r, 3)};
    if (!recs.empty()) {
      if (rec.epoch != recs.back().epoch + 1)
        throw ParseError(source, t.lines[r], "epochs must be consecutive");
      if (rec.cycles <= recs.back().cycles)
        throw ParseError(source, t.lines[r], "cycles must be strictly increasing");
      if (!(rec.time > recs.back().time))
        throw ParseError(source, t.lines[r], "time must be strictly increasing");
      if (recs.size() >= 2 && rec.cycles - recs.back().cycles != recs[1].cycles - recs[0].cycles)
        throw ParseError(source, t.lines[r], "cycle spacing must be constant");
    }
    recs.push_back(rec);
  }
  return recs;
}

/// Loads `inspections.csv` and `tasks.csv` from a robot directory.
inline InspectionLog load_robot_log(const fs::path& dir, const TaskSeverityModel& model, long long cycles_per_epoch) {
  InspectionLog log;
  const auto ipath = dir / "inspections.csv";
  const auto tpath = dir / "tasks.csv";
  log.epochs = inspections_from_csv(read_file(ipath), ipath.string());
  log.tasks = path_from_csv(read_file(tpath), tpath.string(), model);
  log.cycles_per_epoch = log.epochs.size() >= 2 ? log.epochs[1].cycles - log.epochs[0].cycles : cycles_per_epoch;
  if (log.cycles_per_epoch != cycles_per_epoch)
    throw ValidationError(ipath.string() + ": cycle spacing " + std::to_string(log.cycles_per_epoch) +
                          " differs from configured cycles_per_epoch " + std::to_string(cycles_per_epoch));
  log.validate();
  return log;
}

// ---------------------------------------------------------------- posterior

inline json to_json(const PosteriorState& p) {
  json j;
  j["mean"] = {p.mean(0), p.mean(1)};
  j["cov"] = {{p.cov(0, 0), p.cov(0, 1)}, {p.cov(1, 0), p.cov(1, 1)}};
  j["gamma"] = p.gamma;
  if (p.ctmc_stats.empty()) {
    j["ctmc_stats"] = nullptr;
  } else {
    json counts = json::array();
    for (Eigen::Index i = 0; i < p.ctmc_stats.counts.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index k = 0; k < p.ctmc_stats.counts.cols(); ++k)
        row.push_back(p.ctmc_stats.counts(i, k));
      counts.push_back(row);
    }
    j["ctmc_stats"] = {{"counts", counts}, {"dwell", p.ctmc_stats.dwell}};
  }
  j["last_epoch"] = p.last_epoch;
  return j;
}

inline PosteriorState posterior_from_json(const json& j) {
  try {
    PosteriorState p;
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto cov = j.at("cov").get<std::vector<std::vector<double>>>();
    if (mean.size() != 2 || cov.size() != 2 || cov[0].size() != 2 || cov[1].size() != 2)
      throw ValidationError("posterior mean must be a 2-vector and cov a 2x2 matrix");
    p.mean = {mean[0], mean[1]};
    p.cov << cov[0][0], cov[0][1], cov[1][0], cov[1][1];
    p.gamma = j.at("gamma").get<double>();
    if (j.contains("ctmc_stats") && !j.at("ctmc_stats").is_null()) {
      const auto& cs = j.at("ctmc_stats");
      const auto dwell = cs.at("dwell").get<std::vector<double>>();
      const auto counts = cs.at("counts").get<std::vector<std::vector<double>>>();
      p.ctmc_stats = TransitionStats::zeros(dwell.size());
      p.ctmc_stats.dwell = dwell;
      if (counts.size() != dwell.size())
        throw ValidationError("ctmc_stats counts and dwell differ in size");
      for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i].size() != dwell.size())
          throw ValidationError("ctmc_stats counts must be square");
        for (std::size_t k = 0; k < counts[i].size(); ++k)
          p.ctmc_stats.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = counts[i][k];
      }
    }
    p.last_epoch = j.value("last_epoch", std::size_t{0});
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed posterior: ") + e.what());
  }
}

// ---------------------------------------------------------------- results

inline json to_json(const RldClosedForm& r, const MedianRul& med) {
  json j;
  j["approach"] = 1;
  j["ig"] = to_json(r.distribution);
  j["effective_rate"] = r.effective_rate;
  j["residual_barrier"] = r.residual_barrier;
  j["median_hours"] = med.hours;
  j["median_cycles"] = med.cycles ? json(*med.cycles) : json(nullptr);
  return j;
}

inline json to_json(const RldEmpirical& r, const std::optional<MedianRul>& med) {
  json j;
  j["approach"] = 2;
  j["failure_times"] = r.failure_times;
  j["censored"] = r.censored;
  j["horizon"] = r.horizon;
  j["M"] = r.m_total;
  j["median_hours"] = med ? json(med->hours) : json(nullptr);
  j["median_cycles"] = med && med->cycles ? json(*med->cycles) : json(nullptr);
  return j;
}

inline std::string format_pi(std::span<const double> pi) {
  return fmt::format("{}", fmt::join(pi, ","));
}

inline std::string whatif_to_csv(std::span<const WhatIfRow> rows) {
  std::string out = "pi,median_cycles,median_hours,ig_mean,ig_shape\n";
  for (const auto& r : rows)
    out += fmt::format("\"{}\",{},{},{},{}\n", format_pi(r.pi), r.median.cycles ? num(*r.median.cycles) : std::string(),
                       r.median.hours, r.distribution.mean(), r.distribution.shape());
  return out;
}

inline json to_json(std::span<const WhatIfRow> rows) {
  json arr = json::array();
  for (const auto& r : rows)
    arr.push_back({{"pi", r.pi},
                   {"median_hours", r.median.hours},
                   {"median_cycles", r.median.cycles ? json(*r.median.cycles) : json(nullptr)},
                   {"ig", to_json(r.distribution)}});
  return arr;
}

inline json to_json(const Lemma1Report& r) {
  return {{"expected_t1", r.expected_t1}, {"mean_t2", r.mean_t2},         {"se_t2", r.se_t2},
          {"jensen_gap", r.jensen_gap},   {"failure_fraction", r.failure_fraction}, {"M", r.m_total},
          {"pass", r.pass},               {"strict_gap", r.strict}};
}

inline json to_json(const BenchmarkReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"M", row.m_total},
                    {"approach1_seconds", row.approach1_seconds},
                    {"approach2_seconds", row.approach2_seconds},
                    {"speedup", row.speedup}});
  return {{"rows", rows}, {"approach1_spread", r.approach1_spread}, {"approach2_r2", r.approach2_r2}};
}

// ---------------------------------------------------------------- fleet

inline json to_json(const FleetProfile& f) {
  json planner = {{"mode", f.planner.mode == TaskMode::ctmc ? "ctmc" : "fixed_duration"},
                  {"task_duration", f.planner.task_duration},
                  {"max_task_duration", f.planner.max_task_duration}};
  if (f.planner.initial_state)
    planner["initial_state"] = *f.planner.initial_state;
  return {{"n_robots", f.n_robots},
          {"alpha", {{"mean", f.alpha.mean}, {"sd", f.alpha.sd}}},
          {"beta", {{"mean", f.beta.mean}, {"sd", f.beta.sd}}},
          {"gamma", f.gamma},
          {"threshold", f.threshold},
          {"initial", f.initial},
          {"measurement_noise", f.measurement_noise},
          {"cycles_per_epoch", f.cycles_per_epoch},
          {"dt", f.dt},
          {"max_tasks", f.max_tasks},
          {"planner", planner}};
}

inline FleetProfile fleet_from_json(const json& j) {
  try {
    FleetProfile f;
    f.n_robots = j.value("n_robots", f.n_robots);
    if (j.contains("alpha"))
      f.alpha = {j["alpha"].value("mean", f.alpha.mean), j["alpha"].value("sd", f.alpha.sd)};
    if (j.contains("beta"))
      f.beta = {j["beta"].value("mean", f.beta.mean), j["beta"].value("sd", f.beta.sd)};
    f.gamma = j.value("gamma", f.gamma);
    f.threshold = j.value("threshold", f.threshold);
    f.initial = j.value("initial", f.initial);
    f.measurement_noise = j.value("measurement_noise", f.measurement_noise);
    f.cycles_per_epoch = j.value("cycles_per_epoch", f.cycles_per_epoch);
    f.dt = j.value("dt", f.dt);
    f.max_tasks = j.value("max_tasks", f.max_tasks);
    if (j.contains("planner")) {
      const auto& p = j["planner"];
      const auto mode = p.value("mode", std::string("ctmc"));
      if (mode == "ctmc")
        f.planner.mode = TaskMode::ctmc;
      else if (mode == "fixed_duration")
        f.planner.mode = TaskMode::fixed_duration;
      else
        throw ValidationError("unknown planner mode '" + mode + "'");
      f.planner.task_duration = p.value("task_duration", f.planner.task_duration);
      f.planner.max_task_duration = p.value("max_task_duration", f.planner.max_task_duration);
      if (p.contains("initial_state"))
        f.planner.initial_state = p["initial_state"].get<std::size_t>();
    }
    f.validate();
    return f;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed fleet profile: ") + e.what());
  }
}

inline json truth_json(const RobotRun& r) {
  return {{"alpha", r.alpha},
          {"beta", r.beta},
          {"failed", r.failed},
          {"L_f", r.failed ? json(r.failure_time) : json(nullptr)},
          {"tasks_run", r.tasks_run}};
}

}  // namespace prognos::io
