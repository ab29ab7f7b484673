#include <atomic>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "prognos/api.hpp"
#include "prognos/simulator.hpp"
#include "prognos/api_http.hpp"

namespace prognos::api {
namespace {

const fs::path kFixtures = PROGNOS_FIXTURES;
const std::map<std::string, std::string> kNoQuery;

TaskSeverityModel two_state() {
  return TaskSeverityModel({"light", "heavy"}, (Eigen::MatrixXd(2, 2) << -1, 1, 2, -2).finished(), {1.0, 5.0});
}

json register_body(const std::string& id) {
  return {{"id", id},
          {"model", io::to_json(two_state())},
          {"config", {{"threshold", 10.0}, {"cycles_per_epoch", 4}, {"gamma", 0.2}, {"initial", 0.0}}}};
}

RobotRun sample_run() {
  FleetProfile p;
  p.n_robots = 1;
  p.cycles_per_epoch = 4;
  return simulate_robot(p, two_state(), 11, 0);
}

// Body appending records (first, last] of the run, with the tasks in between.
json inspections_body(const RobotRun& run, std::size_t first, std::size_t last) {
  json epochs = json::array(), tasks = json::array();
  const auto model = two_state();
  for (std::size_t k = first + 1; k <= last; ++k) {
    const auto& r = run.log.epochs[k];
    epochs.push_back({{"epoch", r.epoch}, {"cycles", r.cycles}, {"time", r.time}, {"accuracy", r.accuracy}});
  }
  const double t0 = run.log.epochs[first].time, t1 = run.log.epochs[last].time;
  for (const auto& s : run.log.tasks.segments())
    if (s.start >= t0 && s.end <= t1)
      tasks.push_back({{"state", model.states()[s.state]}, {"start_time", s.start}, {"end_time", s.end}});
  return {{"epochs", epochs}, {"tasks", tasks}};
}

Response post(Service& svc, const std::string& path, const json& body) {
  return svc.handle("POST", path, kNoQuery, body.dump());
}

TEST(Service, Healthz) {
  Service svc;
  const auto r = svc.handle("GET", "/healthz", kNoQuery, "");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["status"], "ok");
}

TEST(Service, TutorialRldMatchesLibraryBitForBit) {
  Service svc;
  const auto reg = io::load_json(kFixtures / "tutorial" / "register.json");
  ASSERT_EQ(post(svc, "/robots", reg).status, 201);
  const auto r = svc.handle("GET", "/robots/tutorial/rld", {{"approach", "1"}}, "");
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["ig"]["mean"].get<double>(), 12.0);
  EXPECT_EQ(r.body["ig"]["shape"].get<double>(), 36.0);

  const auto closed = rld_approach1(4.0, 10.0, 0.125 * 3.0 + 0.125, 1.0);
  EXPECT_EQ(r.body.dump(), io::to_json(closed, rul_median(closed)).dump());
}

TEST(Service, RegistrationErrors) {
  Service svc;
  ASSERT_EQ(post(svc, "/robots", register_body("r1")).status, 201);
  EXPECT_EQ(post(svc, "/robots", register_body("r1")).status, 409);
  EXPECT_EQ(post(svc, "/robots", register_body("bad id!")).status, 422);
  auto bad_model = register_body("r2");
  bad_model["model"]["generator"][0][1] = 5.0;
  EXPECT_EQ(post(svc, "/robots", bad_model).status, 422);
  auto bad_prior = register_body("r3");
  bad_prior["prior"] = {{"mean", {0.1, 0.05}}, {"cov", {{0.0, 0.0}, {0.0, 0.0}}}};
  EXPECT_EQ(post(svc, "/robots", bad_prior).status, 422);
  EXPECT_EQ(svc.handle("POST", "/robots", kNoQuery, "{not json").status, 400);
  EXPECT_EQ(svc.handle("GET", "/robots/nobody/posterior", kNoQuery, "").status, 404);
  EXPECT_EQ(svc.handle("GET", "/elsewhere", kNoQuery, "").status, 404);
  EXPECT_EQ(svc.handle("DELETE", "/robots/r1/posterior", kNoQuery, "").status, 405);
}

TEST(Service, PosteriorReflectsStoredLog) {
  Service svc;
  ASSERT_EQ(post(svc, "/robots", register_body("r1")).status, 201);
  const auto run = sample_run();
  const auto n = run.log.epochs.size() - 1;
  ASSERT_GE(n, 6u);
  ASSERT_EQ(post(svc, "/robots/r1/inspections", inspections_body(run, 0, 3)).status, 200);
  const auto r = post(svc, "/robots/r1/inspections", inspections_body(run, 3, n));
  ASSERT_EQ(r.status, 200) << r.body.dump();

  const auto got = io::posterior_from_json(svc.handle("GET", "/robots/r1/posterior", kNoQuery, "").body);
  const auto ref = update_posterior(PosteriorState::diffuse(0.2, 2), run.log, two_state().severity());
  EXPECT_LT((got.mean - ref.mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((got.cov - ref.cov).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(got.ctmc_stats.counts, ref.ctmc_stats.counts);
  EXPECT_EQ(got.last_epoch, n);
}

TEST(Service, InspectionOrderingIsEnforced) {
  Service svc;
  ASSERT_EQ(post(svc, "/robots", register_body("r1")).status, 201);
  const auto run = sample_run();
  auto body = inspections_body(run, 0, 2);
  body["epochs"][1]["cycles"] = body["epochs"][0]["cycles"];
  EXPECT_EQ(post(svc, "/robots/r1/inspections", body).status, 422);
  auto back_in_time = inspections_body(run, 0, 2);
  back_in_time["epochs"][1]["time"] = 0.0;
  EXPECT_EQ(post(svc, "/robots/r1/inspections", back_in_time).status, 422);
  auto skipped = inspections_body(run, 0, 2);
  skipped["epochs"][0]["epoch"] = 2;
  EXPECT_EQ(post(svc, "/robots/r1/inspections", skipped).status, 422);
  auto no_tasks = inspections_body(run, 0, 2);
  no_tasks["tasks"] = json::array();
  EXPECT_EQ(post(svc, "/robots/r1/inspections", no_tasks).status, 422);
  // a rejected request leaves the robot untouched
  EXPECT_EQ(svc.handle("GET", "/robots/r1/posterior", kNoQuery, "").body["last_epoch"], 0);
  ASSERT_EQ(post(svc, "/robots/r1/inspections", inspections_body(run, 0, 2)).status, 200);
  EXPECT_EQ(post(svc, "/robots/r1/inspections", inspections_body(run, 0, 2)).status, 422);
}

TEST(Service, StaleExpectedEpochIsAConflict) {
  Service svc;
  ASSERT_EQ(post(svc, "/robots", register_body("r1")).status, 201);
  const auto run = sample_run();
  auto body = inspections_body(run, 0, 2);
  body["expected_last_epoch"] = 0;
  ASSERT_EQ(post(svc, "/robots/r1/inspections", body).status, 200);
  auto next = inspections_body(run, 2, 3);
  next["expected_last_epoch"] = 0;
  EXPECT_EQ(post(svc, "/robots/r1/inspections", next).status, 409);
  next["expected_last_epoch"] = 2;
  EXPECT_EQ(post(svc, "/robots/r1/inspections", next).status, 200);
}

TEST(Service, ConcurrentAppendsNeverInterleave) {
  Service svc;
  ASSERT_EQ(post(svc, "/robots", register_body("r1")).status, 201);
  const auto run = sample_run();
  const auto n = run.log.epochs.size() - 1;
  std::atomic<int> conflicts{0};
  std::vector<std::jthread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const auto last = svc.handle("GET", "/robots/r1/posterior", kNoQuery, "").body["last_epoch"].get<std::size_t>();
        if (last >= n)
          return;
        auto body = inspections_body(run, last, last + 1);
        body["expected_last_epoch"] = last;
        const auto r = post(svc, "/robots/r1/inspections", body);
        if (r.status == 409)
          ++conflicts;
        else
          ASSERT_EQ(r.status, 200) << r.body.dump();
      }
    });
  }
  workers.clear();
  const auto got = io::posterior_from_json(svc.handle("GET", "/robots/r1/posterior", kNoQuery, "").body);
  const auto ref = update_posterior(PosteriorState::diffuse(0.2, 2), run.log, two_state().severity());
  EXPECT_EQ(got.last_epoch, n);
  EXPECT_LT((got.mean - ref.mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(got.ctmc_stats.counts, ref.ctmc_stats.counts);
}

TEST(Service, WhatIfRowsAndValidation) {
  Service svc;
  ASSERT_EQ(post(svc, "/robots", register_body("r1")).status, 201);
  const auto run = sample_run();
  ASSERT_EQ(post(svc, "/robots/r1/inspections", inspections_body(run, 0, 5)).status, 200);
  const auto r = post(svc, "/robots/r1/whatif", {{"scenarios", {{1, 0}, {0, 1}}}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  ASSERT_EQ(r.body["rows"].size(), 2u);
  EXPECT_GE(r.body["rows"][0]["median_hours"].get<double>(), r.body["rows"][1]["median_hours"].get<double>());
  EXPECT_TRUE(r.body["rows"][0]["median_cycles"].is_number());
  EXPECT_EQ(post(svc, "/robots/r1/whatif", {{"scenarios", {{0.7, 0.7}}}}).status, 422);
  EXPECT_EQ(post(svc, "/robots/r1/whatif", {{"scenarios", {{1.0}}}}).status, 422);
  EXPECT_EQ(post(svc, "/robots/r1/whatif", {{"scenarios", json::array()}}).status, 422);
}

TEST(Service, Approach2NeedsSeedAndBoundedM) {
  Service svc;
  ASSERT_EQ(post(svc, "/robots", register_body("r1")).status, 201);
  const auto run = sample_run();
  ASSERT_EQ(post(svc, "/robots/r1/inspections", inspections_body(run, 0, 5)).status, 200);
  EXPECT_EQ(svc.handle("GET", "/robots/r1/rld", {{"approach", "2"}}, "").status, 422);
  EXPECT_EQ(svc.handle("GET", "/robots/r1/rld", {{"approach", "2"}, {"seed", "1"}, {"M", "200000"}}, "").status, 422);
  EXPECT_EQ(svc.handle("GET", "/robots/r1/rld", {{"approach", "3"}}, "").status, 422);
  EXPECT_EQ(svc.handle("GET", "/robots/r1/rld", {{"approach", "x"}}, "").status, 422);
  const std::map<std::string, std::string> q{{"approach", "2"}, {"seed", "5"}, {"M", "500"}};
  const auto a = svc.handle("GET", "/robots/r1/rld", q, "");
  const auto b = svc.handle("GET", "/robots/r1/rld", q, "");
  ASSERT_EQ(a.status, 200) << a.body.dump();
  EXPECT_EQ(a.body, b.body);
  EXPECT_EQ(a.body["M"], 500);
  EXPECT_EQ(a.body["failure_times"].size() + a.body["censored"].get<std::size_t>(), 500u);
}

TEST(Service, EventLogReplayRestoresState) {
  const auto dir = fs::temp_directory_path() / "prognos_api_replay";
  fs::remove_all(dir);
  const auto run = sample_run();
  json before;
  {
    Service svc(dir);
    ASSERT_EQ(post(svc, "/robots", register_body("r1")).status, 201);
    ASSERT_EQ(post(svc, "/robots", io::load_json(kFixtures / "tutorial" / "register.json")).status, 201);
    ASSERT_EQ(post(svc, "/robots/r1/inspections", inspections_body(run, 0, 3)).status, 200);
    ASSERT_EQ(post(svc, "/robots/r1/inspections", inspections_body(run, 3, 5)).status, 200);
    auto bad = inspections_body(run, 5, 6);
    bad["epochs"][0]["cycles"] = 0;
    ASSERT_EQ(post(svc, "/robots/r1/inspections", bad).status, 422);
    before = svc.handle("GET", "/robots/r1/posterior", kNoQuery, "").body;
  }
  Service again(dir);
  EXPECT_EQ(again.robot_count(), 2u);
  EXPECT_EQ(again.handle("GET", "/robots/r1/posterior", kNoQuery, "").body, before);
  EXPECT_EQ(post(again, "/robots", register_body("r1")).status, 409);
  fs::remove_all(dir);
}

TEST(Http, ServesJsonWithCors) {
  Service svc;
  httplib::Server server;
  mount(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::jthread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto reg = io::load_json(kFixtures / "tutorial" / "register.json");
  const auto created = client.Post("/robots", reg.dump(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const auto rld = client.Get("/robots/tutorial/rld?approach=1");
  ASSERT_TRUE(rld);
  EXPECT_EQ(rld->status, 200);
  EXPECT_EQ(rld->get_header_value("Access-Control-Allow-Origin"), "*");
  const auto body = json::parse(rld->body);
  EXPECT_EQ(body["ig"]["mean"].get<double>(), 12.0);
  EXPECT_EQ(body["ig"]["shape"].get<double>(), 36.0);
  const auto missing = client.Get("/robots/nobody/posterior");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  const auto options = client.Options("/robots");
  ASSERT_TRUE(options);
  EXPECT_EQ(options->status, 204);
  server.stop();
}

}  // namespace
}  // namespace prognos::api
