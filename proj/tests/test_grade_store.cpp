#include <doctest.h>

#include <future>
#include <random>
#include <thread>

#include <httplib.h>

#include "ordergap/errors.hpp"
#include "ordergap/grade_server.hpp"
#include "ordergap/grade_store.hpp"
#include "test_support.hpp"

using namespace ordergap;
using namespace ordergap::testing;
using nlohmann::json;

namespace {

RunRecord make_run(const std::string& exp, int chain, Condition cond, OrderLevel level,
                   std::optional<std::string> core = std::nullopt, RunStatus status = RunStatus::Ok) {
  RunRecord r;
  r.experiment = exp;
  r.chain_id = chain;
  r.condition = cond;
  r.order_level = level;
  r.core_id = std::move(core);
  r.prompt = "prompt " + std::to_string(chain);
  r.run_id = make_run_id(exp, r.key(), chain);
  r.status = status;
  r.response_text = status == RunStatus::Ok ? "resp" : "";
  return r;
}

// Two experiments; "b" has a failed run.
void seed_runs(RunStore& store) {
  for (int chain : {2, 1}) {
    store.append(make_run("b", chain, Condition::Patched, OrderLevel::O5, "core"));
    store.append(make_run("b", chain, Condition::Baseline, OrderLevel::O5));
    store.append(make_run("b", chain, Condition::Baseline, OrderLevel::O2));
  }
  store.append(make_run("b", 3, Condition::Baseline, OrderLevel::O5, std::nullopt, RunStatus::Failed));
  store.append(make_run("a", 9, Condition::Baseline, OrderLevel::O5));
}

struct FakeClock {
  std::chrono::system_clock::time_point now{std::chrono::hours(24 * 365 * 50)};
  GradeStore::Clock fn() {
    return [this] { return now; };
  }
};

}  // namespace

TEST_CASE("queue order, filters and leases") {
  TempDir dir;
  RunStore runs(dir.path());
  seed_runs(runs);
  FakeClock clock;
  GradeStore store(runs, {make_chain(1), make_chain(2)}, clock.fn());
  CHECK(store.pending_count() == 7);
  CHECK(store.pending_count({std::string("b"), std::nullopt}) == 6);
  CHECK(store.pending_count({std::nullopt, 1}) == 3);

  auto first = store.next_pending({}, "ann");
  REQUIRE(first);
  CHECK(first->record.experiment == "a");
  CHECK(first->remaining == 7);
  CHECK(first->chain == nullptr);

  // order within "b": chain, condition, order level
  std::vector<std::tuple<int, Condition, OrderLevel>> seen;
  for (int i = 0; i < 6; ++i) {
    auto item = store.next_pending({std::string("b"), std::nullopt}, "g" + std::to_string(i));
    REQUIRE(item);
    seen.emplace_back(item->record.chain_id, item->record.condition, item->record.order_level);
  }
  const std::vector<std::tuple<int, Condition, OrderLevel>> want{
      {1, Condition::Baseline, OrderLevel::O2}, {1, Condition::Baseline, OrderLevel::O5},
      {1, Condition::Patched, OrderLevel::O5},  {2, Condition::Baseline, OrderLevel::O2},
      {2, Condition::Baseline, OrderLevel::O5}, {2, Condition::Patched, OrderLevel::O5}};
  CHECK(seen == want);
  // everything in "b" is leased to someone else now
  CHECK_FALSE(store.next_pending({std::string("b"), std::nullopt}, "late"));
  // the same grader gets its own run back
  auto again = store.next_pending({std::string("b"), std::nullopt}, "g3");
  REQUIRE(again);
  CHECK(again->record.chain_id == 2);
  CHECK(again->chain != nullptr);
  // leases expire
  clock.now += GradeStore::kLeaseDuration + std::chrono::seconds(1);
  auto expired = store.next_pending({std::string("b"), std::nullopt}, "late");
  REQUIRE(expired);
  CHECK(expired->record.chain_id == 1);
}

TEST_CASE("submitting, regrading and errors") {
  TempDir dir;
  RunStore runs(dir.path());
  seed_runs(runs);
  GradeStore store(runs);
  const auto item = store.next_pending({std::string("b"), std::nullopt});
  REQUIRE(item);
  const auto id = item->record.run_id;
  const auto e = store.submit_grade({id, Grade::Absorb, "ann", "", ""});
  CHECK_FALSE(e.timestamp.empty());
  store.submit_grade({id, Grade::Detect, "bob", "second look", ""});
  CHECK(store.history(id).size() == 2);
  CHECK(store.run(id)->grade == Grade::Detect);
  CHECK(store.run(id)->grader == "bob");
  const auto s = store.summary("b");
  CHECK(s.counts.total == 7);
  CHECK(s.counts.failed == 1);
  CHECK(s.counts.pending == 5);
  CHECK(s.counts.by_grade[static_cast<int>(Grade::Detect)] == 1);
  CHECK(s.counts.by_grade[static_cast<int>(Grade::Absorb)] == 0);
  CHECK(s.completion() == doctest::Approx(1.0 / 6.0));
  CHECK(store.pending_count({std::string("b"), std::nullopt}) == 5);

  CHECK_THROWS_AS(store.submit_grade({"nope", Grade::Detect, "ann", "", ""}), NotFoundError);
  const auto failed = make_run("b", 3, Condition::Baseline, OrderLevel::O5, std::nullopt, RunStatus::Failed);
  CHECK_THROWS_AS(store.submit_grade({failed.run_id, Grade::Detect, "ann", "", ""}), ValidationError);
  CHECK_THROWS_AS(store.summary("missing"), NotFoundError);

  // runs appended later are found on submit
  const auto late = make_run("b", 4, Condition::Baseline, OrderLevel::O5);
  runs.append(late);
  CHECK_NOTHROW(store.submit_grade({late.run_id, Grade::Partial, "ann", "", ""}));

  // a new store reads the log back
  GradeStore reopened(runs);
  CHECK(reopened.summary("b") == store.summary("b"));
  CHECK(reopened.replay_summary("b") == store.summary("b"));
  const auto graded = reopened.graded_records("b");
  CHECK(std::count_if(graded.begin(), graded.end(), [](auto& r) { return r.grade.has_value(); }) == 2);
}

TEST_CASE("counts are conserved and replay matches the live summary") {
  TempDir dir;
  RunStore runs(dir.path());
  std::vector<std::string> ids;
  for (int chain = 1; chain <= 40; ++chain) {
    for (auto cond : {Condition::Baseline, Condition::Patched}) {
      auto r = make_run("x", chain, cond, OrderLevel::O5, cond == Condition::Patched ? std::optional<std::string>("c")
                                                                                       : std::nullopt,
                        chain % 13 == 0 ? RunStatus::Failed : RunStatus::Ok);
      runs.append(r);
      if (r.status == RunStatus::Ok) ids.push_back(r.run_id);
    }
  }
  GradeStore store(runs);
  std::mt19937 rng(3);
  for (int i = 0; i < 400; ++i) {
    const auto& id = ids[rng() % ids.size()];
    store.submit_grade({id, static_cast<Grade>(rng() % 3), "g" + std::to_string(rng() % 4), "", ""});
    if (i % 50 == 0) {
      const auto s = store.summary("x");
      CHECK(s.counts.pending + s.counts.failed + s.counts.graded() == s.counts.total);
      int group_total = 0;
      for (const auto& [key, g] : s.groups) group_total += g.total;
      CHECK(group_total == s.counts.total);
    }
  }
  CHECK(store.replay_summary("x") == store.summary("x"));
  CHECK(to_json(store.summary("x"))["total"] == 80);
  CHECK_FALSE(format_summary(store.summary("x")).empty());
}

TEST_CASE("grading endpoints") {
  TempDir dir;
  RunStore runs(dir.path());
  seed_runs(runs);
  GradeStore store(runs, {make_chain(1), make_chain(2)});
  GradeServer server(store);
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);

  auto res = client.Get("/api/queue/next?experiment=b&chain=1&grader=ann");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto item = json::parse(res->body);
  CHECK(item["chain_id"] == 1);
  CHECK(item["chain"]["precondition_false"] == "the sky is green");
  CHECK(item["remaining"] == 3);
  const std::string id = item["run_id"];

  res = client.Post("/api/grades", json{{"run_id", id}, {"grade", "DETECT"}, {"grader", "ann"}}.dump(),
                    "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  CHECK(json::parse(res->body)["grade"] == "DETECT");

  res = client.Post("/api/grades", json{{"run_id", "missing"}, {"grade", "DETECT"}, {"grader", "ann"}}.dump(),
                    "application/json");
  CHECK(res->status == 404);
  const auto failed = make_run("b", 3, Condition::Baseline, OrderLevel::O5, std::nullopt, RunStatus::Failed);
  res = client.Post("/api/grades", json{{"run_id", failed.run_id}, {"grade", "DETECT"}, {"grader", "ann"}}.dump(),
                    "application/json");
  CHECK(res->status == 409);
  res = client.Post("/api/grades", json{{"run_id", id}, {"grade", "MAYBE"}, {"grader", "ann"}}.dump(),
                    "application/json");
  CHECK(res->status == 400);
  res = client.Post("/api/grades", "not json", "application/json");
  CHECK(res->status == 400);
  res = client.Post("/api/grades", json{{"run_id", id}, {"grade", "D"}, {"grader", ""}}.dump(), "application/json");
  CHECK(res->status == 400);

  res = client.Get("/api/experiments/b/summary");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto summary = json::parse(res->body);
  CHECK(summary["total"] == 7);
  CHECK(summary["pending"] == 5);
  CHECK(client.Get("/api/experiments/zzz/summary")->status == 404);

  res = client.Get("/api/runs/" + id);
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto run = json::parse(res->body);
  CHECK(run["grade"] == "DETECT");
  CHECK(run["history"].size() == 1);
  CHECK(client.Get("/api/runs/unknown")->status == 404);

  CHECK(client.Get("/api/queue/next?chain=x")->status == 400);
  for (int i = 0; i < 6; ++i) {
    auto next = client.Get("/api/queue/next?experiment=a");
    if (next->status == 204) break;
    const std::string rid = json::parse(next->body)["run_id"];
    client.Post("/api/grades", json{{"run_id", rid}, {"grade", "ABSORB"}, {"grader", "bob"}}.dump(),
                "application/json");
  }
  CHECK(client.Get("/api/queue/next?experiment=a")->status == 204);
  server.stop();
}

TEST_CASE("blocking listen reports the bound port") {
  TempDir dir;
  RunStore runs(dir.path());
  seed_runs(runs);
  GradeStore store(runs);
  GradeServer server(store);
  std::promise<int> bound;
  std::thread serving([&] { server.listen("127.0.0.1", 0, [&](int port) { bound.set_value(port); }); });
  const int port = bound.get_future().get();
  CHECK(port > 0);
  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/api/experiments/a/summary");
  REQUIRE(res);
  CHECK(res->status == 200);
  server.stop();
  serving.join();
}
