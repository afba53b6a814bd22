#include <doctest.h>

#include <fstream>

#include "experiment_fixture.hpp"
#include "ordergap/errors.hpp"
#include "ordergap/experiment.hpp"
#include "ordergap/mock_backend.hpp"
#include "test_support.hpp"

using namespace ordergap;
using namespace ordergap::testing;

TEST_CASE("dry-run counts on five sample chains") {
  TempDir dir;
  CoreLibrary library(dir / "cores");
  MockBackend mock;
  const std::map<std::string, std::size_t> want{
      {"baseline_collapse", 10}, {"pilot_release", 20},   {"layer_ablation", 25},     {"bidirectional", 20},
      {"global_release", 10},    {"anchor_pair_sweep", 20}, {"solo_ranking", 15},     {"synthetic_eval", 40},
      {"epistemic_control", 15}, {"framing_two_arm", 16}, {"paraphrase_variants", 20}, {"blend_test", 10},
      {"routed_deploy", 10}};
  REQUIRE(want.size() == template_names().size());
  for (const auto& name : template_names()) {
    CAPTURE(name);
    const auto m = dry_run(name, template_inputs(name, mock, library), &library);
    CHECK(m.runs.size() == want.at(name));
    CHECK(m.experiment == name);
  }
}

TEST_CASE("template details") {
  TempDir dir;
  CoreLibrary library(dir / "cores");
  MockBackend mock;

  auto m = dry_run("pilot_release", template_inputs("pilot_release", mock, library), &library);
  const auto& crc = m.runs[2];
  CHECK(crc.condition == Condition::CrcPrompt);
  CHECK(crc.prompt.ends_with("\n\nCheck every premise before acting on it."));

  m = dry_run("layer_ablation", template_inputs("layer_ablation", mock, library), &library);
  CHECK(m.runs[1].variant == "window:0-7");
  CHECK(m.runs[1].plan->layers.front() == 0);
  CHECK(m.runs[4].plan->summary() == "replace@24-31/prefill_last_token");

  m = dry_run("epistemic_control", template_inputs("epistemic_control", mock, library), &library);
  REQUIRE(m.recipes.size() == 6);
  CHECK(m.recipes[2].core_id == "safety-c1+c4-o2");
  CHECK(m.recipes[5].core_id == "safety-c1+c4-o2true");
  // chain 4 supplies its true O2 as a variant
  const auto& true4 = m.recipes[4];
  CHECK(true4.core_id == "safety-c4-o2true");
  CHECK(true4.prompt.starts_with("Given that the Moo"));

  m = dry_run("blend_test", template_inputs("blend_test", mock, library), &library);
  CHECK(m.recipes.back().core_id == "blend-safety-global+safety-cluster");

  m = dry_run("routed_deploy", template_inputs("routed_deploy", mock, library), &library);
  CHECK(*m.runs[3].core_id == "safety-cluster");
  CHECK(*m.runs[1].core_id == "safety-global");
}

TEST_CASE("dry-run rejects missing inputs") {
  TempDir dir;
  CoreLibrary library(dir / "cores");
  MockBackend mock;
  auto in = template_inputs("global_release", mock, library);
  CHECK_THROWS_AS(dry_run("no_such_template", in), ValidationError);

  auto bad = in;
  bad.chain_ids = {1, 99};
  CHECK_THROWS_AS(dry_run("global_release", bad), ValidationError);

  bad = in;
  bad.cores["release"] = "missing-core";
  CHECK_NOTHROW(dry_run("global_release", bad));
  CHECK_THROWS_AS(dry_run("global_release", bad, &library), ValidationError);

  bad = in;
  bad.cores.clear();
  CHECK_THROWS_AS(dry_run("global_release", bad), ValidationError);

  bad = in;
  bad.crc_prompt.clear();
  CHECK_THROWS_AS(dry_run("pilot_release", bad), ValidationError);

  bad = in;
  bad.chain_ids = {3, 3};
  CHECK_THROWS_AS(dry_run("global_release", bad), ValidationError);

  bad = in;
  bad.chain_ids = {1, 2, 3};
  CHECK(dry_run("paraphrase_variants", bad).runs.size() == 20);
  CHECK_THROWS_AS(dry_run("framing_two_arm", bad), ValidationError);  // the chain 5 arm is outside the subset
  bad.variants.clear();
  CHECK_THROWS_AS(dry_run("paraphrase_variants", bad), ValidationError);

  auto pairs = template_inputs("anchor_pair_sweep", mock, library);
  pairs.pair_count = 4;
  CHECK_THROWS_AS(dry_run("anchor_pair_sweep", pairs), ValidationError);

  auto windows = template_inputs("layer_ablation", mock, library);
  windows.windows = {{0, 7}, {16, 23}};
  CHECK_THROWS_AS(dry_run("layer_ablation", windows), ValidationError);
  windows.windows = {{0, 7}, {4, 11}};
  CHECK_THROWS_AS(dry_run("layer_ablation", windows), ValidationError);
}

TEST_CASE("every template executes its manifest exactly, then resumes") {
  TempDir dir;
  CoreLibrary library(dir / "cores");
  RunStore store(dir / "runs");
  MockBackend a, b;
  Backend* pool[] = {&a, &b};
  for (const auto& name : template_names()) {
    CAPTURE(name);
    const auto m = dry_run(name, template_inputs(name, a, library), &library);
    const auto first = run_experiment(m, pool, library, store);
    CHECK(first.executed == m.runs.size());
    CHECK(first.records.size() == m.runs.size());
    CHECK(store.records(name).size() == m.runs.size());
    for (std::size_t i = 0; i < m.runs.size(); ++i) {
      CHECK(first.records[i].run_id == m.runs[i].run_id);
      CHECK(first.records[i].status == RunStatus::Ok);
    }
    const auto again = run_experiment(m, pool, library, store);
    CHECK(again.executed == 0);
    CHECK(again.skipped == m.runs.size());
    CHECK(std::filesystem::exists(manifest_path(store, name)));
  }
}

TEST_CASE("serial and parallel execution agree") {
  TempDir d1, d2;
  CoreLibrary l1(d1 / "cores"), l2(d2 / "cores");
  RunStore s1(d1 / "runs"), s2(d2 / "runs");
  MockBackend a, b, c;
  Backend* one[] = {&a};
  Backend* three[] = {&a, &b, &c};
  const auto m1 = dry_run("synthetic_eval", template_inputs("synthetic_eval", a, l1), &l1);
  const auto m2 = dry_run("synthetic_eval", template_inputs("synthetic_eval", a, l2), &l2);
  const auto r1 = run_experiment(m1, one, l1, s1);
  const auto r2 = run_experiment(m2, three, l2, s2);
  REQUIRE(r1.records.size() == r2.records.size());
  for (std::size_t i = 0; i < r1.records.size(); ++i) {
    CHECK(r1.records[i].response_text == r2.records[i].response_text);
    CHECK(r1.records[i].core_checksum == r2.records[i].core_checksum);
  }
}

TEST_CASE("backend mismatches are rejected") {
  TempDir dir;
  CoreLibrary library(dir / "cores");
  RunStore store(dir / "runs");
  MockBackend big;
  MockBackend small(8, 8);
  Backend* mixed[] = {&big, &small};
  const auto m = dry_run("baseline_collapse", template_inputs("baseline_collapse", big, library), &library);
  CHECK_THROWS_AS(run_experiment(m, mixed, library, store), ValidationError);

  Backend* first[] = {&big};
  run_experiment(m, first, library, store);
  Backend* other[] = {&small};
  CHECK_THROWS_AS(run_experiment(m, other, library, store), ValidationError);

  // a core from another model fails before anything is generated
  const auto g = dry_run("global_release", template_inputs("global_release", big, library), &library);
  CHECK_THROWS_AS(run_experiment(g, other, library, store), ValidationError);
  CHECK(store.records("global_release").empty());
}

TEST_CASE("a core that misses plan layers is rejected before anything is written") {
  TempDir dir;
  CoreLibrary library(dir / "cores");
  RunStore store(dir / "runs");
  MockBackend mock;
  Backend* pool[] = {&mock};
  CaptureOptions o;
  o.core_id = "safety-narrow";
  library.save(capture_core(mock, "narrow", kBodyWindow, Polarity::Safety, o));
  auto in = template_inputs("layer_ablation", mock, library);
  in.cores["release"] = "safety-narrow";
  const auto m = dry_run("layer_ablation", in, &library);
  CHECK_THROWS_AS(run_experiment(m, pool, library, store), ValidationError);
  CHECK_FALSE(std::filesystem::exists(manifest_path(store, "layer_ablation")));
  CHECK(store.records("layer_ablation").empty());
}

TEST_CASE("changed core bytes under the same run ids are an error") {
  TempDir dir;
  CoreLibrary library(dir / "cores");
  RunStore store(dir / "runs");
  MockBackend mock;
  Backend* pool[] = {&mock};
  const auto m = dry_run("global_release", template_inputs("global_release", mock, library), &library);
  run_experiment(m, pool, library, store);
  CaptureOptions o;
  o.core_id = "safety-global";
  library.save(capture_core(mock, "different anchor", {0, 31}, Polarity::Safety, o));
  CHECK_THROWS_AS(run_experiment(m, pool, library, store), ValidationError);
}

TEST_CASE("core library") {
  TempDir dir;
  CoreLibrary library(dir / "cores");
  MockBackend mock;
  CHECK(library.ids().empty());
  CaptureOptions o;
  o.core_id = "safety-x";
  const auto core = capture_core(mock, "x", {24, 31}, Polarity::Safety, o);
  library.save(core);
  CHECK(library.has("safety-x"));
  CHECK(library.load("safety-x").vectors == core.vectors);
  CHECK(library.ids() == std::vector<std::string>{"safety-x"});
  std::filesystem::copy_file(library.path_for("safety-x"), library.path_for("renamed"));
  CHECK_THROWS_AS(library.load("renamed"), ValidationError);
  CHECK_THROWS_AS(library.load("absent"), NotFoundError);
  for (const std::string bad : {"", ".hidden", "a/b", "a b", "a\\b"}) CHECK_THROWS_AS(check_core_id(bad), ValidationError);
}

TEST_CASE("pair sampling is deterministic and distinct") {
  const int ids[] = {5, 1, 9, 3, 7, 2};
  const auto a = sample_pairs(ids, 10, 42);
  CHECK(a == sample_pairs(ids, 10, 42));
  CHECK(a != sample_pairs(ids, 10, 43));
  std::set<std::pair<int, int>> seen(a.begin(), a.end());
  CHECK(seen.size() == 10);
  for (const auto& [x, y] : a) CHECK(x < y);
  CHECK(sample_pairs(ids, 15, 1).size() == 15);
  CHECK_THROWS_AS(sample_pairs(ids, 16, 1), ValidationError);
  CHECK_THROWS_AS(sample_pairs(ids, 0, 1), ValidationError);
  const int dup[] = {1, 1, 2};
  CHECK_THROWS_AS(sample_pairs(dup, 1, 1), ValidationError);
}

TEST_CASE("variant and anchor files") {
  const auto v = load_variants(source_dir() / "data" / "variants.jsonl");
  CHECK(v.size() == 15);
  const auto s = load_synthetic_anchors(source_dir() / "data" / "synthetic_anchors.jsonl");
  CHECK(s.size() == 7);
  TempDir dir;
  std::ofstream(dir / "dup.jsonl") << R"({"chain_id":1,"kind":"framing","tag":"arm_a","text":"x"})" << "\n"
                                    << R"({"chain_id":1,"kind":"framing","tag":"arm_a","text":"y"})" << "\n";
  CHECK_THROWS_AS(load_variants(dir / "dup.jsonl"), ValidationError);
  CHECK_THROWS_AS(variant_from_json(nlohmann::json{{"chain_id", 1}, {"kind", "other"}, {"text", "x"}}), ValidationError);
}
