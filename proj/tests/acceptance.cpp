// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cluster_oracle.hpp"
#include "experiment_fixture.hpp"
#include "ordergap/cluster.hpp"
#include "ordergap/core_forge.hpp"
#include "ordergap/errors.hpp"
#include "ordergap/experiment.hpp"
#include "ordergap/grade_store.hpp"
#include "ordergap/metrics.hpp"
#include "ordergap/mock_backend.hpp"
#include "ordergap/patch.hpp"
#include "test_support.hpp"

using namespace ordergap;
using namespace ordergap::testing;

namespace {

// Collects failures for one criterion.
struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 5) failures.push_back(what);
    if (!ok && failures.size() == 5) failures.push_back("...");
  }
};

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool same_bits(const LayerVectors& a, const LayerVectors& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [layer, v] : a) {
    auto it = b.find(layer);
    if (it == b.end() || !same_bits(v, it->second)) return false;
  }
  return true;
}

std::string random_prompt(std::mt19937_64& rng, int min_len, int max_len) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ,.ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  const int len = min_len + static_cast<int>(rng() % static_cast<std::uint64_t>(max_len - min_len + 1));
  std::string s;
  for (int i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
  return s;
}

// ---- criteria ---------------------------------------------------------------

void injection_exactness(Check& c) {
  MockBackend mock;
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    const auto prompt = random_prompt(rng, 1, 60);
    const auto core = random_core(rng, "safety-inj", 2, 3, mock.descriptor().hidden_dim);
    const auto plan = PatchPlan::replace({2, 3});
    mock.check_injection(core, plan);
    Intervention iv;
    for (int l : plan.layers) iv.vectors.emplace(l, core.vectors.at(l));
    const auto base = mock.trace(prompt);
    const auto patched = mock.trace(prompt, &iv);
    for (int l : {2, 3}) {
      const auto& last = patched[static_cast<std::size_t>(l)].back();
      const std::vector<float> as_float(last.begin(), last.end());
      bool exact = same_bits(as_float, core.vectors.at(l));
      for (std::size_t i = 0; i < last.size(); ++i) exact = exact && last[i] == static_cast<double>(core.vectors.at(l)[i]);
      c.expect(exact, "layer " + std::to_string(l) + " differs from core on trial " + std::to_string(trial));
    }
    for (int l : {0, 1}) {
      c.expect(patched[static_cast<std::size_t>(l)] == base[static_cast<std::size_t>(l)],
               "layer " + std::to_string(l) + " changed on trial " + std::to_string(trial));
    }
  }
}

void round_trip_identity(Check& c) {
  MockBackend mock;
  std::mt19937_64 rng(202);
  for (int trial = 0; trial < 24; ++trial) {
    const auto prompt = random_prompt(rng, 1, 80);
    const int first = static_cast<int>(rng() % 32);
    const int last = first + static_cast<int>(rng() % static_cast<std::uint64_t>(32 - first));
    const LayerWindow w{first, last};
    const auto layers = w.layers();
    ActivationCore core;
    core.core_id = "safety-rt";
    core.model_id = mock.descriptor().model_id;
    core.vectors = mock.capture_residual(prompt, layers);
    const auto plan = PatchPlan::replace(w);
    const auto patched = mock.generate_with_injection(prompt, core, plan, 32);
    const auto greedy = mock.generate_greedy(prompt, 32);
    c.expect(patched == greedy, "output differs for window " + w.label() + " on trial " + std::to_string(trial));
  }
}

void window_partition(Check& c) {
  std::vector<std::string> labels;
  for (const auto& w : kAblationWindows) labels.push_back(w.label());
  c.expect(labels == std::vector<std::string>{"0-7", "8-15", "16-23", "24-31"}, "unexpected window layout");
  try {
    check_disjoint(kAblationWindows);
  } catch (const ValidationError& e) {
    c.expect(false, e.what());
  }
  c.expect(is_partition(kAblationWindows, 32), "windows do not cover 32 layers exactly once");
  std::vector<int> hits(32, 0);
  for (const auto& w : kAblationWindows)
    for (int l : w.layers()) ++hits[static_cast<std::size_t>(l)];
  c.expect(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }), "layer hit count != 1");
  MockBackend mock;
  const auto core = capture_core(mock, "anchor", {0, 31}, Polarity::Safety);
  std::vector<Chain> chains;
  for (int i = 1; i <= 500; ++i) chains.push_back(make_chain(i));
  c.expect(plan_ablation_sweep("sweep", chains, core, kAblationWindows, 8).size() == 2500,
           "sweep over 500 chains is not 2,500 runs");
}

void core_algebra(Check& c) {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 50; ++trial) {
    const auto base = random_core(rng, "safety-base", 24, 31, 16);
    for (std::size_t k : {1u, 2u, 3u, 5u, 8u}) {
      std::vector<ActivationCore> same(k, base);
      c.expect(same_bits(average_cores(same).vectors, base.vectors), "average of identical cores differs");
    }
    std::vector<ActivationCore> set;
    for (int i = 0; i < 2 + trial % 6; ++i) set.push_back(random_core(rng, "safety-" + std::to_string(i), 24, 31, 16));
    const auto ref = average_cores(set);
    for (int p = 0; p < 5; ++p) {
      std::shuffle(set.begin(), set.end(), rng);
      c.expect(same_bits(average_cores(set).vectors, ref.vectors), "average depends on order");
    }
    const ActivationCore pair[] = {set[0], set[1]};
    c.expect(same_bits(blend_cores(set[0], set[1]).vectors, average_cores(pair).vectors),
             "blend differs from the average of two");
  }
}

void serialization(Check& c) {
  std::mt19937_64 rng(404);
  TempDir dir;
  for (int i = 0; i < 1000; ++i) {
    const int first = static_cast<int>(rng() % 30);
    auto core = random_core(rng, "safety-" + std::to_string(i), first, first + static_cast<int>(rng() % 3),
                            1 + static_cast<int>(rng() % 64));
    const auto path = dir / (core.core_id + ".core");
    save_core(core, path);
    const auto back = load_core(path);
    c.expect(same_bits(back.vectors, core.vectors) && back.core_id == core.core_id && back.capture == core.capture &&
                 back.model_id == core.model_id && back.polarity == core.polarity,
             "core " + core.core_id + " changed through save/load");
  }
  int detected = 0;
  for (int t = 0; t < 100; ++t) {
    const auto core = random_core(rng, "safety-c" + std::to_string(t), 24, 31, 8);
    auto bytes = serialize_core(core);
    const std::size_t at = rng() % bytes.size();
    bytes[at] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    try {
      deserialize_core(bytes);
    } catch (const ChecksumError&) {
      ++detected;
    } catch (const std::exception&) {
    }
  }
  c.expect(detected == 100, std::to_string(detected) + "/100 corruptions detected by checksum");
}

std::vector<GradedPair> pass_counts(int total, int released_count, int full) {
  std::vector<GradedPair> out;
  for (int i = 0; i < total; ++i) {
    out.push_back({i, Grade::Absorb, i < full ? Grade::Detect : (i < released_count ? Grade::Partial : Grade::Absorb)});
  }
  return out;
}

void metric_reproduction(Check& c) {
  auto rate = [&](int released_count, int full, const std::string& want, int want_full) {
    const auto r = release_rate(pass_counts(500, released_count, full));
    c.expect(format_percent(r.rate_percent(), false) == want,
             std::to_string(released_count) + "/500 reports " + format_percent(r.rate_percent(), false));
    c.expect(std::abs(r.rate_percent() - std::stod(want)) < 0.05, "rate outside 0.1 pp");
    if (want_full >= 0) c.expect(r.full_restorations == want_full, "full restorations differ");
  };
  rate(310, 135, "62.0%", 135);
  rate(383, 63, "76.6%", 63);
  rate(227, 0, "45.4%", -1);
  rate(0, 0, "0.0%", -1);
  rate(468, 0, "93.6%", -1);
  std::vector<GradedPair> restore, suppress;
  for (int i = 0; i < 12; ++i) {
    restore.push_back({i, Grade::Absorb, i < 10 ? Grade::Detect : Grade::Absorb});
    suppress.push_back({i, Grade::Detect, i < 7 ? Grade::Absorb : Grade::Detect});
  }
  const auto a = asymmetry_report(restore, suppress);
  c.expect(format_percent(a.restore.rate()) == "83.3%", "restore " + format_percent(a.restore.rate()));
  c.expect(format_percent(a.suppress.rate()) == "58.3%", "suppress " + format_percent(a.suppress.rate()));
}

double pearson_oracle(const std::vector<std::vector<double>>& t) {
  double n = 0;
  std::vector<double> rs(t.size(), 0), cs(t[0].size(), 0);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t[i].size(); ++j) {
      rs[i] += t[i][j];
      cs[j] += t[i][j];
      n += t[i][j];
    }
  double x2 = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t[i].size(); ++j) {
      const double e = rs[i] * cs[j] / n;
      x2 += (t[i][j] - e) * (t[i][j] - e) / e;
    }
  return x2;
}

void chi_square_oracle(Check& c) {
  std::mt19937_64 rng(505);
  for (int t = 0; t < 50; ++t) {
    const std::size_t rows = t < 25 ? 2 : 3;
    const std::size_t cols = 5 - rows;
    std::vector<std::vector<double>> table(rows, std::vector<double>(cols));
    for (auto& r : table)
      for (auto& v : r) v = static_cast<double>(1 + rng() % 200);
    const auto got = chi_square(table);
    const double want = pearson_oracle(table);
    c.expect(std::abs(got.statistic - want) <= 1e-9 * std::abs(want), "statistic off on table " + std::to_string(t));
    c.expect(got.df == static_cast<int>((rows - 1) * (cols - 1)), "df wrong on table " + std::to_string(t));
  }
}

std::string uniform_note;

void ward_oracle(Check& c) {
  std::mt19937_64 rng(606);
  for (int inst = 0; inst < 20; ++inst) {
    const int k = 2 + inst % 3;
    const int n = k + static_cast<int>(rng() % static_cast<std::uint64_t>(9 - k));
    auto f = separated_blobs(rng, n, k, 2 + inst % 3);
    const auto m = ward_cluster(f, k);
    const auto brute = brute_force_partition(f, k);
    const auto mine = canonical(labels_in_order(m, f));
    c.expect(std::find(brute.optima.begin(), brute.optima.end(), mine) != brute.optima.end(),
             "instance " + std::to_string(inst) + " is not a minimum-variance partition");
    for (int p = 0; p < 5; ++p) {
      std::shuffle(f.begin(), f.end(), rng);
      const auto again = ward_cluster(f, k);
      c.expect(again.assignments == m.assignments, "instance " + std::to_string(inst) + " depends on input order");
    }
  }
  // Greedy agglomeration is not an exact minimiser on arbitrary data; report
  // how often it still hits the optimum on unstructured points.
  int agree = 0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < 20; ++inst) {
    const int k = 2 + inst % 3;
    const int n = k + 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(8 - k));
    FeatureSet f;
    for (int i = 0; i < n; ++i) f.emplace_back(i, Feature{u(rng), u(rng)});
    const auto brute = brute_force_partition(f, k);
    const auto mine = canonical(labels_in_order(ward_cluster(f, k), f));
    agree += std::find(brute.optima.begin(), brute.optima.end(), mine) != brute.optima.end() ? 1 : 0;
  }
  uniform_note = "uniform random points: ward cut optimal on " + std::to_string(agree) + "/20";
}

void grade_predicates(Check& c) {
  const std::map<std::string, int> rank{{"DETECT", 3}, {"PARTIAL", 2}, {"ABSORB", 1}};
  int entries = 0;
  for (const auto& [a_name, a_rank] : rank) {
    for (const auto& [b_name, b_rank] : rank) {
      const Grade a = parse_grade(a_name);
      const Grade b = parse_grade(b_name);
      c.expect(cascade_collapsed(a, b) == (b_rank < a_rank), "cascade_collapsed(" + a_name + ", " + b_name + ")");
      c.expect(released(a, b) == (b_rank > a_rank), "released(" + a_name + ", " + b_name + ")");
      ++entries;
    }
  }
  c.expect(entries == 9, "truth table is not 9 entries");
}

void dry_run_fidelity(Check& c) {
  TempDir dir;
  CoreLibrary library(dir / "cores");
  RunStore store(dir / "runs");
  MockBackend a, b;
  Backend* pool[] = {&a, &b};
  for (const auto& name : template_names()) {
    const auto m = dry_run(name, template_inputs(name, a, library, 5), &library);
    const auto r = run_experiment(m, pool, library, store);
    const auto stored = store.records(name);
    c.expect(m.runs.size() == r.executed && r.executed == stored.size() && !m.runs.empty(),
             name + ": manifest " + std::to_string(m.runs.size()) + ", executed " + std::to_string(r.executed) +
                 ", stored " + std::to_string(stored.size()));
  }
}

void log_replay(Check& c) {
  TempDir dir;
  RunStore runs(dir.path());
  std::vector<std::string> ids;
  for (int chain = 1; chain <= 60; ++chain) {
    for (auto cond : {Condition::Baseline, Condition::Patched}) {
      RunRecord r;
      r.experiment = "replay";
      r.chain_id = chain;
      r.condition = cond;
      if (cond == Condition::Patched) r.core_id = "safety-x";
      r.prompt = "p" + std::to_string(chain);
      r.run_id = make_run_id(r.experiment, r.key(), static_cast<std::uint64_t>(chain));
      r.status = chain % 17 == 0 ? RunStatus::Failed : RunStatus::Ok;
      runs.append(r);
      if (r.status == RunStatus::Ok) ids.push_back(r.run_id);
    }
  }
  GradeStore store(runs);
  std::mt19937_64 rng(707);
  for (int i = 0; i < 1000; ++i) {
    // Half the events regrade an already graded run.
    const auto& id = ids[rng() % (i % 2 ? std::min<std::size_t>(ids.size(), 30) : ids.size())];
    store.submit_grade({id, static_cast<Grade>(rng() % 3), "g" + std::to_string(rng() % 5), "", ""});
  }
  const auto live = store.summary("replay");
  c.expect(store.replay_summary("replay") == live, "replayed summary differs from live summary");
  GradeStore reopened(runs);
  c.expect(reopened.summary("replay") == live, "reloaded summary differs from live summary");
  c.expect(live.counts.pending + live.counts.failed + live.counts.graded() == live.counts.total, "counts not conserved");
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<void(Check&)> run;
    double budget_ms;  // 0: no time limit
  };
  const std::vector<Criterion> criteria{
      {"injection exactness at layers 2-3", injection_exactness, 1000},
      {"capture/inject round-trip identity", round_trip_identity, 5000},
      {"four-window layer partition", window_partition, 0},
      {"core averaging and blending algebra", core_algebra, 0},
      {"core serialization and corruption detection", serialization, 10000},
      {"release and asymmetry metrics from published counts", metric_reproduction, 0},
      {"chi-square against definition oracle", chi_square_oracle, 0},
      {"ward cut against brute-force minimum variance", ward_oracle, 30000},
      {"grade predicate truth table", grade_predicates, 0},
      {"dry-run manifest equals executed runs", dry_run_fidelity, 0},
      {"grade log replay equals live summary", log_replay, 0},
  };

  int failed = 0;
  for (const auto& cr : criteria) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget_ms > 0 && ms > cr.budget_ms) {
      std::ostringstream os;
      os << "took " << ms << " ms, budget " << cr.budget_ms << " ms";
      c.failures.push_back(os.str());
    }
    const bool ok = c.failures.empty();
    failed += ok ? 0 : 1;
    std::printf("%s  %-52s %9.1f ms\n", ok ? "PASS" : "FAIL", cr.name, ms);
    for (const auto& f : c.failures) std::printf("      %s\n", f.c_str());
  }
  std::printf("note  %s\n", uniform_note.c_str());
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
