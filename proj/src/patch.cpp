#include "ordergap/patch.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "ordergap/core_forge.hpp"
#include "ordergap/errors.hpp"
#include "ordergap/hash.hpp"

namespace ordergap {

RunRecord execute_run(Backend& backend, const PlannedRun& run, const ActivationCore* core) {
  RunRecord rec;
  rec.run_id = run.run_id;
  rec.experiment = run.experiment;
  rec.chain_id = run.chain_id;
  rec.order_level = run.order_level;
  rec.condition = run.condition;
  rec.core_id = run.core_id;
  rec.variant = run.variant;
  rec.prompt = run.prompt;
  rec.prompt_hash = run.prompt_hash;

  if (run.core_id) {
    if (core == nullptr) throw ValidationError("run " + run.run_id + ": core '" + *run.core_id + "' is not available");
    if (!run.plan) throw ValidationError("run " + run.run_id + ": patched run without a plan");
    if (core->model_id != backend.descriptor().model_id) {
      throw ValidationError("core '" + core->core_id + "' was captured on '" + core->model_id + "', backend is '" +
                            backend.descriptor().model_id + "'");
    }
    backend.check_injection(*core, *run.plan);
    rec.core_checksum = to_hex(core_checksum(*core));
    rec.plan = run.plan->summary();
  }

  try {
    rec.response_text = core != nullptr && run.core_id
                            ? backend.generate_with_injection(run.prompt, *core, *run.plan, run.max_new_tokens)
                            : backend.generate_greedy(run.prompt, run.max_new_tokens);
    rec.status = RunStatus::Ok;
  } catch (const std::exception& e) {
    rec.status = RunStatus::Failed;
    rec.error = e.what();
    rec.response_text.clear();
  }
  rec.timestamp = utc_timestamp();
  return rec;
}

std::vector<RunRecord> execute_runs(std::span<Backend* const> backends, std::span<const PlannedRun> jobs,
                                    const CoreLookup& cores, const ExecutionOptions& options) {
  if (backends.empty()) throw ValidationError("no backend available to execute runs");
  std::vector<RunRecord> results(jobs.size());
  if (jobs.empty()) return results;

  // Resolve cores and check compatibility up front so nothing is generated
  // for a batch that cannot complete.
  std::vector<const ActivationCore*> resolved(jobs.size(), nullptr);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& job = jobs[i];
    if (!job.core_id) continue;
    resolved[i] = cores ? cores(*job.core_id) : nullptr;
    if (resolved[i] == nullptr) throw ValidationError("core '" + *job.core_id + "' is not available");
    if (!job.plan) throw ValidationError("run " + job.run_id + ": patched run without a plan");
    if (resolved[i]->model_id != backends.front()->descriptor().model_id) {
      throw ValidationError("core '" + resolved[i]->core_id + "' was captured on '" + resolved[i]->model_id +
                            "', backend is '" + backends.front()->descriptor().model_id + "'");
    }
    backends.front()->check_injection(*resolved[i], *job.plan);
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex sink;
  std::exception_ptr first_error;

  auto worker = [&](Backend* backend) {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        RunRecord rec = execute_run(*backend, jobs[i], resolved[i]);
        std::lock_guard lock(sink);
        if (options.store != nullptr) options.store->append(rec);
        results[i] = std::move(rec);
        const std::size_t n = ++done;
        if (options.progress) options.progress(n, jobs.size());
      } catch (...) {
        std::lock_guard lock(sink);
        if (!first_error) first_error = std::current_exception();
        next.store(jobs.size());
        return;
      }
    }
  };

  if (backends.size() == 1) {
    worker(backends.front());
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(backends.size());
    for (Backend* b : backends) threads.emplace_back(worker, b);
  }
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

RunRecord run_patched(Backend& backend, const Chain& chain, OrderLevel level, const ActivationCore& core,
                      const PatchPlan& plan, const PatchRunOptions& options) {
  const PlannedRun run = plan_run(options.experiment, chain.id, level, Condition::Patched, chain.order(level),
                                  options.max_new_tokens, core.core_id, plan);
  RunRecord rec = execute_run(backend, run, &core);
  if (options.store != nullptr) options.store->append(rec);
  return rec;
}

void check_disjoint(std::span<const LayerWindow> windows) {
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].last < windows[i].first) throw ValidationError("empty window " + windows[i].label());
    for (std::size_t j = i + 1; j < windows.size(); ++j) {
      if (windows[i].overlaps(windows[j])) {
        throw ValidationError("windows " + windows[i].label() + " and " + windows[j].label() + " overlap");
      }
    }
  }
}

bool is_partition(std::span<const LayerWindow> windows, int layer_count) {
  std::vector<int> hits(static_cast<std::size_t>(layer_count), 0);
  for (const auto& w : windows) {
    for (int l = w.first; l <= w.last; ++l) {
      if (l < 0 || l >= layer_count) return false;
      ++hits[static_cast<std::size_t>(l)];
    }
  }
  return std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
}

std::vector<PlannedRun> plan_ablation_sweep(const std::string& experiment, std::span<const Chain> chains,
                                            const ActivationCore& core, std::span<const LayerWindow> windows,
                                            int max_new_tokens, PositionPolicy policy) {
  if (windows.empty()) throw ValidationError("ablation sweep needs at least one window");
  check_disjoint(windows);
  for (const auto& w : windows) {
    for (int l = w.first; l <= w.last; ++l) {
      if (!core.has_layer(l)) {
        throw ValidationError("core '" + core.core_id + "' lacks layer " + std::to_string(l) + " of window " +
                              w.label() + "; capture the core over the union of the windows");
      }
    }
  }
  std::vector<PlannedRun> runs;
  runs.reserve(chains.size() * (windows.size() + 1));
  for (const auto& chain : chains) {
    const std::string& prompt = chain.order(OrderLevel::O5);
    runs.push_back(plan_run(experiment, chain.id, OrderLevel::O5, Condition::Baseline, prompt, max_new_tokens));
    for (const auto& w : windows) {
      runs.push_back(plan_run(experiment, chain.id, OrderLevel::O5, Condition::Patched, prompt, max_new_tokens,
                              core.core_id, PatchPlan::replace(w, policy), "window:" + w.label()));
    }
  }
  return runs;
}

std::size_t SweepTable::record_count() const {
  std::size_t n = baselines.size();
  for (const auto& [label, recs] : by_window) n += recs.size();
  return n;
}

SweepTable make_sweep_table(std::span<const LayerWindow> windows, std::span<const RunRecord> records) {
  SweepTable table;
  table.windows.assign(windows.begin(), windows.end());
  for (const auto& w : windows) table.by_window[w.label()];
  for (const auto& r : records) {
    if (r.condition == Condition::Baseline && r.order_level == OrderLevel::O5) {
      table.baselines.push_back(r);
    } else if (r.variant.starts_with("window:")) {
      auto it = table.by_window.find(r.variant.substr(7));
      if (it != table.by_window.end()) it->second.push_back(r);
    }
  }
  return table;
}

SweepTable ablation_sweep(std::span<Backend* const> backends, std::span<const Chain> chains,
                          const ActivationCore& core, std::span<const LayerWindow> windows,
                          const SweepOptions& options) {
  const auto runs = plan_ablation_sweep(options.experiment, chains, core, windows, options.max_new_tokens,
                                        options.policy);
  const auto records = execute_runs(
      backends, runs, [&core](const std::string& id) { return id == core.core_id ? &core : nullptr; },
      options.execution);
  return make_sweep_table(windows, records);
}

SweepTable ablation_sweep(Backend& backend, std::span<const Chain> chains, const ActivationCore& core,
                          std::span<const LayerWindow> windows, const SweepOptions& options) {
  Backend* one[] = {&backend};
  return ablation_sweep(one, chains, core, windows, options);
}

std::string route(int chain_id, const RoutingTable& table) {
  if (auto it = table.entries.find(chain_id); it != table.entries.end()) return it->second;
  return table.default_core;
}

std::string route(const Chain& chain, const RoutingTable& table) { return route(chain.id, table); }

std::set<std::string> referenced_cores(const RoutingTable& table) {
  std::set<std::string> out{table.default_core};
  for (const auto& [chain, core] : table.entries) out.insert(core);
  return out;
}

void validate_routing(const RoutingTable& table, const std::function<bool(const std::string&)>& resolves) {
  if (table.default_core.empty()) throw ValidationError("routing table has no default core");
  for (const auto& id : referenced_cores(table)) {
    if (!resolves(id)) throw ValidationError("routing table references unknown core '" + id + "'");
  }
}

nlohmann::json to_json(const RoutingTable& table) {
  nlohmann::json entries = nlohmann::json::object();
  for (const auto& [chain, core] : table.entries) entries[std::to_string(chain)] = core;
  return {{"default_core", table.default_core}, {"entries", entries}};
}

RoutingTable routing_from_json(const nlohmann::json& j) {
  try {
    RoutingTable t;
    t.default_core = j.at("default_core").get<std::string>();
    if (auto it = j.find("entries"); it != j.end()) {
      for (const auto& [key, value] : it->items()) t.entries.emplace(std::stoi(key), value.get<std::string>());
    }
    return t;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("bad routing table: ") + e.what());
  }
}

}  // namespace ordergap
