#pragma once

#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordergap/activation_core.hpp"
#include "ordergap/backend.hpp"
#include "ordergap/chain.hpp"
#include "ordergap/plan.hpp"
#include "ordergap/run_record.hpp"
#include "ordergap/run_store.hpp"

namespace ordergap {

// ---- execution -------------------------------------------------------------

using CoreLookup = std::function<const ActivationCore*(const std::string& core_id)>;

struct ExecutionOptions {
  RunStore* store = nullptr;  // records are appended here as they complete
  // Called after each run with (completed, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

// Generates one planned run. Backend and validation failures during
// generation become a failed record; an incompatible core/plan throws
// before generation.
RunRecord execute_run(Backend& backend, const PlannedRun& run, const ActivationCore* core);

// Runs `jobs` across the given backends, one worker thread per backend.
// Results come back in job order; the store sees one append at a time.
std::vector<RunRecord> execute_runs(std::span<Backend* const> backends, std::span<const PlannedRun> jobs,
                                    const CoreLookup& cores, const ExecutionOptions& options = {});

// ---- single patched run ----------------------------------------------------

struct PatchRunOptions {
  std::string experiment = "adhoc";
  int max_new_tokens = 512;
  RunStore* store = nullptr;
};

RunRecord run_patched(Backend& backend, const Chain& chain, OrderLevel level, const ActivationCore& core,
                      const PatchPlan& plan, const PatchRunOptions& options = {});

// ---- layer ablation --------------------------------------------------------

// Throws ValidationError when any two windows share a layer.
void check_disjoint(std::span<const LayerWindow> windows);
// True when every layer in [0, layer_count) lies in exactly one window.
bool is_partition(std::span<const LayerWindow> windows, int layer_count);

// Planned runs of a sweep: per chain one unpatched O5 baseline followed by
// one patched O5 run per window.
std::vector<PlannedRun> plan_ablation_sweep(const std::string& experiment, std::span<const Chain> chains,
                                            const ActivationCore& core, std::span<const LayerWindow> windows,
                                            int max_new_tokens,
                                            PositionPolicy policy = PositionPolicy::PrefillLastToken);

struct SweepTable {
  std::vector<LayerWindow> windows;
  std::vector<RunRecord> baselines;                      // one per chain
  std::map<std::string, std::vector<RunRecord>> by_window;  // window label -> one per chain

  std::size_t record_count() const;
};

SweepTable make_sweep_table(std::span<const LayerWindow> windows, std::span<const RunRecord> records);

struct SweepOptions {
  std::string experiment = "layer_ablation";
  int max_new_tokens = 512;
  PositionPolicy policy = PositionPolicy::PrefillLastToken;
  ExecutionOptions execution;
};

SweepTable ablation_sweep(std::span<Backend* const> backends, std::span<const Chain> chains,
                          const ActivationCore& core, std::span<const LayerWindow> windows,
                          const SweepOptions& options = {});
SweepTable ablation_sweep(Backend& backend, std::span<const Chain> chains, const ActivationCore& core,
                          std::span<const LayerWindow> windows, const SweepOptions& options = {});

// ---- routing ---------------------------------------------------------------

struct RoutingTable {
  std::map<int, std::string> entries;  // chain id -> core id
  std::string default_core;

  bool operator==(const RoutingTable&) const = default;
};

std::string route(const Chain& chain, const RoutingTable& table);
std::string route(int chain_id, const RoutingTable& table);
std::set<std::string> referenced_cores(const RoutingTable& table);
// Throws ValidationError naming the first core id that does not resolve.
void validate_routing(const RoutingTable& table, const std::function<bool(const std::string&)>& resolves);

nlohmann::json to_json(const RoutingTable& table);
RoutingTable routing_from_json(const nlohmann::json& j);

}  // namespace ordergap
