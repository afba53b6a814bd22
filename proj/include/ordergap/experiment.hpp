#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordergap/activation_core.hpp"
#include "ordergap/backend.hpp"
#include "ordergap/chain.hpp"
#include "ordergap/patch.hpp"
#include "ordergap/plan.hpp"
#include "ordergap/run_record.hpp"
#include "ordergap/run_store.hpp"

namespace ordergap {

// Cores on disk, one "<core_id>.core" file each.
class CoreLibrary {
 public:
  explicit CoreLibrary(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path_for(const std::string& core_id) const;
  bool has(const std::string& core_id) const;
  ActivationCore load(const std::string& core_id) const;
  void save(const ActivationCore& core) const;
  std::vector<std::string> ids() const;

 private:
  std::filesystem::path dir_;
};

// Throws ValidationError for ids that cannot be used as file names.
void check_core_id(const std::string& core_id);

// Operator-authored alternate prompt for one chain.
//   kind "framing":    tag "arm_a" / "arm_b", replaces the O5 text
//   kind "paraphrase": tag "V1".."V5", replaces the O5 text
//   kind "true_o2":    the O2 text with the true precondition
struct PromptVariant {
  int chain_id = 0;
  std::string kind;
  std::string tag;
  std::string text;
};

std::vector<PromptVariant> load_variants(const std::filesystem::path& path);
PromptVariant variant_from_json(const nlohmann::json& j);

// Hand-built O2-style anchor prompt that belongs to no chain.
struct SyntheticAnchor {
  int id = 0;
  std::string principle;
  std::string text;
};

std::vector<SyntheticAnchor> load_synthetic_anchors(const std::filesystem::path& path);

// How a core is produced when the template does not take it as given.
struct CoreRecipe {
  enum class Kind { Existing, Capture, Average, Blend };
  Kind kind = Kind::Existing;
  std::string core_id;
  Polarity polarity = Polarity::Safety;
  std::string anchor;  // provenance label, e.g. "chain:183:O2"
  std::string prompt;  // capture only
  OrderLevel order_level = OrderLevel::O2;
  LayerWindow window{0, 0};
  std::vector<std::string> parents;  // average / blend
};

nlohmann::json to_json(const CoreRecipe& r);

struct ExperimentInputs {
  std::string name;                  // experiment name in the run store; defaults to the template
  std::vector<Chain> chains;         // the whole benchmark
  std::vector<int> chain_ids;        // evaluation subset, empty for all
  std::map<std::string, std::string> cores;  // role -> core id
  std::optional<PatchPlan> plan;     // defaults to replace over the body window
  std::vector<LayerWindow> windows;  // layer_ablation, defaults to the four quarters
  std::vector<PromptVariant> variants;
  std::optional<RoutingTable> routing;
  std::vector<int> anchor_chain_ids;
  std::vector<SyntheticAnchor> synthetic_anchors;
  int pair_count = 50;
  std::uint64_t seed = 0;
  std::string crc_prompt;
  int max_new_tokens = 512;
  std::vector<int> suppress_chain_ids;  // bidirectional, defaults to chain_ids
};

struct Manifest {
  std::string template_name;
  std::string experiment;
  std::uint64_t seed = 0;
  PatchPlan plan;
  std::vector<CoreRecipe> recipes;  // in dependency order
  std::vector<PlannedRun> runs;
  std::optional<BackendDescriptor> backend;
  std::map<std::string, std::string> core_checksums;  // filled by execution
};

nlohmann::json to_json(const Manifest& m);

const std::vector<std::string>& template_names();

// Enumerates every run and core recipe without touching a backend. Missing
// chains, core roles, variants or anchors raise ValidationError. When
// `library` is given, cores taken as given must exist in it.
Manifest dry_run(const std::string& template_name, const ExperimentInputs& inputs,
                 const CoreLibrary* library = nullptr);

struct ExperimentResult {
  Manifest manifest;
  std::vector<RunRecord> records;  // manifest order
  std::size_t executed = 0;        // runs generated by this call
  std::size_t skipped = 0;         // already completed in the store
};

// Builds missing recipe cores, then generates every manifest run that the
// store does not already hold as a completed record with the same prompt
// hash. The manifest is written to "<store>/<experiment>.manifest.json";
// an existing manifest with a different backend descriptor is an error.
ExperimentResult run_experiment(const Manifest& manifest, std::span<Backend* const> backends, CoreLibrary& library,
                                RunStore& store, const ExecutionOptions& options = {});

std::filesystem::path manifest_path(const RunStore& store, const std::string& experiment);

// Deterministic sample of `count` unordered pairs from `ids`.
std::vector<std::pair<int, int>> sample_pairs(std::span<const int> ids, int count, std::uint64_t seed);

}  // namespace ordergap
