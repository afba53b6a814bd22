#include "ordergap/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "ordergap/core_forge.hpp"
#include "ordergap/errors.hpp"
#include "ordergap/hash.hpp"
#include "ordergap/json_io.hpp"

namespace ordergap {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- core library -----------------------------------------------------------

void check_core_id(const std::string& core_id) {
  if (core_id.empty()) throw ValidationError("core id is empty");
  if (core_id.front() == '.' || core_id.find_first_of("/\\\n\r\t ") != std::string::npos) {
    throw ValidationError("core id '" + core_id + "' is not usable as a file name");
  }
}

CoreLibrary::CoreLibrary(fs::path dir) : dir_(std::move(dir)) {}

fs::path CoreLibrary::path_for(const std::string& core_id) const {
  check_core_id(core_id);
  return dir_ / (core_id + ".core");
}

bool CoreLibrary::has(const std::string& core_id) const { return fs::exists(path_for(core_id)); }

ActivationCore CoreLibrary::load(const std::string& core_id) const {
  const auto path = path_for(core_id);
  if (!fs::exists(path)) throw NotFoundError("core '" + core_id + "' not found in " + dir_.string());
  auto core = load_core(path);
  if (core.core_id != core_id) {
    throw ValidationError("file " + path.string() + " holds core '" + core.core_id + "', expected '" + core_id + "'");
  }
  return core;
}

void CoreLibrary::save(const ActivationCore& core) const {
  fs::create_directories(dir_);
  save_core(core, path_for(core.core_id));
}

std::vector<std::string> CoreLibrary::ids() const {
  std::vector<std::string> out;
  if (!fs::exists(dir_)) return out;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() == ".core") out.push_back(entry.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- input files --------------------------------------------------------------

PromptVariant variant_from_json(const json& j) {
  try {
    PromptVariant v;
    v.chain_id = j.at("chain_id").get<int>();
    v.kind = j.at("kind").get<std::string>();
    v.tag = j.value("tag", std::string(v.kind));
    v.text = j.at("text").get<std::string>();
    if (v.kind != "framing" && v.kind != "paraphrase" && v.kind != "true_o2") {
      throw ValidationError("unknown variant kind '" + v.kind + "' for chain " + std::to_string(v.chain_id));
    }
    if (v.text.empty()) throw ValidationError("empty variant text for chain " + std::to_string(v.chain_id));
    if (v.tag.empty() || v.tag.find('|') != std::string::npos) {
      throw ValidationError("bad variant tag '" + v.tag + "' for chain " + std::to_string(v.chain_id));
    }
    return v;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad variant record: ") + e.what());
  }
}

std::vector<PromptVariant> load_variants(const fs::path& path) {
  std::vector<PromptVariant> out;
  std::set<std::tuple<int, std::string, std::string>> seen;
  for (const auto& j : read_json_lines(path)) {
    auto v = variant_from_json(j);
    if (!seen.emplace(v.chain_id, v.kind, v.tag).second) {
      throw ValidationError("duplicate variant " + v.kind + "/" + v.tag + " for chain " + std::to_string(v.chain_id));
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<SyntheticAnchor> load_synthetic_anchors(const fs::path& path) {
  std::vector<SyntheticAnchor> out;
  std::set<int> ids;
  for (const auto& j : read_json_lines(path)) {
    try {
      SyntheticAnchor a{j.at("id").get<int>(), j.value("principle", std::string()), j.at("text").get<std::string>()};
      if (a.text.empty()) throw ValidationError("synthetic anchor " + std::to_string(a.id) + " has no text");
      if (!ids.insert(a.id).second) throw ValidationError("duplicate synthetic anchor " + std::to_string(a.id));
      out.push_back(std::move(a));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("bad synthetic anchor: ") + e.what());
    }
  }
  return out;
}

// ---- manifest json ------------------------------------------------------------

namespace {

std::string_view kind_name(CoreRecipe::Kind k) {
  switch (k) {
    case CoreRecipe::Kind::Existing: return "existing";
    case CoreRecipe::Kind::Capture: return "capture";
    case CoreRecipe::Kind::Average: return "average";
    case CoreRecipe::Kind::Blend: return "blend";
  }
  return "?";
}

}  // namespace

json to_json(const CoreRecipe& r) {
  json j{{"core_id", r.core_id}, {"kind", std::string(kind_name(r.kind))}};
  if (r.kind == CoreRecipe::Kind::Capture) {
    j["polarity"] = std::string(to_string(r.polarity));
    j["anchor"] = r.anchor;
    j["order_level"] = std::string(to_string(r.order_level));
    j["window"] = r.window.label();
    j["prompt_hash"] = to_hex(fnv1a64(r.prompt));
  }
  if (!r.parents.empty()) j["parents"] = r.parents;
  return j;
}

json to_json(const Manifest& m) {
  json runs = json::array();
  for (const auto& r : m.runs) runs.push_back(to_json(r));
  json recipes = json::array();
  for (const auto& r : m.recipes) recipes.push_back(to_json(r));
  json j{{"template", m.template_name}, {"experiment", m.experiment}, {"seed", m.seed},
         {"plan", to_json(m.plan)},     {"run_count", m.runs.size()}, {"recipes", recipes},
         {"core_checksums", m.core_checksums}, {"runs", runs}};
  j["backend"] = m.backend ? to_json(*m.backend) : json(nullptr);
  return j;
}

// ---- templates -------------------------------------------------------------------

const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names = {
      "baseline_collapse", "pilot_release",    "layer_ablation",      "bidirectional", "global_release",
      "anchor_pair_sweep", "solo_ranking",     "synthetic_eval",      "epistemic_control",
      "framing_two_arm",   "paraphrase_variants", "blend_test",       "routed_deploy"};
  return names;
}

namespace {

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  // Rejection sampling keeps the draw unbiased and independent of the
  // standard library's distribution implementation.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace

std::vector<std::pair<int, int>> sample_pairs(std::span<const int> ids, int count, std::uint64_t seed) {
  std::vector<int> sorted(ids.begin(), ids.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ValidationError("duplicate anchor chain id");
  std::vector<std::pair<int, int>> all;
  for (std::size_t i = 0; i < sorted.size(); ++i)
    for (std::size_t j = i + 1; j < sorted.size(); ++j) all.emplace_back(sorted[i], sorted[j]);
  if (count < 1) throw ValidationError("pair count must be positive");
  if (static_cast<std::size_t>(count) > all.size()) {
    throw ValidationError("cannot sample " + std::to_string(count) + " pairs from " + std::to_string(sorted.size()) +
                          " anchors (" + std::to_string(all.size()) + " pairs exist)");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = all.size() - 1; i > 0; --i) std::swap(all[i], all[bounded(rng, i + 1)]);
  all.resize(static_cast<std::size_t>(count));
  return all;
}

namespace {

class Builder {
 public:
  Builder(const std::string& template_name, const ExperimentInputs& in, const CoreLibrary* library)
      : in_(in), library_(library) {
    m_.template_name = template_name;
    m_.experiment = in.name.empty() ? template_name : in.name;
    m_.seed = in.seed;
    m_.plan = in.plan.value_or(PatchPlan::replace(kBodyWindow));
    if (in.max_new_tokens < 0) throw ValidationError("max_new_tokens must not be negative");
    if (in.chain_ids.empty()) {
      for (const auto& c : in.chains) eval_.push_back(&c);
    } else {
      for (int id : in.chain_ids) eval_.push_back(&chain(id));
    }
    if (eval_.empty()) throw ValidationError("no chains to evaluate");
  }

  Manifest take() { return std::move(m_); }
  const std::vector<const Chain*>& eval() const { return eval_; }
  const PatchPlan& plan() const { return m_.plan; }

  const Chain& chain(int id) const {
    const Chain* c = find_chain(in_.chains, id);
    if (c == nullptr) throw ValidationError("chain " + std::to_string(id) + " is not in the benchmark");
    return *c;
  }

  void add(const Chain& c, OrderLevel level, Condition cond, std::string prompt,
           std::optional<std::string> core = std::nullopt, std::string variant = {},
           std::optional<PatchPlan> plan = std::nullopt) {
    if (core && !plan) plan = m_.plan;
    m_.runs.push_back(plan_run(m_.experiment, c.id, level, cond, std::move(prompt), in_.max_new_tokens,
                               std::move(core), std::move(plan), std::move(variant)));
  }

  void baseline(const Chain& c, OrderLevel level = OrderLevel::O5) {
    add(c, level, Condition::Baseline, c.order(level));
  }
  void patched(const Chain& c, const std::string& core, OrderLevel level = OrderLevel::O5, std::string variant = {}) {
    add(c, level, Condition::Patched, c.order(level), core, std::move(variant));
  }

  // Core given by role, or built from the anchor chains' O2 prompts.
  std::string role(const std::string& name, Polarity polarity = Polarity::Safety) {
    if (auto it = in_.cores.find(name); it != in_.cores.end()) return existing(it->second);
    if (!in_.anchor_chain_ids.empty()) return from_anchors(in_.anchor_chain_ids, polarity, false);
    throw ValidationError("template '" + m_.template_name + "' needs a '" + name +
                          "' core or anchor chains to capture one from");
  }

  std::string existing(const std::string& id) {
    check_core_id(id);
    if (library_ != nullptr && !library_->has(id)) {
      throw ValidationError("core '" + id + "' not found in " + library_->dir().string());
    }
    CoreRecipe r;
    r.core_id = id;
    add_recipe(r);
    return id;
  }

  std::string capture(std::string id, Polarity polarity, std::string anchor, std::string prompt, OrderLevel level) {
    CoreRecipe r;
    r.kind = CoreRecipe::Kind::Capture;
    r.core_id = std::move(id);
    r.polarity = polarity;
    r.anchor = std::move(anchor);
    r.prompt = std::move(prompt);
    r.order_level = level;
    r.window = capture_window();
    add_recipe(r);
    return r.core_id;
  }

  // Safety anchors use the chain's O2 (or its true-premise O2); absorb
  // anchors use the chain's O5.
  std::string anchor_core(int chain_id, Polarity polarity, bool true_premise) {
    const Chain& c = chain(chain_id);
    const std::string cid = "c" + std::to_string(chain_id);
    if (polarity == Polarity::Absorb) {
      return capture("absorb-" + cid + "-o5", polarity, "chain:" + std::to_string(chain_id) + ":O5",
                     c.order(OrderLevel::O5), OrderLevel::O5);
    }
    if (!true_premise) {
      return capture("safety-" + cid + "-o2", polarity, "chain:" + std::to_string(chain_id) + ":O2",
                     c.order(OrderLevel::O2), OrderLevel::O2);
    }
    return capture("safety-" + cid + "-o2true", polarity, "chain:" + std::to_string(chain_id) + ":O2:true",
                   true_o2(c), OrderLevel::O2);
  }

  std::string from_anchors(std::span<const int> ids, Polarity polarity, bool true_premise) {
    std::vector<std::string> parents;
    for (int id : ids) parents.push_back(anchor_core(id, polarity, true_premise));
    if (parents.size() == 1) return parents.front();
    std::string id = polarity == Polarity::Safety ? "safety-" : "absorb-";
    for (std::size_t i = 0; i < ids.size(); ++i) id += (i ? "+c" : "c") + std::to_string(ids[i]);
    id += polarity == Polarity::Absorb ? "-o5" : (true_premise ? "-o2true" : "-o2");
    CoreRecipe r;
    r.kind = CoreRecipe::Kind::Average;
    r.core_id = id;
    r.polarity = polarity;
    r.parents = parents;
    add_recipe(r);
    return id;
  }

  std::string blend(const std::string& a, const std::string& b) {
    CoreRecipe r;
    r.kind = CoreRecipe::Kind::Blend;
    r.core_id = "blend-" + a + "+" + b;
    r.parents = {a, b};
    add_recipe(r);
    return r.core_id;
  }

  std::string true_o2(const Chain& c) const {
    for (const auto& v : in_.variants) {
      if (v.chain_id == c.id && v.kind == "true_o2") return v.text;
    }
    return true_premise_prompt(c, OrderLevel::O2);
  }

  std::vector<const PromptVariant*> variants_of(const Chain& c, const std::string& kind) const {
    std::vector<const PromptVariant*> out;
    for (const auto& v : in_.variants) {
      if (v.chain_id == c.id && v.kind == kind) out.push_back(&v);
    }
    std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->tag < b->tag; });
    return out;
  }

  void require_variants(const std::string& kind) const {
    std::set<int> eval_ids;
    for (const auto* c : eval_) eval_ids.insert(c->id);
    bool any = false;
    for (const auto& v : in_.variants) {
      if (v.kind != kind) continue;
      if (!eval_ids.contains(v.chain_id)) {
        throw ValidationError(kind + " variant " + v.tag + " names chain " + std::to_string(v.chain_id) +
                              ", which is not in the evaluation set");
      }
      any = true;
    }
    if (!any) throw ValidationError("template '" + m_.template_name + "' needs " + kind + " variants");
  }

  // Captures cover the plan layers, or every swept window for an ablation.
  LayerWindow capture_window() const {
    if (!windows_.empty()) {
      return {std::min_element(windows_.begin(), windows_.end(), [](auto& a, auto& b) { return a.first < b.first; })->first,
              std::max_element(windows_.begin(), windows_.end(), [](auto& a, auto& b) { return a.last < b.last; })->last};
    }
    return {m_.plan.layers.front(), m_.plan.layers.back()};
  }

  void set_windows(std::vector<LayerWindow> w) {
    check_disjoint(w);
    std::sort(w.begin(), w.end(), [](auto& a, auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < w.size(); ++i) {
      if (w[i].first != w[i - 1].last + 1) throw ValidationError("ablation windows must be contiguous to share one core");
    }
    windows_ = std::move(w);
  }

  const ExperimentInputs& in() const { return in_; }

 private:
  void add_recipe(const CoreRecipe& r) {
    for (const auto& existing : m_.recipes) {
      if (existing.core_id == r.core_id) {
        if (existing.kind != r.kind || existing.prompt != r.prompt || existing.parents != r.parents) {
          throw ValidationError("core id '" + r.core_id + "' would name two different cores");
        }
        return;
      }
    }
    check_core_id(r.core_id);
    m_.recipes.push_back(r);
  }

  const ExperimentInputs& in_;
  const CoreLibrary* library_;
  Manifest m_;
  std::vector<const Chain*> eval_;
  std::vector<LayerWindow> windows_;
};

void build(const std::string& name, Builder& b) {
  const auto& in = b.in();
  if (name == "baseline_collapse") {
    for (const auto* c : b.eval()) {
      b.baseline(*c, OrderLevel::O2);
      b.baseline(*c, OrderLevel::O5);
    }
  } else if (name == "pilot_release") {
    if (in.crc_prompt.empty()) throw ValidationError("pilot_release needs a CRC prompt");
    const auto core = b.role("release");
    for (const auto* c : b.eval()) {
      b.baseline(*c, OrderLevel::O2);
      b.baseline(*c, OrderLevel::O5);
      b.add(*c, OrderLevel::O5, Condition::CrcPrompt, c->order(OrderLevel::O5) + "\n\n" + in.crc_prompt);
      b.patched(*c, core);
    }
  } else if (name == "layer_ablation") {
    std::vector<LayerWindow> windows = in.windows;
    if (windows.empty()) windows.assign(kAblationWindows.begin(), kAblationWindows.end());
    b.set_windows(windows);
    const auto core = b.role("release");
    for (const auto* c : b.eval()) {
      b.baseline(*c);
      for (const auto& w : windows) {
        b.add(*c, OrderLevel::O5, Condition::Patched, c->order(OrderLevel::O5), core, "window:" + w.label(),
              PatchPlan{w.layers(), b.plan().mode, b.plan().scale, b.plan().position_policy});
      }
    }
  } else if (name == "bidirectional") {
    const auto safety = b.role("safety");
    std::string absorb;
    if (auto it = in.cores.find("absorb"); it != in.cores.end()) {
      absorb = b.existing(it->second);
    } else if (!in.anchor_chain_ids.empty()) {
      absorb = b.from_anchors(in.anchor_chain_ids, Polarity::Absorb, false);
    } else {
      throw ValidationError("bidirectional needs an 'absorb' core or anchor chains");
    }
    for (const auto* c : b.eval()) {
      b.baseline(*c, OrderLevel::O5);
      b.patched(*c, safety, OrderLevel::O5);
    }
    std::vector<const Chain*> suppress;
    if (in.suppress_chain_ids.empty()) {
      suppress = b.eval();
    } else {
      for (int id : in.suppress_chain_ids) suppress.push_back(&b.chain(id));
    }
    for (const auto* c : suppress) {
      b.baseline(*c, OrderLevel::O2);
      b.patched(*c, absorb, OrderLevel::O2);
    }
  } else if (name == "global_release") {
    const auto core = b.role("release");
    for (const auto* c : b.eval()) {
      b.baseline(*c);
      b.patched(*c, core);
    }
  } else if (name == "anchor_pair_sweep") {
    if (in.anchor_chain_ids.size() < 2) throw ValidationError("anchor_pair_sweep needs at least two anchor chains");
    std::vector<std::string> cores;
    for (const auto& [x, y] : sample_pairs(in.anchor_chain_ids, in.pair_count, in.seed)) {
      const int ids[] = {x, y};
      cores.push_back(b.from_anchors(ids, Polarity::Safety, false));
    }
    for (const auto* c : b.eval()) {
      b.baseline(*c);
      for (const auto& core : cores) b.patched(*c, core);
    }
  } else if (name == "solo_ranking") {
    if (in.anchor_chain_ids.empty()) throw ValidationError("solo_ranking needs anchor chains");
    std::vector<std::string> cores;
    for (int id : in.anchor_chain_ids) cores.push_back(b.anchor_core(id, Polarity::Safety, false));
    for (const auto* c : b.eval()) {
      b.baseline(*c);
      for (const auto& core : cores) b.patched(*c, core);
    }
  } else if (name == "synthetic_eval") {
    if (in.synthetic_anchors.empty()) throw ValidationError("synthetic_eval needs synthetic anchors");
    std::vector<std::string> cores;
    for (const auto& a : in.synthetic_anchors) {
      cores.push_back(b.capture("safety-s" + std::to_string(a.id), Polarity::Safety,
                                "synthetic:" + std::to_string(a.id), a.text, OrderLevel::O2));
    }
    for (const auto* c : b.eval()) {
      b.baseline(*c);
      for (const auto& core : cores) b.patched(*c, core);
    }
  } else if (name == "epistemic_control") {
    if (in.anchor_chain_ids.empty()) throw ValidationError("epistemic_control needs anchor chains");
    const auto false_core = b.from_anchors(in.anchor_chain_ids, Polarity::Safety, false);
    const auto true_core = b.from_anchors(in.anchor_chain_ids, Polarity::Safety, true);
    for (const auto* c : b.eval()) {
      b.baseline(*c);
      b.patched(*c, false_core);
      b.patched(*c, true_core);
    }
  } else if (name == "framing_two_arm" || name == "paraphrase_variants") {
    const bool framing = name == "framing_two_arm";
    const std::string kind = framing ? "framing" : "paraphrase";
    const Condition cond = framing ? Condition::FramingVariant : Condition::ParaphraseVariant;
    b.require_variants(kind);
    const auto core = b.role("release");
    for (const auto* c : b.eval()) {
      const auto variants = b.variants_of(*c, kind);
      if (variants.empty()) continue;
      if (framing) {
        b.baseline(*c);
        b.patched(*c, core);
      }
      for (const auto* v : variants) {
        b.add(*c, OrderLevel::O5, cond, v->text, std::nullopt, v->tag);
        b.add(*c, OrderLevel::O5, cond, v->text, core, v->tag);
      }
    }
  } else if (name == "blend_test") {
    const auto a = b.role("global");
    auto it = in.cores.find("cluster");
    if (it == in.cores.end()) throw ValidationError("blend_test needs a 'cluster' core");
    const auto blended = b.blend(a, b.existing(it->second));
    for (const auto* c : b.eval()) {
      b.baseline(*c);
      b.patched(*c, blended);
    }
  } else if (name == "routed_deploy") {
    if (!in.routing) throw ValidationError("routed_deploy needs a routing table");
    for (const auto& core : referenced_cores(*in.routing)) b.existing(core);
    for (const auto* c : b.eval()) {
      b.baseline(*c);
      b.patched(*c, route(*c, *in.routing), OrderLevel::O5, "routed");
    }
  } else {
    throw ValidationError("unknown template '" + name + "'");
  }
}

}  // namespace

Manifest dry_run(const std::string& template_name, const ExperimentInputs& inputs, const CoreLibrary* library) {
  const auto& names = template_names();
  if (std::find(names.begin(), names.end(), template_name) == names.end()) {
    throw ValidationError("unknown template '" + template_name + "'");
  }
  if (inputs.plan && inputs.plan->layers.empty()) throw ValidationError("patch plan has no layers");
  Builder b(template_name, inputs, library);
  build(template_name, b);
  auto m = b.take();
  std::set<std::string> ids;
  for (const auto& r : m.runs) {
    if (!ids.insert(r.run_id).second) {
      throw ValidationError("template produced the run " + r.key() + " twice; check for duplicate chain ids");
    }
  }
  return m;
}

// ---- execution ------------------------------------------------------------------

fs::path manifest_path(const RunStore& store, const std::string& experiment) {
  return store.file_for(experiment).replace_extension(".manifest.json");
}

namespace {

ActivationCore build_core(const CoreRecipe& r, Backend& backend, const std::map<std::string, ActivationCore>& built) {
  auto parent = [&](const std::string& id) -> const ActivationCore& {
    auto it = built.find(id);
    if (it == built.end()) throw ValidationError("recipe for '" + r.core_id + "' needs missing core '" + id + "'");
    return it->second;
  };
  switch (r.kind) {
    case CoreRecipe::Kind::Capture: {
      CaptureOptions o;
      o.core_id = r.core_id;
      o.anchors = {r.anchor};
      o.order_level = r.order_level;
      o.construction = r.anchor.starts_with("synthetic:") ? Construction::SyntheticAnchor : Construction::Single;
      return capture_core(backend, r.prompt, r.window, r.polarity, o);
    }
    case CoreRecipe::Kind::Average: {
      std::vector<ActivationCore> parts;
      for (const auto& p : r.parents) parts.push_back(parent(p));
      return average_cores(parts, r.core_id);
    }
    case CoreRecipe::Kind::Blend:
      return blend_cores(parent(r.parents.at(0)), parent(r.parents.at(1)), r.core_id);
    case CoreRecipe::Kind::Existing:
      break;
  }
  throw ValidationError("core '" + r.core_id + "' has no recipe");
}

}  // namespace

ExperimentResult run_experiment(const Manifest& manifest, std::span<Backend* const> backends, CoreLibrary& library,
                                RunStore& store, const ExecutionOptions& options) {
  if (backends.empty()) throw ValidationError("no backend to run on");
  const BackendDescriptor& descriptor = backends.front()->descriptor();
  for (auto* b : backends) {
    if (b->descriptor() != descriptor) throw ValidationError("worker backends describe different models");
  }

  ExperimentResult result;
  result.manifest = manifest;
  result.manifest.backend = descriptor;

  const auto mpath = manifest_path(store, manifest.experiment);
  if (fs::exists(mpath)) {
    std::ifstream in(mpath);
    json prior;
    try {
      prior = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError("unreadable manifest " + mpath.string() + ": " + e.what());
    }
    if (prior.contains("backend") && !prior["backend"].is_null() && descriptor_from_json(prior["backend"]) != descriptor) {
      throw ValidationError("experiment '" + manifest.experiment + "' was run on " +
                            prior["backend"].value("model_id", std::string("?")) + ", not " + descriptor.model_id +
                            "; use a new experiment name or run directory");
    }
  }

  // Cores: existing ones load from the library, recipes build once and are
  // saved so later runs reuse the same bytes.
  std::map<std::string, ActivationCore> cores;
  for (const auto& r : manifest.recipes) {
    if (r.kind == CoreRecipe::Kind::Existing || library.has(r.core_id)) {
      cores.emplace(r.core_id, library.load(r.core_id));
    } else {
      auto core = build_core(r, *backends.front(), cores);
      library.save(core);
      cores.emplace(r.core_id, std::move(core));
    }
    result.manifest.core_checksums[r.core_id] = to_hex(core_checksum(cores.at(r.core_id)));
  }

  // Nothing is written for a manifest whose cores cannot be injected.
  for (const auto& run : manifest.runs) {
    if (!run.core_id) continue;
    auto found = cores.find(*run.core_id);
    if (found == cores.end()) throw ValidationError("run " + run.run_id + " uses core '" + *run.core_id + "' with no recipe");
    const auto& core = found->second;
    if (core.model_id != descriptor.model_id) {
      throw ValidationError("core '" + core.core_id + "' was captured on '" + core.model_id + "', backend is '" +
                            descriptor.model_id + "'");
    }
    try {
      backends.front()->check_injection(core, *run.plan);
    } catch (const ValidationError& e) {
      throw ValidationError(run.run_id + ": " + e.what());
    }
  }

  {
    fs::create_directories(store.dir());
    const auto tmp = fs::path(mpath).concat(".tmp");
    std::ofstream out(tmp, std::ios::trunc);
    out << to_json(result.manifest).dump(2) << '\n';
    out.close();
    if (!out) throw Error("cannot write " + tmp.string());
    fs::rename(tmp, mpath);
  }

  std::map<std::string, RunRecord> done;
  for (auto& r : store.records(manifest.experiment)) {
    if (r.status == RunStatus::Ok) done.emplace(r.run_id, std::move(r));
  }
  std::vector<PlannedRun> todo;
  for (const auto& run : manifest.runs) {
    auto it = done.find(run.run_id);
    if (it == done.end()) {
      todo.push_back(run);
      continue;
    }
    if (run.core_id && it->second.core_checksum != result.manifest.core_checksums.at(*run.core_id)) {
      throw ValidationError("run " + run.run_id + " was generated with different bytes for core '" + *run.core_id +
                            "'; use a new core id or experiment name");
    }
  }

  const auto fresh = execute_runs(
      backends, todo,
      [&cores](const std::string& id) -> const ActivationCore* {
        auto it = cores.find(id);
        return it == cores.end() ? nullptr : &it->second;
      },
      ExecutionOptions{&store, options.progress});

  std::map<std::string, const RunRecord*> by_id;
  for (const auto& r : fresh) by_id.emplace(r.run_id, &r);
  for (const auto& run : manifest.runs) {
    if (auto it = by_id.find(run.run_id); it != by_id.end()) {
      result.records.push_back(*it->second);
    } else {
      result.records.push_back(done.at(run.run_id));
    }
  }
  result.executed = fresh.size();
  result.skipped = manifest.runs.size() - fresh.size();
  return result;
}

}  // namespace ordergap
