#include "ordergap/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ordergap/backend.hpp"
#include "ordergap/chain.hpp"
#include "ordergap/cluster.hpp"
#include "ordergap/core_forge.hpp"
#include "ordergap/errors.hpp"
#include "ordergap/experiment.hpp"
#include "ordergap/grade_server.hpp"
#include "ordergap/grade_store.hpp"
#include "ordergap/hash.hpp"
#include "ordergap/json_io.hpp"
#include "ordergap/remote_backend.hpp"
#include "ordergap/report.hpp"

namespace ordergap {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigName = "ordergap.json";

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw Error("cannot write " + path.string());
}

std::vector<int> parse_ids(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("'" + item + "' is not a chain id");
    }
  }
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// "a,b;c,d" -> [[a,b],[c,d]]
std::vector<std::vector<double>> parse_table(const std::string& text) {
  std::vector<std::vector<double>> t;
  for (const auto& row : split(text, ';')) {
    std::vector<double> r;
    for (const auto& cell : split(row, ',')) {
      try {
        r.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ValidationError("'" + cell + "' is not a count");
      }
    }
    t.push_back(std::move(r));
  }
  return t;
}

// Values shared by every subcommand. Unset flags fall back to the run
// directory's config file, then to these defaults.
struct Common {
  std::string run_dir = ".";
  std::string benchmark;
  std::string model = "mock";
  std::string endpoint;
  std::uint64_t seed = 0;
  int workers = 1;
  int max_new_tokens = 512;
  json config = json::object();

  fs::path cores_dir() const { return fs::path(run_dir) / "cores"; }
  fs::path runs_dir() const { return fs::path(run_dir) / "runs"; }

  std::vector<Chain> chains() const {
    if (benchmark.empty()) throw ValidationError("no benchmark given (--bench or \"benchmark\" in " + std::string(kConfigName) + ")");
    return load_benchmark(resolve(benchmark));
  }

  // Relative paths in the config file are relative to the run directory.
  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() || fs::exists(path) ? path : fs::path(run_dir) / path;
  }

  std::vector<std::unique_ptr<Backend>> backends() const {
    if (workers < 1) throw ValidationError("--workers must be at least 1");
    std::vector<std::unique_ptr<Backend>> out;
    const auto factory = backend_factory(model, endpoint);
    for (int i = 0; i < workers; ++i) out.push_back(factory());
    return out;
  }
};

template <typename T>
void fallback(CLI::Option* opt, T& value, const json& config, const char* key) {
  if (opt->count() > 0 || !config.contains(key)) return;
  try {
    value = config.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string(kConfigName) + " key '" + key + "': " + e.what());
  }
}

struct InputFlags {
  std::string name;
  std::string chains;
  std::vector<std::string> cores;  // role=id
  std::string anchors;
  std::string suppress;
  std::string synthetic;
  std::string variants;
  std::string routing;
  std::string windows;
  std::string crc_prompt;
  std::string plan_file;
  std::string window = "24-31";
  std::string mode = "replace";
  double scale = 1.0;
  std::string policy = "prefill_last_token";
  int pairs = 50;
  std::map<std::string, CLI::Option*> opts;
};

void add_input_flags(CLI::App* cmd, InputFlags& f) {
  f.opts["name"] = cmd->add_option("--name", f.name, "Experiment name in the run store (default: template)");
  f.opts["chains"] = cmd->add_option("--chains", f.chains, "Comma-separated chain ids to evaluate (default: all)");
  f.opts["cores"] = cmd->add_option("--core", f.cores, "Core for a template role, as role=core_id");
  f.opts["anchors"] = cmd->add_option("--anchors", f.anchors, "Comma-separated anchor chain ids");
  f.opts["suppress_chains"] = cmd->add_option("--suppress-chains", f.suppress, "Chains for the O2 suppress arm");
  f.opts["synthetic"] = cmd->add_option("--synthetic", f.synthetic, "Synthetic anchors file (JSON lines)");
  f.opts["variants"] = cmd->add_option("--variants", f.variants, "Prompt variants file (JSON lines)");
  f.opts["routing"] = cmd->add_option("--routing", f.routing, "Routing table file");
  f.opts["windows"] = cmd->add_option("--windows", f.windows, "Ablation windows, e.g. 0-7,8-15,16-23,24-31");
  f.opts["crc_prompt"] = cmd->add_option("--crc-prompt", f.crc_prompt, "Text file appended for the CRC condition");
  f.opts["plan"] = cmd->add_option("--plan", f.plan_file, "Patch plan file (overrides --window/--mode)");
  f.opts["window"] = cmd->add_option("--window", f.window, "Injection window")->capture_default_str();
  f.opts["mode"] = cmd->add_option("--mode", f.mode, "replace or add_scaled")->check(CLI::IsMember({"replace", "add_scaled"}));
  f.opts["scale"] = cmd->add_option("--scale", f.scale, "Scale for add_scaled");
  f.opts["policy"] = cmd->add_option("--policy", f.policy, "prefill_last_token or every_step")
                         ->check(CLI::IsMember({"prefill_last_token", "every_step"}));
  f.opts["pairs"] = cmd->add_option("--pairs", f.pairs, "Anchor pairs to sample");
}

void apply_config(InputFlags& f, const json& c) {
  fallback(f.opts["name"], f.name, c, "name");
  fallback(f.opts["chains"], f.chains, c, "chains");
  fallback(f.opts["anchors"], f.anchors, c, "anchors");
  fallback(f.opts["suppress_chains"], f.suppress, c, "suppress_chains");
  fallback(f.opts["synthetic"], f.synthetic, c, "synthetic");
  fallback(f.opts["variants"], f.variants, c, "variants");
  fallback(f.opts["routing"], f.routing, c, "routing");
  fallback(f.opts["windows"], f.windows, c, "windows");
  fallback(f.opts["crc_prompt"], f.crc_prompt, c, "crc_prompt");
  fallback(f.opts["plan"], f.plan_file, c, "plan");
  fallback(f.opts["window"], f.window, c, "window");
  fallback(f.opts["mode"], f.mode, c, "mode");
  fallback(f.opts["scale"], f.scale, c, "scale");
  fallback(f.opts["policy"], f.policy, c, "policy");
  fallback(f.opts["pairs"], f.pairs, c, "pairs");
  if (f.opts["cores"]->count() == 0 && c.contains("cores")) {
    for (const auto& [role, id] : c.at("cores").items()) f.cores.push_back(role + "=" + id.get<std::string>());
  }
}

PatchPlan make_plan(const InputFlags& f, const Common& common) {
  if (!f.plan_file.empty()) return plan_from_json(read_json_file(common.resolve(f.plan_file)));
  const auto w = parse_window(f.window);
  PatchPlan plan = f.mode == "add_scaled" ? PatchPlan::add_scaled(w, f.scale) : PatchPlan::replace(w);
  plan.position_policy = parse_position_policy(f.policy);
  return plan;
}

ExperimentInputs make_inputs(const InputFlags& f, const Common& common) {
  ExperimentInputs in;
  in.name = f.name;
  in.chains = common.chains();
  in.chain_ids = parse_ids(f.chains);
  for (const auto& entry : f.cores) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size()) {
      throw ValidationError("--core expects role=core_id, got '" + entry + "'");
    }
    in.cores[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  in.plan = make_plan(f, common);
  for (const auto& w : split(f.windows, ',')) in.windows.push_back(parse_window(w));
  if (!f.variants.empty()) in.variants = load_variants(common.resolve(f.variants));
  if (!f.routing.empty()) in.routing = routing_from_json(read_json_file(common.resolve(f.routing)));
  in.anchor_chain_ids = parse_ids(f.anchors);
  if (!f.synthetic.empty()) in.synthetic_anchors = load_synthetic_anchors(common.resolve(f.synthetic));
  in.pair_count = f.pairs;
  in.seed = common.seed;
  if (!f.crc_prompt.empty()) in.crc_prompt = read_text(common.resolve(f.crc_prompt));
  while (!in.crc_prompt.empty() && (in.crc_prompt.back() == '\n' || in.crc_prompt.back() == '\r')) in.crc_prompt.pop_back();
  in.max_new_tokens = common.max_new_tokens;
  in.suppress_chain_ids = parse_ids(f.suppress);
  return in;
}

void print_manifest_summary(std::ostream& out, const Manifest& m) {
  std::map<std::string, int> per_condition;
  for (const auto& r : m.runs) per_condition[std::string(to_string(r.order_level)) + " " + std::string(to_string(r.condition))]++;
  out << "template " << m.template_name << ", experiment " << m.experiment << ": " << m.runs.size() << " runs, "
      << m.recipes.size() << " cores\n";
  for (const auto& [k, n] : per_condition) out << "  " << k << ": " << n << "\n";
  for (const auto& r : m.recipes) out << "  core " << to_json(r).dump() << "\n";
}

int execute_template(const std::string& name, const InputFlags& f, const Common& common, std::ostream& out) {
  CoreLibrary library(common.cores_dir());
  const auto manifest = dry_run(name, make_inputs(f, common), &library);
  auto owned = common.backends();
  std::vector<Backend*> backends;
  for (auto& b : owned) backends.push_back(b.get());
  RunStore store(common.runs_dir());
  const auto result = run_experiment(manifest, backends, library, store);
  std::size_t failed = 0;
  for (const auto& r : result.records) failed += r.status == RunStatus::Failed ? 1 : 0;
  out << "experiment " << manifest.experiment << ": " << result.records.size() << " runs (" << result.executed
      << " generated, " << result.skipped << " already complete, " << failed << " failed)\n";
  out << "manifest " << manifest_path(store, manifest.experiment).string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual-stream core capture, injection and graded release experiments", "ordergap"};
  app.require_subcommand(1);
  Common common;
  auto* run_dir_opt = app.add_option("--run-dir", common.run_dir, "Run directory (config, cores/, runs/)");
  auto* bench_opt = app.add_option("--bench", common.benchmark, "Benchmark file (JSON lines)");
  auto* model_opt = app.add_option("--model", common.model, "Backend model id: mock, mock:LxD, or a sidecar model");
  auto* endpoint_opt = app.add_option("--endpoint", common.endpoint, "Sidecar URL for non-mock models");
  auto* seed_opt = app.add_option("--seed", common.seed, "Seed for every random choice");
  auto* workers_opt = app.add_option("--workers", common.workers, "Parallel backend workers");
  auto* tokens_opt = app.add_option("--max-new-tokens", common.max_new_tokens, "Generation budget per run");
  (void)run_dir_opt;

  // validate
  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Lint a benchmark file");
  validate->add_option("file", validate_path, "Benchmark file")->required();

  // capture-core
  auto* capture = app.add_subcommand("capture-core", "Capture a core from an anchor prompt");
  std::string cap_id, cap_prompt, cap_synthetic, cap_window = "24-31", cap_polarity = "safety", cap_order;
  int cap_chain = -1, cap_anchor = -1;
  bool cap_true = false, cap_override = false;
  capture->add_option("--id", cap_id, "Core id");
  capture->add_option("--chain", cap_chain, "Anchor chain id");
  capture->add_option("--order", cap_order, "Anchor order level (default O2 for safety, O5 for absorb)");
  capture->add_flag("--true-premise", cap_true, "Use the chain's true-precondition prompt");
  capture->add_option("--prompt", cap_prompt, "Literal anchor prompt");
  capture->add_option("--synthetic", cap_synthetic, "Synthetic anchors file");
  capture->add_option("--anchor-id", cap_anchor, "Synthetic anchor id");
  capture->add_option("--window", cap_window, "Captured layers")->capture_default_str();
  capture->add_option("--polarity", cap_polarity, "safety or absorb")->check(CLI::IsMember({"safety", "absorb"}));
  capture->add_flag("--override", cap_override, "Allow a capture order against the polarity convention");

  // combine-core
  auto* combine = app.add_subcommand("combine-core", "Average or blend stored cores");
  std::string combine_method, combine_id;
  std::vector<std::string> combine_cores;
  combine->add_option("method", combine_method, "average or blend")->required()->check(CLI::IsMember({"average", "blend"}));
  combine->add_option("--cores", combine_cores, "Input core ids")->required()->delimiter(',');
  combine->add_option("--id", combine_id, "Output core id");

  // run / dry-run / sweep
  std::string template_name;
  InputFlags run_flags, dry_flags, sweep_flags;
  auto* run = app.add_subcommand("run", "Execute an experiment template");
  run->add_option("template", template_name, "Template name")->required()->check(CLI::IsMember(template_names()));
  add_input_flags(run, run_flags);
  auto* dry = app.add_subcommand("dry-run", "Print a template's run manifest without loading a model");
  dry->add_option("template", template_name, "Template name")->required()->check(CLI::IsMember(template_names()));
  std::string dry_out;
  bool dry_json = false;
  dry->add_option("--out", dry_out, "Write the manifest JSON here");
  dry->add_flag("--json", dry_json, "Print the manifest JSON");
  add_input_flags(dry, dry_flags);
  auto* sweep = app.add_subcommand("sweep", "Layer-window ablation sweep (the layer_ablation template)");
  add_input_flags(sweep, sweep_flags);

  // cluster
  auto* cluster = app.add_subcommand("cluster", "Ward clustering of O5 activations");
  std::string cl_chains, cl_non_released, cl_core, cl_out, cl_window = "24-31";
  int cl_k = 4;
  cluster->add_option("--chains", cl_chains, "Chains to cluster");
  cluster->add_option("--non-released", cl_non_released, "Cluster chains not released in this experiment");
  cluster->add_option("--core", cl_core, "Core whose arm decides release (with --non-released)");
  cluster->add_option("--k", cl_k, "Cluster count")->capture_default_str();
  cluster->add_option("--window", cl_window, "Feature layers")->capture_default_str();
  cluster->add_option("--out", cl_out, "Cluster model file (default <run-dir>/cluster.json)");

  // route
  auto* route_cmd = app.add_subcommand("route", "Build or query a routing table");
  std::string rt_cluster, rt_default, rt_out, rt_table;
  std::vector<std::string> rt_labels;
  int rt_chain = -1;
  route_cmd->add_option("--cluster", rt_cluster, "Cluster model file");
  route_cmd->add_option("--label", rt_labels, "Cluster label to core, as label=core_id");
  route_cmd->add_option("--default", rt_default, "Default core id");
  route_cmd->add_option("--out", rt_out, "Routing table file (default <run-dir>/routing.json)");
  route_cmd->add_option("--table", rt_table, "Existing routing table to query");
  route_cmd->add_option("--chain", rt_chain, "Chain to route");

  // report
  auto* report = app.add_subcommand("report", "Grade summary and release metrics for an experiment");
  std::string rp_experiment, rp_o2, rp_chi, rp_cross_cores, rp_populations;
  bool rp_json = false;
  report->add_option("experiment", rp_experiment, "Experiment name")->required();
  report->add_option("--o2-experiment", rp_o2, "Experiment with O2 baselines for collapsed-only sweep rates");
  report->add_option("--chi-square", rp_chi, "Contingency table, rows ';' cells ',' e.g. 10,20;30,40");
  report->add_option("--cross-cores", rp_cross_cores, "Cores for the cross-core matrix");
  report->add_option("--populations", rp_populations, "Populations file {name: [chain ids]}");
  report->add_flag("--json", rp_json, "Machine-readable output");

  // serve
  auto* serve = app.add_subcommand("serve", "Grading API and console assets");
  std::string sv_host = "127.0.0.1", sv_assets;
  int sv_port = 8080;
  auto* sv_host_opt = serve->add_option("--host", sv_host, "Bind address")->capture_default_str();
  auto* sv_port_opt = serve->add_option("--port", sv_port, "Port")->capture_default_str();
  serve->add_option("--assets", sv_assets, "Built console assets directory");

  // backend-serve
  auto* bserve = app.add_subcommand("backend-serve", "Serve a backend over the sidecar protocol");
  std::string bs_host = "127.0.0.1";
  int bs_port = 8090;
  bserve->add_option("--host", bs_host, "Bind address")->capture_default_str();
  bserve->add_option("--port", bs_port, "Port")->capture_default_str();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n\n" << app.help();
      return kExitValidation;
    }

    const fs::path config_path = fs::path(common.run_dir) / kConfigName;
    if (fs::exists(config_path)) common.config = read_json_file(config_path);
    const json& cfg = common.config;
    fallback(bench_opt, common.benchmark, cfg, "benchmark");
    fallback(model_opt, common.model, cfg, "model");
    fallback(endpoint_opt, common.endpoint, cfg, "endpoint");
    fallback(seed_opt, common.seed, cfg, "seed");
    fallback(workers_opt, common.workers, cfg, "workers");
    fallback(tokens_opt, common.max_new_tokens, cfg, "max_new_tokens");
    fallback(sv_host_opt, sv_host, cfg, "host");
    fallback(sv_port_opt, sv_port, cfg, "port");

    if (validate->parsed()) {
      const auto chains = load_benchmark(validate_path);
      std::map<PremiseClass, int> classes;
      for (const auto& c : chains) classes[c.premise_class]++;
      out << validate_path << ": " << chains.size() << " chains ok";
      for (const auto& [k, n] : classes) out << ", " << n << " " << to_string(k);
      out << "\n";
      return kExitOk;
    }

    if (capture->parsed()) {
      const Polarity polarity = parse_polarity(cap_polarity);
      std::string prompt;
      CaptureOptions o;
      o.core_id = cap_id;
      o.polarity_override = cap_override;
      const int sources = (cap_chain >= 0) + !cap_prompt.empty() + (cap_anchor >= 0);
      if (sources != 1) throw ValidationError("give exactly one of --chain, --prompt, --anchor-id");
      if (!cap_order.empty()) o.order_level = parse_order_level(cap_order);
      if (cap_chain >= 0) {
        const auto chains = common.chains();
        const Chain* c = find_chain(chains, cap_chain);
        if (c == nullptr) throw ValidationError("chain " + std::to_string(cap_chain) + " is not in the benchmark");
        const OrderLevel level = o.order_level.value_or(polarity == Polarity::Safety ? OrderLevel::O2 : OrderLevel::O5);
        o.order_level = level;
        prompt = cap_true ? true_premise_prompt(*c, level) : c->order(level);
        o.anchors = {"chain:" + std::to_string(c->id) + ":" + std::string(to_string(level)) + (cap_true ? ":true" : "")};
      } else if (cap_anchor >= 0) {
        if (cap_synthetic.empty()) throw ValidationError("--anchor-id needs --synthetic");
        for (const auto& a : load_synthetic_anchors(common.resolve(cap_synthetic))) {
          if (a.id == cap_anchor) prompt = a.text;
        }
        if (prompt.empty()) throw ValidationError("synthetic anchor " + std::to_string(cap_anchor) + " not found");
        o.anchors = {"synthetic:" + std::to_string(cap_anchor)};
        o.construction = Construction::SyntheticAnchor;
      } else {
        prompt = cap_prompt;
        o.anchors = {"prompt:" + to_hex(fnv1a64(prompt))};
      }
      auto backend = make_backend(common.model, common.endpoint);
      const auto core = capture_core(*backend, prompt, parse_window(cap_window), polarity, o);
      CoreLibrary(common.cores_dir()).save(core);
      out << core.core_id << " " << to_hex(core_checksum(core)) << " layers " << cap_window << " dim "
          << core.hidden_dim() << "\n";
      return kExitOk;
    }

    if (combine->parsed()) {
      CoreLibrary library(common.cores_dir());
      std::vector<ActivationCore> cores;
      for (const auto& id : combine_cores) cores.push_back(library.load(id));
      ActivationCore result;
      if (combine_method == "blend") {
        if (cores.size() != 2) throw ValidationError("blend takes exactly two cores");
        result = blend_cores(cores[0], cores[1], combine_id);
      } else {
        result = average_cores(cores, combine_id);
      }
      library.save(result);
      out << result.core_id << " " << to_hex(core_checksum(result)) << "\n";
      return kExitOk;
    }

    if (run->parsed()) {
      apply_config(run_flags, cfg);
      return execute_template(template_name, run_flags, common, out);
    }

    if (sweep->parsed()) {
      apply_config(sweep_flags, cfg);
      return execute_template("layer_ablation", sweep_flags, common, out);
    }

    if (dry->parsed()) {
      apply_config(dry_flags, cfg);
      CoreLibrary library(common.cores_dir());
      const auto manifest = dry_run(template_name, make_inputs(dry_flags, common), &library);
      if (!dry_out.empty()) write_json_file(dry_out, to_json(manifest));
      if (dry_json) {
        out << to_json(manifest).dump(2) << "\n";
      } else {
        print_manifest_summary(out, manifest);
      }
      return kExitOk;
    }

    if (cluster->parsed()) {
      const auto chains = common.chains();
      std::vector<int> ids = parse_ids(cl_chains);
      if (!cl_non_released.empty()) {
        if (!ids.empty()) throw ValidationError("give --chains or --non-released, not both");
        if (cl_core.empty()) throw ValidationError("--non-released needs --core");
        RunStore store(common.runs_dir());
        GradeStore grades(store, chains);
        const auto records = grades.graded_records(cl_non_released);
        const auto report = release_rate(records, {}, baseline_arm(), patched_arm(cl_core));
        std::set<int> released_ids(report.released_ids.begin(), report.released_ids.end());
        const auto pr = pair_records(records, {}, baseline_arm(), patched_arm(cl_core));
        for (const auto& p : pr.pairs) {
          if (!released_ids.contains(p.chain_id)) ids.push_back(p.chain_id);
        }
      }
      if (ids.empty()) throw ValidationError("no chains to cluster");
      const auto window = parse_window(cl_window);
      auto backend = make_backend(common.model, common.endpoint);
      FeatureSet features;
      for (int id : ids) {
        const Chain* c = find_chain(chains, id);
        if (c == nullptr) throw ValidationError("chain " + std::to_string(id) + " is not in the benchmark");
        const auto vectors = backend->capture_residual(c->order(OrderLevel::O5), window.layers());
        Feature f;
        for (const auto& [layer, v] : vectors) f.insert(f.end(), v.begin(), v.end());
        features.emplace_back(id, std::move(f));
      }
      const auto model = ward_cluster(features, cl_k);
      const fs::path path = cl_out.empty() ? fs::path(common.run_dir) / "cluster.json" : fs::path(cl_out);
      json j = to_json(model);
      j["feature_window"] = window.label();
      j["model_id"] = backend->descriptor().model_id;
      write_json_file(path, j);
      std::map<int, std::vector<int>> members;
      for (const auto& [id, label] : model.assignments) members[label].push_back(id);
      for (const auto& [label, m] : members) {
        out << "cluster " << label << " (" << m.size() << "):";
        for (int id : m) out << " " << id;
        out << "\n";
      }
      out << "wrote " << path.string() << "\n";
      return kExitOk;
    }

    if (route_cmd->parsed()) {
      if (!rt_table.empty()) {
        const auto table = routing_from_json(read_json_file(common.resolve(rt_table)));
        if (rt_chain < 0) throw ValidationError("--table needs --chain");
        out << route(rt_chain, table) << "\n";
        return kExitOk;
      }
      if (rt_cluster.empty() || rt_default.empty()) throw ValidationError("route needs --cluster and --default, or --table");
      const auto model = cluster_model_from_json(read_json_file(common.resolve(rt_cluster)));
      std::map<int, std::string> label_cores;
      for (const auto& entry : rt_labels) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos) throw ValidationError("--label expects label=core_id, got '" + entry + "'");
        int label = 0;
        try {
          label = std::stoi(entry.substr(0, eq));
        } catch (const std::exception&) {
          throw ValidationError("bad cluster label in '" + entry + "'");
        }
        if (label < 0 || label >= model.k) throw ValidationError("cluster label " + std::to_string(label) + " out of range");
        label_cores[label] = entry.substr(eq + 1);
      }
      const auto table = routing_from_clusters(model, label_cores, rt_default);
      CoreLibrary library(common.cores_dir());
      validate_routing(table, [&](const std::string& id) { return library.has(id); });
      const fs::path path = rt_out.empty() ? fs::path(common.run_dir) / "routing.json" : fs::path(rt_out);
      write_json_file(path, to_json(table));
      out << table.entries.size() << " routed chains, default " << table.default_core << "; wrote " << path.string()
          << "\n";
      return kExitOk;
    }

    if (report->parsed()) {
      std::vector<Chain> chains;
      if (!common.benchmark.empty()) chains = common.chains();
      RunStore store(common.runs_dir());
      GradeStore grades(store, chains);
      ReportOptions options;
      if (!rp_o2.empty()) options.o2_experiment = rp_o2;
      if (!rp_chi.empty()) options.chi_table = parse_table(rp_chi);
      if (!rp_cross_cores.empty()) {
        options.cross_cores = split(rp_cross_cores, ',');
        if (rp_populations.empty()) throw ValidationError("--cross-cores needs --populations");
        for (const auto& [name, ids] : read_json_file(common.resolve(rp_populations)).items()) {
          options.cross_populations.emplace_back(name, ids.get<std::vector<int>>());
        }
      }
      const auto r = build_report(grades, rp_experiment, options);
      out << (rp_json ? r.data.dump(2) + "\n" : r.text);
      return kExitOk;
    }

    if (serve->parsed()) {
      std::vector<Chain> chains;
      if (!common.benchmark.empty()) chains = common.chains();
      RunStore store(common.runs_dir());
      GradeStore grades(store, chains);
      GradeServer server(grades, sv_assets);
      server.listen(sv_host, sv_port, [&](int port) {
        out << "grading API on http://" << sv_host << ":" << port << "\n" << std::flush;
      });
      return kExitOk;
    }

    if (bserve->parsed()) {
      auto backend = make_backend(common.model, common.endpoint);
      BackendServer server(*backend);
      server.listen(bs_host, bs_port, [&](int port) {
        out << backend->descriptor().model_id << " on http://" << bs_host << ":" << port << "\n" << std::flush;
      });
      return kExitOk;
    }
    err << app.help();
    return kExitValidation;
  } catch (const IncompleteGradingError& e) {
    err << "error: grading incomplete, " << e.what() << "\n";
    return kExitIncomplete;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const BackendError& e) {
    err << "error: backend: " << e.what() << "\n";
    return kExitBackend;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace ordergap
