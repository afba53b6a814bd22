#include "ordergap/run_record.hpp"

#include "ordergap/errors.hpp"
#include "ordergap/hash.hpp"
#include "ordergap/json_io.hpp"

namespace ordergap {

using nlohmann::json;

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::Baseline: return "baseline";
    case Condition::CrcPrompt: return "crc_prompt";
    case Condition::Patched: return "patched";
    case Condition::FramingVariant: return "framing_variant";
    case Condition::ParaphraseVariant: return "paraphrase_variant";
  }
  return "baseline";
}

Condition parse_condition(std::string_view text) {
  for (auto c : {Condition::Baseline, Condition::CrcPrompt, Condition::Patched, Condition::FramingVariant,
                 Condition::ParaphraseVariant}) {
    if (text == to_string(c)) return c;
  }
  throw ValidationError("unknown condition '" + std::string(text) + "'");
}

std::string_view to_string(RunStatus s) { return s == RunStatus::Ok ? "ok" : "failed"; }

RunStatus parse_run_status(std::string_view text) {
  if (text == "ok") return RunStatus::Ok;
  if (text == "failed") return RunStatus::Failed;
  throw ValidationError("unknown run status '" + std::string(text) + "'");
}

namespace {

std::string make_key(std::string_view experiment, int chain_id, OrderLevel level, Condition condition,
                     const std::optional<std::string>& core_id, std::string_view variant) {
  std::string k(experiment);
  k += '|';
  k += std::to_string(chain_id);
  k += '|';
  k += to_string(level);
  k += '|';
  k += to_string(condition);
  k += '|';
  k += core_id.value_or("-");
  k += '|';
  k += variant.empty() ? std::string_view("-") : variant;
  return k;
}

}  // namespace

std::string RunRecord::key() const {
  return make_key(experiment, chain_id, order_level, condition, core_id, variant);
}

std::string PlannedRun::key() const {
  return make_key(experiment, chain_id, order_level, condition, core_id, variant);
}

std::string make_run_id(std::string_view experiment, std::string_view key, std::uint64_t prompt_hash) {
  const std::uint64_t h = fnv1a64(to_hex(prompt_hash), fnv1a64(key));
  return std::string(experiment) + "-" + to_hex(h);
}

PlannedRun plan_run(std::string experiment, int chain_id, OrderLevel level, Condition condition,
                    std::string prompt, int max_new_tokens, std::optional<std::string> core_id,
                    std::optional<PatchPlan> plan, std::string variant) {
  PlannedRun r;
  r.experiment = std::move(experiment);
  r.chain_id = chain_id;
  r.order_level = level;
  r.condition = condition;
  r.core_id = std::move(core_id);
  r.plan = std::move(plan);
  r.variant = std::move(variant);
  r.prompt = std::move(prompt);
  r.prompt_hash = fnv1a64(r.prompt);
  r.max_new_tokens = max_new_tokens;
  r.run_id = make_run_id(r.experiment, r.key(), r.prompt_hash);
  return r;
}

json to_json(const RunRecord& r) {
  json j{{"run_id", r.run_id},
         {"experiment", r.experiment},
         {"chain_id", r.chain_id},
         {"order_level", std::string(to_string(r.order_level))},
         {"condition", std::string(to_string(r.condition))},
         {"core_id", r.core_id ? json(*r.core_id) : json(nullptr)},
         {"core_checksum", r.core_checksum},
         {"plan", r.plan},
         {"variant", r.variant},
         {"prompt_hash", to_hex(r.prompt_hash)},
         {"prompt", r.prompt},
         {"response_text", r.response_text},
         {"status", std::string(to_string(r.status))},
         {"timestamp", r.timestamp}};
  if (!r.error.empty()) j["error"] = r.error;
  if (r.grade) j["grade"] = std::string(to_string(*r.grade));
  if (r.grader) j["grader"] = *r.grader;
  return j;
}

RunRecord run_record_from_json(const json& j) {
  try {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.experiment = j.at("experiment").get<std::string>();
    r.chain_id = j.at("chain_id").get<int>();
    r.order_level = parse_order_level(j.at("order_level").get<std::string>());
    r.condition = parse_condition(j.at("condition").get<std::string>());
    if (auto it = j.find("core_id"); it != j.end() && !it->is_null()) r.core_id = it->get<std::string>();
    r.core_checksum = j.value("core_checksum", std::string());
    r.plan = j.value("plan", std::string());
    r.variant = j.value("variant", std::string());
    r.prompt_hash = from_hex(j.at("prompt_hash").get<std::string>());
    r.prompt = j.value("prompt", std::string());
    r.response_text = j.value("response_text", std::string());
    r.status = parse_run_status(j.at("status").get<std::string>());
    r.error = j.value("error", std::string());
    if (auto it = j.find("grade"); it != j.end() && !it->is_null()) r.grade = parse_grade(it->get<std::string>());
    if (auto it = j.find("grader"); it != j.end() && !it->is_null()) r.grader = it->get<std::string>();
    r.timestamp = j.value("timestamp", std::string());
    if (r.grade && r.status != RunStatus::Ok) throw ValidationError("run " + r.run_id + " is graded but failed");
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad run record: ") + e.what());
  }
}

json to_json(const PlannedRun& r) {
  json j{{"run_id", r.run_id},
         {"experiment", r.experiment},
         {"chain_id", r.chain_id},
         {"order_level", std::string(to_string(r.order_level))},
         {"condition", std::string(to_string(r.condition))},
         {"core_id", r.core_id ? json(*r.core_id) : json(nullptr)},
         {"plan", r.plan ? json(r.plan->summary()) : json(nullptr)},
         {"variant", r.variant},
         {"prompt_hash", to_hex(r.prompt_hash)},
         {"max_new_tokens", r.max_new_tokens}};
  return j;
}

}  // namespace ordergap
