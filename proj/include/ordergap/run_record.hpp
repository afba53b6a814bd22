#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ordergap/chain.hpp"
#include "ordergap/plan.hpp"

namespace ordergap {

enum class Condition { Baseline, CrcPrompt, Patched, FramingVariant, ParaphraseVariant };
enum class RunStatus { Ok, Failed };

std::string_view to_string(Condition c);
Condition parse_condition(std::string_view text);
std::string_view to_string(RunStatus s);
RunStatus parse_run_status(std::string_view text);

// One generated response under one condition; the unit of persistence.
struct RunRecord {
  std::string run_id;
  std::string experiment;
  int chain_id = 0;
  OrderLevel order_level = OrderLevel::O5;
  Condition condition = Condition::Baseline;
  std::optional<std::string> core_id;
  std::string core_checksum;  // hex FNV-1a of the core payload, empty when unpatched
  std::string plan;           // PatchPlan::summary(), empty when unpatched
  std::string variant;        // variant tag, empty for the chain's own prompt
  std::uint64_t prompt_hash = 0;
  std::string prompt;
  std::string response_text;
  RunStatus status = RunStatus::Ok;
  std::string error;  // failure message when status == Failed
  std::optional<Grade> grade;
  std::optional<std::string> grader;
  std::string timestamp;

  // (experiment, chain, order, condition, core, variant): unique per pass.
  std::string key() const;
  bool patched() const { return core_id.has_value(); }
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

// A run that a template will execute: everything but the response.
struct PlannedRun {
  std::string run_id;
  std::string experiment;
  int chain_id = 0;
  OrderLevel order_level = OrderLevel::O5;
  Condition condition = Condition::Baseline;
  std::optional<std::string> core_id;
  std::optional<PatchPlan> plan;
  std::string variant;
  std::string prompt;
  std::uint64_t prompt_hash = 0;
  int max_new_tokens = 0;

  std::string key() const;
};

nlohmann::json to_json(const PlannedRun& r);

// Deterministic run id: "<experiment>-<16 hex>" over the key and prompt hash.
std::string make_run_id(std::string_view experiment, std::string_view key, std::uint64_t prompt_hash);

PlannedRun plan_run(std::string experiment, int chain_id, OrderLevel level, Condition condition,
                    std::string prompt, int max_new_tokens, std::optional<std::string> core_id = std::nullopt,
                    std::optional<PatchPlan> plan = std::nullopt, std::string variant = {});

}  // namespace ordergap
