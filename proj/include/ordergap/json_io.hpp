#pragma once

#include <json.hpp>

#include "ordergap/activation_core.hpp"
#include "ordergap/backend.hpp"
#include "ordergap/plan.hpp"

namespace ordergap {

nlohmann::json layer_vectors_to_json(const LayerVectors& vectors);
LayerVectors layer_vectors_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BackendDescriptor& d);
BackendDescriptor descriptor_from_json(const nlohmann::json& j);

nlohmann::json to_json(const PatchPlan& plan);
PatchPlan plan_from_json(const nlohmann::json& j);

nlohmann::json to_json(const CaptureProvenance& p);
CaptureProvenance provenance_from_json(const nlohmann::json& j);

}  // namespace ordergap
