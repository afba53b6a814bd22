#include "ordergap/json_io.hpp"

#include "ordergap/errors.hpp"

namespace ordergap {

using nlohmann::json;

json layer_vectors_to_json(const LayerVectors& vectors) {
  json j = json::object();
  for (const auto& [layer, v] : vectors) j[std::to_string(layer)] = v;
  return j;
}

LayerVectors layer_vectors_from_json(const json& j) {
  LayerVectors out;
  for (const auto& [key, value] : j.items()) {
    int layer = 0;
    try {
      layer = std::stoi(key);
    } catch (const std::exception&) {
      throw ValidationError("layer key '" + key + "' is not an integer");
    }
    out.emplace(layer, value.get<Vector>());
  }
  return out;
}

json to_json(const BackendDescriptor& d) {
  return {{"model_id", d.model_id},
          {"layer_count", d.layer_count},
          {"hidden_dim", d.hidden_dim},
          {"deterministic", d.deterministic}};
}

BackendDescriptor descriptor_from_json(const json& j) {
  try {
    BackendDescriptor d{j.at("model_id").get<std::string>(), j.at("layer_count").get<int>(),
                        j.at("hidden_dim").get<int>(), j.value("deterministic", true)};
    validate_descriptor(d);
    return d;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad backend descriptor: ") + e.what());
  }
}

json to_json(const PatchPlan& plan) {
  json j{{"layers", plan.layers},
         {"mode", std::string(to_string(plan.mode))},
         {"position_policy", std::string(to_string(plan.position_policy))}};
  if (plan.scale) j["scale"] = *plan.scale;
  return j;
}

PatchPlan plan_from_json(const json& j) {
  try {
    PatchPlan plan;
    if (auto it = j.find("window"); it != j.end()) {
      plan.layers = parse_window(it->get<std::string>()).layers();
    } else {
      plan.layers = j.at("layers").get<std::vector<int>>();
    }
    plan.mode = parse_injection_mode(j.value("mode", "replace"));
    if (auto it = j.find("scale"); it != j.end() && !it->is_null()) plan.scale = it->get<double>();
    plan.position_policy = parse_position_policy(j.value("position_policy", "prefill_last_token"));
    return plan;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad patch plan: ") + e.what());
  }
}

json to_json(const CaptureProvenance& p) {
  return {{"anchors", p.anchors},
          {"order_level", std::string(to_string(p.order_level))},
          {"position", p.position},
          {"timestamp", p.timestamp},
          {"parents", p.parents},
          {"polarity_override", p.polarity_override}};
}

CaptureProvenance provenance_from_json(const json& j) {
  CaptureProvenance p;
  p.anchors = j.value("anchors", std::vector<std::string>{});
  p.order_level = parse_order_level(j.at("order_level").get<std::string>());
  p.position = j.value("position", std::string("last_prompt_token"));
  p.timestamp = j.value("timestamp", std::string());
  p.parents = j.value("parents", std::vector<std::string>{});
  p.polarity_override = j.value("polarity_override", false);
  return p;
}

}  // namespace ordergap
