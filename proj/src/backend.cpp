#include "ordergap/backend.hpp"

#include <algorithm>
#include <set>

#include "ordergap/errors.hpp"
#include "ordergap/mock_backend.hpp"
#include "ordergap/remote_backend.hpp"

namespace ordergap {

void validate_descriptor(const BackendDescriptor& d) {
  if (d.layer_count < 1) throw ValidationError("backend layer_count must be >= 1");
  if (d.hidden_dim < 1) throw ValidationError("backend hidden_dim must be >= 1");
}

namespace {

void check_prompt(std::string_view prompt) {
  if (prompt.empty()) throw ValidationError("prompt must be non-empty");
}

void check_budget(int max_new_tokens) {
  if (max_new_tokens < 0) throw ValidationError("max_new_tokens must be >= 0");
}

}  // namespace

std::string Backend::generate_greedy(std::string_view prompt, int max_new_tokens) {
  check_prompt(prompt);
  check_budget(max_new_tokens);
  if (max_new_tokens == 0) return {};
  return do_generate(prompt, max_new_tokens, nullptr);
}

LayerVectors Backend::capture_residual(std::string_view prompt, std::span<const int> layers) {
  check_prompt(prompt);
  if (layers.empty()) throw ValidationError("capture_residual: no layers requested");
  const int n = descriptor().layer_count;
  std::set<int> unique;
  for (int layer : layers) {
    if (layer < 0 || layer >= n) {
      throw ValidationError("capture_residual: layer " + std::to_string(layer) + " outside [0, " +
                            std::to_string(n) + ")");
    }
    unique.insert(layer);
  }
  const std::vector<int> sorted(unique.begin(), unique.end());
  LayerVectors out = do_capture(prompt, sorted);
  if (out.size() != sorted.size()) throw BackendError("backend returned the wrong number of layers");
  for (const auto& [layer, vec] : out) {
    if (static_cast<int>(vec.size()) != descriptor().hidden_dim) {
      throw BackendError("backend returned a vector of dimension " + std::to_string(vec.size()) +
                         " at layer " + std::to_string(layer));
    }
  }
  return out;
}

LayerVectors Backend::capture_residual(std::string_view prompt, std::span<const CapturePoint> points) {
  std::vector<int> layers;
  layers.reserve(points.size());
  for (const auto& p : points) layers.push_back(p.layer_index);
  return capture_residual(prompt, layers);
}

void Backend::check_injection(const ActivationCore& core, const PatchPlan& plan) const {
  const auto& d = descriptor();
  validate_plan(plan, d.layer_count);
  if (static_cast<int>(core.hidden_dim()) != d.hidden_dim) {
    throw ValidationError("core " + core.core_id + " has hidden_dim " + std::to_string(core.hidden_dim()) +
                          ", backend has " + std::to_string(d.hidden_dim));
  }
  for (int layer : plan.layers) {
    if (!core.has_layer(layer)) {
      throw ValidationError("plan layer " + std::to_string(layer) + " is absent from core " + core.core_id);
    }
    if (static_cast<int>(core.vectors.at(layer).size()) != d.hidden_dim) {
      throw ValidationError("core " + core.core_id + " layer " + std::to_string(layer) + " has " +
                            std::to_string(core.vectors.at(layer).size()) + " values, backend has hidden_dim " +
                            std::to_string(d.hidden_dim));
    }
  }
}

std::string Backend::generate_with_injection(std::string_view prompt, const ActivationCore& core,
                                             const PatchPlan& plan, int max_new_tokens) {
  check_prompt(prompt);
  check_budget(max_new_tokens);
  check_injection(core, plan);
  if (max_new_tokens == 0) return {};
  Intervention intervention;
  for (int layer : plan.layers) intervention.vectors.emplace(layer, core.vectors.at(layer));
  intervention.mode = plan.mode;
  intervention.scale = plan.scale.value_or(1.0);
  intervention.policy = plan.position_policy;
  return do_generate(prompt, max_new_tokens, &intervention);
}

namespace {

bool parse_mock_id(const std::string& id, int& layers, int& dim) {
  if (id == "mock") {
    layers = 32;
    dim = 8;
    return true;
  }
  if (!id.starts_with("mock:")) return false;
  const std::string shape = id.substr(5);
  const auto x = shape.find('x');
  if (x == std::string::npos) throw LoadError("mock id must look like mock:<layers>x<dim>, got " + id);
  try {
    layers = std::stoi(shape.substr(0, x));
    dim = std::stoi(shape.substr(x + 1));
  } catch (const std::exception&) {
    throw LoadError("mock id must look like mock:<layers>x<dim>, got " + id);
  }
  return true;
}

}  // namespace

std::unique_ptr<Backend> make_backend(const std::string& model_id, const std::string& endpoint) {
  int layers = 0;
  int dim = 0;
  if (parse_mock_id(model_id, layers, dim)) {
    if (layers < 1 || dim < 1) throw LoadError("mock shape must be positive: " + model_id);
    return std::make_unique<MockBackend>(layers, dim);
  }
  if (endpoint.empty()) {
    throw LoadError("no backend for model id '" + model_id + "'; give the endpoint of a running sidecar");
  }
  return std::make_unique<RemoteBackend>(endpoint, model_id);
}

BackendFactory backend_factory(const std::string& model_id, const std::string& endpoint) {
  return [model_id, endpoint] { return make_backend(model_id, endpoint); };
}

}  // namespace ordergap
