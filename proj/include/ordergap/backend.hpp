#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ordergap/activation_core.hpp"
#include "ordergap/plan.hpp"

namespace ordergap {

struct BackendDescriptor {
  std::string model_id;
  int layer_count = 0;
  int hidden_dim = 0;
  bool deterministic = true;

  bool operator==(const BackendDescriptor&) const = default;
};

// Throws ValidationError when layer_count or hidden_dim is not positive.
void validate_descriptor(const BackendDescriptor& d);

enum class TokenPosition { LastPromptToken };

struct CapturePoint {
  int layer_index = 0;
  TokenPosition token_position = TokenPosition::LastPromptToken;
};

// What a backend implementation receives once the public entry points have
// checked compatibility. `vectors` holds exactly the planned layers.
struct Intervention {
  LayerVectors vectors;
  InjectionMode mode = InjectionMode::Replace;
  double scale = 1.0;
  PositionPolicy policy = PositionPolicy::PrefillLastToken;
};

// A decoder-only transformer with greedy decoding and post-block residual
// stream access. One instance serves one call at a time; use one instance
// per worker for parallel runs.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  // Newly generated text only. max_new_tokens == 0 yields "".
  std::string generate_greedy(std::string_view prompt, int max_new_tokens);

  // Post-block residual at the last prompt token for each requested layer.
  LayerVectors capture_residual(std::string_view prompt, std::span<const int> layers);
  LayerVectors capture_residual(std::string_view prompt, std::span<const CapturePoint> points);

  // Replaces (or adds to) the residual at plan.layers with the core's vectors
  // while processing the prompt, then decodes greedily.
  std::string generate_with_injection(std::string_view prompt, const ActivationCore& core,
                                      const PatchPlan& plan, int max_new_tokens);

  // The checks generate_with_injection performs before touching the model.
  void check_injection(const ActivationCore& core, const PatchPlan& plan) const;

 protected:
  virtual std::string do_generate(std::string_view prompt, int max_new_tokens,
                                  const Intervention* intervention) = 0;
  virtual LayerVectors do_capture(std::string_view prompt, std::span<const int> layers) = 0;
};

using BackendFactory = std::function<std::unique_ptr<Backend>()>;

// "mock" (32 layers x 8 dims), "mock:<layers>x<dim>", or any other model id
// served over HTTP at `endpoint` (see RemoteBackend).
std::unique_ptr<Backend> make_backend(const std::string& model_id, const std::string& endpoint = {});
BackendFactory backend_factory(const std::string& model_id, const std::string& endpoint = {});

}  // namespace ordergap
