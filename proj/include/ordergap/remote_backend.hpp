#pragma once

#include <functional>
#include <memory>
#include <string>

#include "ordergap/backend.hpp"

namespace ordergap {

// Sidecar protocol (JSON bodies):
//   GET  /v1/describe  -> {model_id, layer_count, hidden_dim, deterministic}
//   POST /v1/generate  {prompt, max_new_tokens, intervention?} -> {text}
//   POST /v1/capture   {prompt, layers} -> {vectors: {"<layer>": [float...]}}
// intervention = {vectors: {"<layer>": [...]}, mode, scale, policy}.
// A 413 reply signals context overflow. tools/hf_sidecar.py implements the
// server side for Hugging Face checkpoints; BackendServer serves any Backend.
class RemoteBackend final : public Backend {
 public:
  // Connects and fetches the descriptor. Throws LoadError when unreachable
  // or when expected_model_id is set and the sidecar serves another model.
  explicit RemoteBackend(const std::string& endpoint, const std::string& expected_model_id = {});
  ~RemoteBackend() override;

  const BackendDescriptor& descriptor() const override { return descriptor_; }

 protected:
  std::string do_generate(std::string_view prompt, int max_new_tokens,
                          const Intervention* intervention) override;
  LayerVectors do_capture(std::string_view prompt, std::span<const int> layers) override;

 private:
  struct Client;
  std::unique_ptr<Client> client_;
  BackendDescriptor descriptor_;
};

// Serves a Backend over the sidecar protocol. Requests are handled one at
// a time against the wrapped backend.
class BackendServer {
 public:
  explicit BackendServer(Backend& backend);
  ~BackendServer();
  BackendServer(const BackendServer&) = delete;
  BackendServer& operator=(const BackendServer&) = delete;

  // Binds and serves on a background thread; returns the bound port
  // (pass 0 to pick a free one).
  int start(const std::string& host, int port);
  // Serves on the calling thread until stop(). `on_ready` receives the bound
  // port (pass 0 to pick a free one).
  void listen(const std::string& host, int port, const std::function<void(int)>& on_ready = {});
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ordergap
