#include "ordergap/remote_backend.hpp"

#include <atomic>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "ordergap/errors.hpp"
#include "ordergap/json_io.hpp"

namespace ordergap {

using nlohmann::json;

struct RemoteBackend::Client {
  explicit Client(const std::string& endpoint) : http(endpoint) {
    http.set_connection_timeout(10);
    http.set_read_timeout(3600);
    http.set_write_timeout(60);
  }

  json post(const std::string& path, const json& body) {
    auto res = http.Post(path, body.dump(), "application/json");
    return unpack(res, path);
  }

  json get(const std::string& path) { return unpack(http.Get(path), path); }

  static json unpack(const httplib::Result& res, const std::string& path) {
    if (!res) throw LoadError("backend unreachable on " + path + ": " + httplib::to_string(res.error()));
    if (res->status == 413) throw LengthError("backend rejected prompt: " + res->body);
    if (res->status != 200) {
      throw BackendError("backend " + path + " returned HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw BackendError("backend " + path + " returned malformed JSON: " + e.what());
    }
  }

  httplib::Client http;
};

RemoteBackend::RemoteBackend(const std::string& endpoint, const std::string& expected_model_id)
    : client_(std::make_unique<Client>(endpoint)) {
  try {
    descriptor_ = descriptor_from_json(client_->get("/v1/describe"));
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw LoadError(std::string("cannot describe backend at ") + endpoint + ": " + e.what());
  }
  if (!expected_model_id.empty() && descriptor_.model_id != expected_model_id) {
    throw LoadError("backend at " + endpoint + " serves '" + descriptor_.model_id + "', expected '" +
                    expected_model_id + "'");
  }
}

RemoteBackend::~RemoteBackend() = default;

std::string RemoteBackend::do_generate(std::string_view prompt, int max_new_tokens,
                                       const Intervention* intervention) {
  json body{{"prompt", std::string(prompt)}, {"max_new_tokens", max_new_tokens}};
  if (intervention != nullptr) {
    body["intervention"] = {{"vectors", layer_vectors_to_json(intervention->vectors)},
                            {"mode", std::string(to_string(intervention->mode))},
                            {"scale", intervention->scale},
                            {"policy", std::string(to_string(intervention->policy))}};
  }
  const json reply = client_->post("/v1/generate", body);
  try {
    return reply.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("generate reply missing text: ") + e.what());
  }
}

LayerVectors RemoteBackend::do_capture(std::string_view prompt, std::span<const int> layers) {
  const json body{{"prompt", std::string(prompt)}, {"layers", std::vector<int>(layers.begin(), layers.end())}};
  const json reply = client_->post("/v1/capture", body);
  try {
    return layer_vectors_from_json(reply.at("vectors"));
  } catch (const json::exception& e) {
    throw BackendError(std::string("capture reply malformed: ") + e.what());
  }
}

struct BackendServer::Impl {
  explicit Impl(Backend& b) : backend(b) {}

  void install() {
    server.Get("/v1/describe", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(to_json(backend.descriptor()).dump(), "application/json");
    });
    server.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const json body = json::parse(req.body);
        const auto prompt = body.at("prompt").get<std::string>();
        const int budget = body.at("max_new_tokens").get<int>();
        std::string text;
        if (auto it = body.find("intervention"); it != body.end() && !it->is_null()) {
          ActivationCore core;
          core.core_id = "remote";
          core.vectors = layer_vectors_from_json(it->at("vectors"));
          PatchPlan plan;
          for (const auto& [layer, v] : core.vectors) plan.layers.push_back(layer);
          plan.mode = parse_injection_mode(it->value("mode", "replace"));
          if (plan.mode == InjectionMode::AddScaled) plan.scale = it->value("scale", 1.0);
          plan.position_policy = parse_position_policy(it->value("policy", "prefill_last_token"));
          text = backend.generate_with_injection(prompt, core, plan, budget);
        } else {
          text = backend.generate_greedy(prompt, budget);
        }
        return json{{"text", text}};
      });
    });
    server.Post("/v1/capture", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const json body = json::parse(req.body);
        const auto layers = body.at("layers").get<std::vector<int>>();
        return json{{"vectors", layer_vectors_to_json(
                                    backend.capture_residual(body.at("prompt").get<std::string>(), layers))}};
      });
    });
  }

  template <typename F>
  void handle(httplib::Response& res, F&& fn) {
    std::lock_guard lock(mutex);
    try {
      res.set_content(fn().dump(), "application/json");
    } catch (const LengthError& e) {
      res.status = 413;
      res.set_content(e.what(), "text/plain");
    } catch (const ValidationError& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(e.what(), "text/plain");
    }
  }

  Backend& backend;
  httplib::Server server;
  std::mutex mutex;
  std::thread thread;
};

BackendServer::BackendServer(Backend& backend) : impl_(std::make_unique<Impl>(backend)) { impl_->install(); }

BackendServer::~BackendServer() { stop(); }

int BackendServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw LoadError("cannot bind backend server to " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void BackendServer::listen(const std::string& host, int port, const std::function<void(int)>& on_ready) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw LoadError("cannot bind " + host + ":" + std::to_string(port));
  if (on_ready) on_ready(bound);
  if (!impl_->server.listen_after_bind()) throw Error("server on " + host + ":" + std::to_string(bound) + " stopped");
}

void BackendServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace ordergap
