#include "ordergap/grade_server.hpp"

#include <thread>

#include <httplib.h>

#include "ordergap/errors.hpp"

namespace ordergap {

using nlohmann::json;

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const NotFoundError& e) {
    send_error(res, 404, e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

}  // namespace

struct GradeServer::Impl {
  Impl(GradeStore& s, std::filesystem::path a) : store(s), assets(std::move(a)) {}

  void install() {
    server.Get("/api/queue/next", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        QueueFilter filter;
        if (req.has_param("experiment") && !req.get_param_value("experiment").empty()) {
          filter.experiment = req.get_param_value("experiment");
        }
        if (req.has_param("chain") && !req.get_param_value("chain").empty()) {
          try {
            filter.chain_id = std::stoi(req.get_param_value("chain"));
          } catch (const std::exception&) {
            throw ValidationError("chain must be an integer");
          }
        }
        store.refresh();
        auto item = store.next_pending(filter, req.has_param("grader") ? req.get_param_value("grader") : "");
        if (!item) {
          res.status = 204;
          return;
        }
        res.set_content(to_json(*item).dump(), "application/json");
      });
    });
    server.Post("/api/grades", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        GradeEvent e;
        e.run_id = body.at("run_id").get<std::string>();
        e.grade = parse_grade(body.at("grade").get<std::string>());
        e.grader = body.at("grader").get<std::string>();
        if (e.grader.empty()) throw ValidationError("grader must not be empty");
        if (auto it = body.find("note"); it != body.end() && !it->is_null()) e.note = it->get<std::string>();
        try {
          const auto stored = store.submit_grade(std::move(e));
          res.status = 201;
          res.set_content(to_json(stored).dump(), "application/json");
        } catch (const NotFoundError&) {
          throw;
        } catch (const ValidationError& ex) {
          send_error(res, 409, ex.what());
        }
      });
    });
    server.Get(R"(/api/experiments/([^/]+)/summary)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        store.refresh();
        res.set_content(to_json(store.summary(req.matches[1])).dump(), "application/json");
      });
    });
    server.Get(R"(/api/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        auto r = store.run(id);
        if (!r) {
          store.refresh();
          r = store.run(id);
        }
        if (!r) throw NotFoundError("unknown run id '" + id + "'");
        json j = to_json(*r);
        json history = json::array();
        for (const auto& e : store.history(id)) history.push_back(to_json(e));
        j["history"] = history;
        res.set_content(j.dump(), "application/json");
      });
    });
    if (!assets.empty()) {
      if (!server.set_mount_point("/", assets.string())) {
        throw ValidationError("console assets directory " + assets.string() + " does not exist");
      }
    }
  }

  GradeStore& store;
  std::filesystem::path assets;
  httplib::Server server;
  std::thread thread;
};

GradeServer::GradeServer(GradeStore& store, std::filesystem::path assets)
    : impl_(std::make_unique<Impl>(store, std::move(assets))) {
  impl_->install();
}

GradeServer::~GradeServer() { stop(); }

int GradeServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind grading server to " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void GradeServer::listen(const std::string& host, int port, const std::function<void(int)>& on_ready) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  if (on_ready) on_ready(bound);
  if (!impl_->server.listen_after_bind()) throw Error("server on " + host + ":" + std::to_string(bound) + " stopped");
}

void GradeServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace ordergap
