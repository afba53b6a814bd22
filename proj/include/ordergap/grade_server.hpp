#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "ordergap/grade_store.hpp"

namespace ordergap {

// HTTP surface of the grading workflow:
//   GET  /api/queue/next?experiment=&chain=&grader=   200 record, 204 empty
//   POST /api/grades {run_id, grade, grader, note}    201 event
//   GET  /api/experiments/{name}/summary              200 summary
//   GET  /api/runs/{run_id}                           200 record and history
// Static console assets are served from `assets` when it is non-empty.
class GradeServer {
 public:
  explicit GradeServer(GradeStore& store, std::filesystem::path assets = {});
  ~GradeServer();
  GradeServer(const GradeServer&) = delete;
  GradeServer& operator=(const GradeServer&) = delete;

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
