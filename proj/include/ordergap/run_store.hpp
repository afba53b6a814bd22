#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ordergap/run_record.hpp"

namespace ordergap {

// Append-only run log: one JSON-lines file per experiment under `dir`.
// A run_id may appear more than once (a failed run retried); the last
// line for a run_id is its current state. Lines are never rewritten.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }

  // Serialized: safe to call from several workers.
  void append(const RunRecord& record);

  // Current state per run_id, in first-appearance order.
  std::vector<RunRecord> records(const std::string& experiment) const;
  // Every line ever appended, in file order.
  std::vector<RunRecord> history(const std::string& experiment) const;
  std::vector<std::string> experiments() const;

  std::filesystem::path file_for(const std::string& experiment) const;

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

// Reads a JSON-lines file, one record per non-blank line.
std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path);
void append_json_line(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace ordergap
