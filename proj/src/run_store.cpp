#include "ordergap/run_store.hpp"

#include <fstream>
#include <map>
#include <set>

#include "ordergap/errors.hpp"

namespace ordergap {

using nlohmann::json;

std::vector<json> read_json_lines(const std::filesystem::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(n, path.string() + ": " + e.what());
    }
  }
  return out;
}

void append_json_line(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw ValidationError("cannot append to " + path.string());
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw ValidationError("short write on " + path.string());
}

RunStore::RunStore(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

std::filesystem::path RunStore::file_for(const std::string& experiment) const {
  if (experiment.empty() || experiment == "grades" || experiment.find_first_of("/\\") != std::string::npos ||
      experiment[0] == '.') {
    throw ValidationError("bad experiment name '" + experiment + "'");
  }
  return dir_ / (experiment + ".jsonl");
}

void RunStore::append(const RunRecord& record) {
  const auto path = file_for(record.experiment);
  std::lock_guard lock(mutex_);
  append_json_line(path, to_json(record));
}

std::vector<RunRecord> RunStore::history(const std::string& experiment) const {
  const auto path = file_for(experiment);
  std::lock_guard lock(mutex_);
  std::vector<RunRecord> out;
  for (const auto& j : read_json_lines(path)) out.push_back(run_record_from_json(j));
  return out;
}

std::vector<RunRecord> RunStore::records(const std::string& experiment) const {
  std::vector<RunRecord> out;
  std::map<std::string, std::size_t> index;
  for (auto& r : history(experiment)) {
    if (auto it = index.find(r.run_id); it != index.end()) {
      out[it->second] = std::move(r);
    } else {
      index.emplace(r.run_id, out.size());
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<std::string> RunStore::experiments() const {
  std::set<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl" && entry.path().stem() != "grades") {
      names.insert(entry.path().stem().string());
    }
  }
  return {names.begin(), names.end()};
}

}  // namespace ordergap
