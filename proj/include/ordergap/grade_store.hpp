#pragma once

#include <array>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordergap/chain.hpp"
#include "ordergap/run_record.hpp"
#include "ordergap/run_store.hpp"

namespace ordergap {

struct GradeEvent {
  std::string run_id;
  Grade grade = Grade::Absorb;
  std::string grader;
  std::string note;
  std::string timestamp;  // filled by the store when empty

  bool operator==(const GradeEvent&) const = default;
};

nlohmann::json to_json(const GradeEvent& e);
GradeEvent grade_event_from_json(const nlohmann::json& j);

struct GradeCounts {
  int total = 0;
  int pending = 0;
  int failed = 0;
  std::array<int, 3> by_grade{};  // indexed by Grade

  int graded() const { return by_grade[0] + by_grade[1] + by_grade[2]; }
  bool operator==(const GradeCounts&) const = default;
};

struct GradeSummary {
  std::string experiment;
  GradeCounts counts;
  // Keyed by "<order> <condition>[ core=<id>][ variant=<tag>]".
  std::map<std::string, GradeCounts> groups;

  // Graded share of the runs that can be graded (failed runs excluded).
  double completion() const;
  bool operator==(const GradeSummary&) const = default;
};

nlohmann::json to_json(const GradeSummary& s);
std::string format_summary(const GradeSummary& s);

struct QueueFilter {
  std::optional<std::string> experiment;
  std::optional<int> chain_id;
};

struct QueueItem {
  RunRecord record;
  const Chain* chain = nullptr;  // null when the benchmark does not hold it
  std::string lease_expires;
  int remaining = 0;  // pending runs matching the filter, this one included
};

nlohmann::json to_json(const QueueItem& item);

// Grading workflow over a run directory. Grades live in "grades.jsonl"
// next to the experiment logs; the latest event per run wins.
class GradeStore {
 public:
  using Clock = std::function<std::chrono::system_clock::time_point()>;
  static constexpr std::chrono::minutes kLeaseDuration{10};

  explicit GradeStore(RunStore& runs, std::vector<Chain> chains = {}, Clock clock = {});

  // Picks up runs appended since construction.
  void refresh();

  // Lowest pending run by (experiment, chain, condition, order, core,
  // variant, run id) that is not leased to another grader. A grader asking
  // again gets its own leased run back with the lease renewed.
  std::optional<QueueItem> next_pending(const QueueFilter& filter = {}, const std::string& grader = {});

  // Appends the event. Throws NotFoundError for an unknown run and
  // ValidationError for a failed one.
  GradeEvent submit_grade(GradeEvent event);

  GradeSummary summary(const std::string& experiment) const;
  // Recomputed from the raw run and grade logs on disk.
  GradeSummary replay_summary(const std::string& experiment) const;

  std::vector<GradeEvent> history(const std::string& run_id) const;
  std::optional<RunRecord> run(const std::string& run_id) const;
  // Records of an experiment with their current grade applied.
  std::vector<RunRecord> graded_records(const std::string& experiment) const;
  std::vector<std::string> experiments() const;
  std::size_t pending_count(const QueueFilter& filter = {}) const;

  std::filesystem::path log_path() const;

 private:
  struct Lease {
    std::string grader;
    std::chrono::system_clock::time_point expires;
  };

  void load_runs_locked();
  void count_locked(const RunRecord& r, const std::optional<Grade>& g, int sign);
  bool matches(const RunRecord& r, const QueueFilter& f) const;

  RunStore& runs_;
  std::vector<Chain> chains_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::map<std::string, RunRecord> records_;               // run id -> record
  std::map<std::string, std::vector<std::string>> order_;  // experiment -> run ids, log order
  std::map<std::string, GradeEvent> active_;
  std::map<std::string, GradeSummary> summaries_;
  std::map<std::string, Lease> leases_;
};

// Summary computed from scratch over records and an event sequence.
GradeSummary compute_summary(const std::string& experiment, const std::vector<RunRecord>& records,
                             const std::vector<GradeEvent>& events);

}  // namespace ordergap
