#include "ordergap/grade_store.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <sstream>
#include <tuple>

#include "ordergap/errors.hpp"
#include "ordergap/metrics.hpp"

namespace ordergap {

using nlohmann::json;

json to_json(const GradeEvent& e) {
  json j{{"run_id", e.run_id}, {"grade", std::string(to_string(e.grade))}, {"grader", e.grader},
         {"timestamp", e.timestamp}};
  if (!e.note.empty()) j["note"] = e.note;
  return j;
}

GradeEvent grade_event_from_json(const json& j) {
  try {
    GradeEvent e;
    e.run_id = j.at("run_id").get<std::string>();
    e.grade = parse_grade(j.at("grade").get<std::string>());
    e.grader = j.value("grader", std::string());
    e.note = j.value("note", std::string());
    e.timestamp = j.value("timestamp", std::string());
    return e;
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("bad grade event: ") + ex.what());
  }
}

double GradeSummary::completion() const {
  const int gradable = counts.total - counts.failed;
  return gradable == 0 ? 0.0 : static_cast<double>(counts.graded()) / gradable;
}

namespace {

std::string group_key(const RunRecord& r) {
  std::string key = std::string(to_string(r.order_level)) + " " + std::string(to_string(r.condition));
  if (r.core_id) key += " core=" + *r.core_id;
  if (!r.variant.empty()) key += " variant=" + r.variant;
  return key;
}

void bump(GradeCounts& c, const RunRecord& r, const std::optional<Grade>& g, int sign) {
  c.total += sign;
  if (r.status == RunStatus::Failed) {
    c.failed += sign;
  } else if (g) {
    c.by_grade[static_cast<std::size_t>(*g)] += sign;
  } else {
    c.pending += sign;
  }
}

json counts_json(const GradeCounts& c) {
  const int graded = c.graded();
  auto rate = [&](int n) { return graded == 0 ? 0.0 : 100.0 * n / graded; };
  return {{"total", c.total},
          {"pending", c.pending},
          {"failed", c.failed},
          {"graded", graded},
          {"DETECT", c.by_grade[2]},
          {"PARTIAL", c.by_grade[1]},
          {"ABSORB", c.by_grade[0]},
          {"rates_percent", {{"DETECT", rate(c.by_grade[2])}, {"PARTIAL", rate(c.by_grade[1])}, {"ABSORB", rate(c.by_grade[0])}}}};
}

std::string format_time(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

auto queue_key(const RunRecord& r) {
  return std::make_tuple(std::cref(r.experiment), r.chain_id, static_cast<int>(r.condition),
                         static_cast<int>(r.order_level), r.core_id.value_or(std::string()), std::cref(r.variant),
                         std::cref(r.run_id));
}

}  // namespace

json to_json(const GradeSummary& s) {
  json groups = json::object();
  for (const auto& [key, c] : s.groups) groups[key] = counts_json(c);
  json j = counts_json(s.counts);
  j["experiment"] = s.experiment;
  j["completion"] = s.completion();
  j["groups"] = groups;
  return j;
}

std::string format_summary(const GradeSummary& s) {
  std::ostringstream os;
  auto line = [&](const std::string& label, const GradeCounts& c) {
    const int g = c.graded();
    auto pct = [&](int n) { return format_percent(g == 0 ? 0.0 : 100.0 * n / g, false); };
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-40s total %5d  D %4d (%s)  P %4d (%s)  A %4d (%s)  pending %4d  failed %3d\n",
                  label.c_str(), c.total, c.by_grade[2], pct(c.by_grade[2]).c_str(), c.by_grade[1],
                  pct(c.by_grade[1]).c_str(), c.by_grade[0], pct(c.by_grade[0]).c_str(), c.pending, c.failed);
    os << buf;
  };
  os << "experiment " << s.experiment << ", " << format_percent(100.0 * s.completion(), false) << " graded\n";
  line("all", s.counts);
  for (const auto& [key, c] : s.groups) line(key, c);
  return os.str();
}

json to_json(const QueueItem& item) {
  json j = to_json(item.record);
  if (item.chain != nullptr) {
    j["chain"] = {{"domain", item.chain->domain},
                  {"precondition_false", item.chain->precondition_false},
                  {"precondition_true", item.chain->precondition_true}};
  } else {
    j["chain"] = nullptr;
  }
  j["lease_expires"] = item.lease_expires;
  j["remaining"] = item.remaining;
  return j;
}

GradeSummary compute_summary(const std::string& experiment, const std::vector<RunRecord>& records,
                             const std::vector<GradeEvent>& events) {
  std::map<std::string, Grade> latest;
  for (const auto& e : events) latest[e.run_id] = e.grade;
  GradeSummary s;
  s.experiment = experiment;
  for (const auto& r : records) {
    std::optional<Grade> g;
    if (auto it = latest.find(r.run_id); it != latest.end()) g = it->second;
    bump(s.counts, r, g, 1);
    bump(s.groups[group_key(r)], r, g, 1);
  }
  return s;
}

GradeStore::GradeStore(RunStore& runs, std::vector<Chain> chains, Clock clock)
    : runs_(runs), chains_(std::move(chains)), clock_(clock ? std::move(clock) : Clock(&std::chrono::system_clock::now)) {
  std::lock_guard lock(mutex_);
  if (std::filesystem::exists(log_path())) {
    for (const auto& j : read_json_lines(log_path())) {
      auto e = grade_event_from_json(j);
      active_[e.run_id] = std::move(e);
    }
  }
  load_runs_locked();
}

std::filesystem::path GradeStore::log_path() const { return runs_.dir() / "grades.jsonl"; }

void GradeStore::refresh() {
  std::lock_guard lock(mutex_);
  load_runs_locked();
}

void GradeStore::load_runs_locked() {
  records_.clear();
  order_.clear();
  summaries_.clear();
  for (const auto& experiment : runs_.experiments()) {
    auto& ids = order_[experiment];
    auto& summary = summaries_[experiment];
    summary.experiment = experiment;
    for (auto& r : runs_.records(experiment)) {
      if (records_.contains(r.run_id)) {
        throw ValidationError("run id " + r.run_id + " appears in more than one experiment log");
      }
      ids.push_back(r.run_id);
      std::optional<Grade> g;
      if (auto it = active_.find(r.run_id); it != active_.end()) g = it->second.grade;
      r.grade = std::nullopt;
      bump(summary.counts, r, g, 1);
      bump(summary.groups[group_key(r)], r, g, 1);
      records_.emplace(r.run_id, std::move(r));
    }
  }
}

void GradeStore::count_locked(const RunRecord& r, const std::optional<Grade>& g, int sign) {
  auto& s = summaries_[r.experiment];
  bump(s.counts, r, g, sign);
  bump(s.groups[group_key(r)], r, g, sign);
}

bool GradeStore::matches(const RunRecord& r, const QueueFilter& f) const {
  if (f.experiment && r.experiment != *f.experiment) return false;
  if (f.chain_id && r.chain_id != *f.chain_id) return false;
  return r.status == RunStatus::Ok && !active_.contains(r.run_id);
}

std::optional<QueueItem> GradeStore::next_pending(const QueueFilter& filter, const std::string& grader) {
  std::lock_guard lock(mutex_);
  const auto now = clock_();
  std::vector<const RunRecord*> pending;
  for (const auto& [id, r] : records_) {
    if (matches(r, filter)) pending.push_back(&r);
  }
  if (pending.empty()) return std::nullopt;
  std::sort(pending.begin(), pending.end(), [](auto* a, auto* b) { return queue_key(*a) < queue_key(*b); });

  auto leased_to_other = [&](const RunRecord& r) {
    auto it = leases_.find(r.run_id);
    return it != leases_.end() && it->second.expires > now && it->second.grader != grader;
  };
  const RunRecord* pick = nullptr;
  if (!grader.empty()) {
    for (const auto* r : pending) {
      auto it = leases_.find(r->run_id);
      if (it != leases_.end() && it->second.grader == grader && it->second.expires > now) {
        pick = r;
        break;
      }
    }
  }
  if (pick == nullptr) {
    for (const auto* r : pending) {
      if (!leased_to_other(*r)) {
        pick = r;
        break;
      }
    }
  }
  if (pick == nullptr) return std::nullopt;

  // A grader holds one lease at a time.
  if (!grader.empty()) {
    std::erase_if(leases_, [&](const auto& kv) { return kv.second.grader == grader && kv.first != pick->run_id; });
  }
  const auto expires = now + kLeaseDuration;
  leases_[pick->run_id] = {grader, expires};

  QueueItem item;
  item.record = *pick;
  item.chain = find_chain(chains_, pick->chain_id);
  item.lease_expires = format_time(expires);
  item.remaining = static_cast<int>(pending.size());
  return item;
}

GradeEvent GradeStore::submit_grade(GradeEvent event) {
  std::lock_guard lock(mutex_);
  auto it = records_.find(event.run_id);
  if (it == records_.end()) {
    // The run may have been appended after this store loaded.
    load_runs_locked();
    it = records_.find(event.run_id);
    if (it == records_.end()) throw NotFoundError("unknown run id '" + event.run_id + "'");
  }
  const RunRecord& r = it->second;
  if (r.status == RunStatus::Failed) {
    throw ValidationError("run " + r.run_id + " failed to generate and cannot be graded");
  }
  if (event.timestamp.empty()) event.timestamp = format_time(clock_());
  append_json_line(log_path(), to_json(event));

  std::optional<Grade> previous;
  if (auto a = active_.find(r.run_id); a != active_.end()) previous = a->second.grade;
  count_locked(r, previous, -1);
  count_locked(r, event.grade, 1);
  active_[r.run_id] = event;
  leases_.erase(r.run_id);
  return event;
}

GradeSummary GradeStore::summary(const std::string& experiment) const {
  std::lock_guard lock(mutex_);
  auto it = summaries_.find(experiment);
  if (it == summaries_.end()) throw NotFoundError("unknown experiment '" + experiment + "'");
  return it->second;
}

GradeSummary GradeStore::replay_summary(const std::string& experiment) const {
  std::lock_guard lock(mutex_);
  const auto experiments = runs_.experiments();
  if (std::find(experiments.begin(), experiments.end(), experiment) == experiments.end()) {
    throw NotFoundError("unknown experiment '" + experiment + "'");
  }
  std::vector<GradeEvent> events;
  if (std::filesystem::exists(log_path())) {
    for (const auto& j : read_json_lines(log_path())) events.push_back(grade_event_from_json(j));
  }
  return compute_summary(experiment, runs_.records(experiment), events);
}

std::vector<GradeEvent> GradeStore::history(const std::string& run_id) const {
  std::lock_guard lock(mutex_);
  std::vector<GradeEvent> out;
  if (!std::filesystem::exists(log_path())) return out;
  for (const auto& j : read_json_lines(log_path())) {
    if (j.value("run_id", std::string()) == run_id) out.push_back(grade_event_from_json(j));
  }
  return out;
}

std::optional<RunRecord> GradeStore::run(const std::string& run_id) const {
  std::lock_guard lock(mutex_);
  auto it = records_.find(run_id);
  if (it == records_.end()) return std::nullopt;
  RunRecord r = it->second;
  if (auto a = active_.find(run_id); a != active_.end()) {
    r.grade = a->second.grade;
    r.grader = a->second.grader;
  }
  return r;
}

std::vector<RunRecord> GradeStore::graded_records(const std::string& experiment) const {
  std::lock_guard lock(mutex_);
  auto it = order_.find(experiment);
  if (it == order_.end()) throw NotFoundError("unknown experiment '" + experiment + "'");
  std::vector<RunRecord> out;
  for (const auto& id : it->second) {
    RunRecord r = records_.at(id);
    if (auto a = active_.find(id); a != active_.end()) {
      r.grade = a->second.grade;
      r.grader = a->second.grader;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> GradeStore::experiments() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [name, ids] : order_) out.push_back(name);
  return out;
}

std::size_t GradeStore::pending_count(const QueueFilter& filter) const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [id, r] : records_) n += matches(r, filter) ? 1 : 0;
  return n;
}

}  // namespace ordergap
