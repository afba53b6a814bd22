#include "ordergap/report.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <tuple>

#include "ordergap/errors.hpp"
#include "ordergap/metrics.hpp"

namespace ordergap {

using nlohmann::json;

namespace {

// Collects pending ids across tables so one error lists all of them.
class PendingSink {
 public:
  template <typename F>
  bool run(F&& f) {
    try {
      f();
      return true;
    } catch (const IncompleteGradingError& e) {
      ids_.insert(e.pending().begin(), e.pending().end());
      return false;
    }
  }
  void add(const std::string& id) { ids_.insert(id); }
  void throw_if_any() const {
    if (!ids_.empty()) throw IncompleteGradingError({ids_.begin(), ids_.end()});
  }

 private:
  std::set<std::string> ids_;
};

std::vector<ArmSelector> patched_arms(const std::vector<RunRecord>& records) {
  std::vector<ArmSelector> arms;
  std::set<std::tuple<int, int, std::string, std::string>> seen;
  for (const auto& r : records) {
    if (!r.core_id) continue;
    if (seen.emplace(static_cast<int>(r.order_level), static_cast<int>(r.condition), *r.core_id, r.variant).second) {
      arms.push_back({r.order_level, r.condition, r.core_id, r.variant});
    }
  }
  return arms;
}

ArmSelector baseline_for(const ArmSelector& arm) {
  if (arm.condition == Condition::Patched) return baseline_arm(arm.order_level);
  return baseline_arm(arm.order_level, arm.condition, arm.variant);
}

// Current grade of the single unpatched run at `level`, per chain.
std::map<int, std::optional<Grade>> baseline_grades(const std::vector<RunRecord>& records, OrderLevel level,
                                                    PendingSink& pending) {
  std::map<int, std::optional<Grade>> out;
  for (const auto& r : records) {
    if (r.core_id || r.condition != Condition::Baseline || r.order_level != level || !r.variant.empty()) continue;
    if (r.status == RunStatus::Failed) {
      out[r.chain_id] = std::nullopt;
    } else if (!r.grade) {
      pending.add(r.run_id);
    } else {
      out[r.chain_id] = r.grade;
    }
  }
  return out;
}

std::string table_text(const std::vector<std::vector<double>>& t) {
  std::ostringstream os;
  for (const auto& row : t) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? " " : "  ") << row[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace

Report build_report(const GradeStore& store, const std::string& experiment, const ReportOptions& options) {
  const auto records = store.graded_records(experiment);
  const auto summary = store.summary(experiment);
  PendingSink pending;
  Report out;
  std::ostringstream text;
  out.data["experiment"] = experiment;
  out.data["summary"] = to_json(summary);
  text << format_summary(summary);

  // Baseline collapse: O5 strictly below O2 for the same chain.
  {
    const auto o2 = baseline_grades(records, OrderLevel::O2, pending);
    const auto o5 = baseline_grades(records, OrderLevel::O5, pending);
    int both = 0;
    int collapsed = 0;
    for (const auto& [chain, g2] : o2) {
      auto it = o5.find(chain);
      if (it == o5.end() || !g2 || !it->second) continue;
      ++both;
      collapsed += cascade_collapsed(*g2, *it->second) ? 1 : 0;
    }
    if (both > 0) {
      out.data["collapse"] = {{"chains", both}, {"collapsed", collapsed}};
      text << "\ncascade collapse (O5 below O2): " << collapsed << "/" << both << " ("
           << format_percent(100.0 * collapsed / both, false) << ")\n";
    }
  }

  // One release comparison per patched arm.
  json arms = json::array();
  std::vector<std::pair<ArmSelector, PairingResult>> paired;
  for (const auto& arm : patched_arms(records)) {
    pending.run([&] {
      const auto base = baseline_for(arm);
      auto pr = pair_records(records, {}, base, arm);
      const auto report = release_rate(pr.pairs, pr.excluded_failed);
      json j = to_json(report);
      j["arm"] = arm.describe();
      j["baseline"] = base.describe();
      arms.push_back(j);
      text << '\n' << format_release_report(report, arm.describe() + " vs " + base.describe());
      paired.emplace_back(arm, std::move(pr));
    });
  }
  out.data["arms"] = arms;

  // Routed deployment: every core's chains together.
  {
    std::vector<GradedPair> routed;
    int failed = 0;
    for (const auto& p : paired) {
      if (p.first.variant != "routed") continue;
      routed.insert(routed.end(), p.second.pairs.begin(), p.second.pairs.end());
      failed += p.second.excluded_failed;
    }
    if (!routed.empty()) {
      const auto report = release_rate(routed, failed);
      out.data["routed_total"] = to_json(report);
      text << '\n' << format_release_report(report, "routed, all cores");
    }
  }

  // Sweep: rates over all chains and over collapsed chains only.
  std::vector<const std::pair<ArmSelector, PairingResult>*> windows;
  for (const auto& p : paired) {
    if (p.first.variant.starts_with("window:")) windows.push_back(&p);
  }
  if (!windows.empty()) {
    std::set<int> collapsed;
    std::string rule;
    if (options.o2_experiment) {
      rule = "O5 baseline below O2 baseline of " + *options.o2_experiment;
      const auto o2_records = store.graded_records(*options.o2_experiment);
      const auto o2 = baseline_grades(o2_records, OrderLevel::O2, pending);
      const auto o5 = baseline_grades(records, OrderLevel::O5, pending);
      for (const auto& [chain, g5] : o5) {
        auto it = o2.find(chain);
        if (g5 && it != o2.end() && it->second && cascade_collapsed(*it->second, *g5)) collapsed.insert(chain);
      }
    } else {
      rule = "O5 baseline below DETECT";
      const auto o5 = baseline_grades(records, OrderLevel::O5, pending);
      for (const auto& [chain, g5] : o5) {
        if (g5 && *g5 < Grade::Detect) collapsed.insert(chain);
      }
    }
    json rows = json::array();
    text << "\nlayer sweep (collapsed-only rule: " << rule << ")\n";
    for (const auto* w : windows) {
      const auto all = release_rate(w->second.pairs, w->second.excluded_failed);
      std::vector<GradedPair> subset;
      for (const auto& p : w->second.pairs) {
        if (collapsed.contains(p.chain_id)) subset.push_back(p);
      }
      const auto sub = release_rate(subset);
      rows.push_back({{"window", w->first.variant.substr(7)},
                      {"all", {{"n", all.population}, {"released", all.released}, {"rate_percent", all.rate_percent()}}},
                      {"collapsed_only",
                       {{"n", sub.population}, {"released", sub.released}, {"rate_percent", sub.rate_percent()}}}});
      text << "  " << w->first.variant.substr(7) << "  all " << all.released << "/" << all.population << " ("
           << format_percent(all.rate_percent(), false) << ")  collapsed-only " << sub.released << "/"
           << sub.population << " (" << format_percent(sub.rate_percent(), false) << ")\n";
    }
    out.data["sweep"] = {{"collapsed_rule", rule}, {"windows", rows}};
  }

  // Restore at O5 against suppress at O2.
  const std::pair<ArmSelector, PairingResult>* restore = nullptr;
  const std::pair<ArmSelector, PairingResult>* suppress = nullptr;
  for (const auto& p : paired) {
    if (p.first.condition != Condition::Patched || !p.first.variant.empty()) continue;
    if (p.first.order_level == OrderLevel::O5 && restore == nullptr) restore = &p;
    if (p.first.order_level == OrderLevel::O2 && suppress == nullptr) suppress = &p;
  }
  if (restore != nullptr && suppress != nullptr && !restore->second.pairs.empty() && !suppress->second.pairs.empty()) {
    const auto a = asymmetry_report(restore->second.pairs, suppress->second.pairs);
    out.data["asymmetry"] = to_json(a);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "\nrestore %d/%d (%s, 95%% CI %s to %s)  suppress %d/%d (%s, 95%% CI %s to %s)\n",
                  a.restore.successes, a.restore.trials, format_percent(a.restore.rate()).c_str(),
                  format_percent(a.restore.ci.low).c_str(), format_percent(a.restore.ci.high).c_str(),
                  a.suppress.successes, a.suppress.trials, format_percent(a.suppress.rate()).c_str(),
                  format_percent(a.suppress.ci.low).c_str(), format_percent(a.suppress.ci.high).c_str());
    text << buf;
  }

  if (!options.cross_cores.empty()) {
    pending.run([&] {
      const auto cells = cross_matrix(options.cross_cores, options.cross_populations, records);
      out.data["cross_matrix"] = to_json(cells);
      text << '\n' << format_cross_matrix(cells);
    });
  }

  pending.throw_if_any();

  if (!options.chi_table.empty()) {
    const auto chi = chi_square(options.chi_table);
    out.data["chi_square"] = {{"table", options.chi_table}, {"statistic", chi.statistic}, {"df", chi.df},
                              {"p", chi.p_text()}};
    char buf[128];
    std::snprintf(buf, sizeof buf, "chi-square %.4f, df %d, p %s\n", chi.statistic, chi.df, chi.p_text().c_str());
    text << "\noperator table\n" << table_text(options.chi_table) << buf;
  }
  out.text = text.str();
  return out;
}

}  // namespace ordergap
