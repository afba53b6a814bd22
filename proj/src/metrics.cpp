#include "ordergap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

#include "ordergap/errors.hpp"

namespace ordergap {

using nlohmann::json;

int TransitionMatrix::row_sum(Grade baseline) const {
  int s = 0;
  for (int v : counts[index(baseline)]) s += v;
  return s;
}

int TransitionMatrix::column_sum(Grade patched) const {
  int s = 0;
  for (const auto& row : counts) s += row[index(patched)];
  return s;
}

int TransitionMatrix::total() const {
  int s = 0;
  for (const auto& row : counts)
    for (int v : row) s += v;
  return s;
}

double ReleaseReport::rate_percent() const {
  return population == 0 ? 0.0 : 100.0 * static_cast<double>(released) / static_cast<double>(population);
}

ReleaseReport release_rate(std::span<const GradedPair> pairs, int excluded_failed) {
  ReleaseReport report;
  report.excluded_failed = excluded_failed;
  report.population = static_cast<int>(pairs.size());
  for (const auto& p : pairs) {
    ++report.transitions.at(p.baseline, p.patched);
    if (released(p.baseline, p.patched)) {
      ++report.released;
      report.released_ids.push_back(p.chain_id);
    }
    if (full_restoration(p.baseline, p.patched)) ++report.full_restorations;
  }
  std::sort(report.released_ids.begin(), report.released_ids.end());
  return report;
}

bool ArmSelector::matches(const RunRecord& r) const {
  return r.order_level == order_level && r.condition == condition && r.core_id == core_id && r.variant == variant;
}

std::string ArmSelector::describe() const {
  std::string s(to_string(order_level));
  s += "/";
  s += to_string(condition);
  if (core_id) s += "[" + *core_id + "]";
  if (!variant.empty()) s += "{" + variant + "}";
  return s;
}

PairingResult pair_records(std::span<const RunRecord> records, std::span<const int> population,
                           const ArmSelector& baseline, const ArmSelector& patched) {
  std::map<int, std::vector<const RunRecord*>> patched_by_chain;
  std::map<std::pair<std::string, int>, std::vector<const RunRecord*>> baseline_by_chain;
  for (const auto& r : records) {
    if (patched.matches(r)) patched_by_chain[r.chain_id].push_back(&r);
    if (baseline.matches(r)) baseline_by_chain[{r.experiment, r.chain_id}].push_back(&r);
  }
  std::vector<int> chains(population.begin(), population.end());
  if (chains.empty()) {
    for (const auto& [id, recs] : patched_by_chain) chains.push_back(id);
  }

  PairingResult out;
  std::vector<std::string> pending;
  std::set<int> seen;
  for (int chain : chains) {
    if (!seen.insert(chain).second) continue;
    const auto pit = patched_by_chain.find(chain);
    if (pit == patched_by_chain.end()) {
      throw ValidationError("chain " + std::to_string(chain) + " has no " + patched.describe() + " run");
    }
    if (pit->second.size() > 1) {
      throw ValidationError("chain " + std::to_string(chain) + " has several " + patched.describe() +
                            " runs; restrict the records to one experiment");
    }
    const RunRecord& p = *pit->second.front();
    const auto bit = baseline_by_chain.find({p.experiment, chain});
    if (bit == baseline_by_chain.end() || bit->second.size() != 1) {
      throw ValidationError("chain " + std::to_string(chain) + " needs exactly one " + baseline.describe() +
                            " run in experiment " + p.experiment);
    }
    const RunRecord& b = *bit->second.front();
    if (b.status == RunStatus::Failed || p.status == RunStatus::Failed) {
      ++out.excluded_failed;
      continue;
    }
    if (!b.grade) pending.push_back(b.run_id);
    if (!p.grade) pending.push_back(p.run_id);
    if (b.grade && p.grade) out.pairs.push_back({chain, *b.grade, *p.grade});
  }
  if (!pending.empty()) {
    std::sort(pending.begin(), pending.end());
    pending.erase(std::unique(pending.begin(), pending.end()), pending.end());
    throw IncompleteGradingError(std::move(pending));
  }
  return out;
}

ReleaseReport release_rate(std::span<const RunRecord> records, std::span<const int> population,
                           const ArmSelector& baseline, const ArmSelector& patched) {
  const auto paired = pair_records(records, population, baseline, patched);
  return release_rate(paired.pairs, paired.excluded_failed);
}

std::string format_percent(double value, bool is_fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", is_fraction ? 100.0 * value : value);
  return buf;
}

json to_json(const ReleaseReport& r) {
  json matrix = json::object();
  for (Grade b : kAllGrades) {
    json row = json::object();
    for (Grade p : kAllGrades) row[std::string(to_string(p))] = r.transitions.at(b, p);
    matrix[std::string(to_string(b))] = row;
  }
  return {{"population", r.population},
          {"released", r.released},
          {"rate_percent", r.rate_percent()},
          {"full_restorations", r.full_restorations},
          {"excluded_failed", r.excluded_failed},
          {"transitions", matrix},
          {"released_ids", r.released_ids}};
}

std::string format_release_report(const ReleaseReport& r, const std::string& title) {
  std::ostringstream os;
  os << title << ": released " << r.released << "/" << r.population << " (" << format_percent(r.rate_percent(), false)
     << "), full restorations " << r.full_restorations;
  if (r.excluded_failed > 0) os << ", excluded " << r.excluded_failed << " failed";
  os << "\n  baseline\\patched   DETECT  PARTIAL   ABSORB\n";
  for (Grade b : kAllGrades) {
    char line[96];
    std::snprintf(line, sizeof line, "  %-17s %7d  %7d  %7d\n", std::string(to_string(b)).c_str(),
                  r.transitions.at(b, Grade::Detect), r.transitions.at(b, Grade::Partial),
                  r.transitions.at(b, Grade::Absorb));
    os << line;
  }
  return os.str();
}

std::string ChiSquareResult::p_text() const {
  if (p_underflow) return "< 10^-300";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", p_value);
  return buf;
}

double chi_square_upper_tail(double statistic, int df) {
  if (df < 1) throw ValidationError("chi-square needs df >= 1");
  if (statistic <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * statistic);
}

ChiSquareResult chi_square(const std::vector<std::vector<double>>& table) {
  const std::size_t rows = table.size();
  if (rows < 2) throw ValidationError("contingency table needs at least 2 rows");
  const std::size_t cols = table.front().size();
  if (cols < 2) throw ValidationError("contingency table needs at least 2 columns");
  std::vector<double> row_sum(rows, 0.0);
  std::vector<double> col_sum(cols, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (table[i].size() != cols) throw ValidationError("contingency table rows differ in length");
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = table[i][j];
      if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("contingency table has a negative count");
      row_sum[i] += v;
      col_sum[j] += v;
      total += v;
    }
  }
  ChiSquareResult result;
  result.df = static_cast<int>((rows - 1) * (cols - 1));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double expected = total > 0.0 ? row_sum[i] * col_sum[j] / total : 0.0;
      if (expected <= 0.0) {
        throw ValidationError("degenerate contingency table: expected count of cell (" + std::to_string(i) + ", " +
                              std::to_string(j) + ") is zero");
      }
      const double diff = table[i][j] - expected;
      result.statistic += diff * diff / expected;
    }
  }
  result.p_value = chi_square_upper_tail(result.statistic, result.df);
  if (result.p_value < kSmallestReportedP) {
    result.p_underflow = true;
    result.p_value = 0.0;
  }
  return result;
}

Interval wilson_interval(int successes, int trials, double z) {
  if (trials <= 0) throw ValidationError("Wilson interval needs at least one trial");
  if (successes < 0 || successes > trials) throw ValidationError("successes outside [0, trials]");
  const double n = trials;
  const double p = successes / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

AsymmetryReport asymmetry_report(std::span<const GradedPair> restore, std::span<const GradedPair> suppress) {
  if (restore.empty()) throw ValidationError("restore set is empty");
  if (suppress.empty()) throw ValidationError("suppress set is empty");
  AsymmetryReport out;
  out.restore.trials = static_cast<int>(restore.size());
  for (const auto& p : restore) out.restore.successes += released(p.baseline, p.patched) ? 1 : 0;
  out.suppress.trials = static_cast<int>(suppress.size());
  for (const auto& p : suppress) out.suppress.successes += cascade_collapsed(p.baseline, p.patched) ? 1 : 0;
  out.restore.ci = wilson_interval(out.restore.successes, out.restore.trials);
  out.suppress.ci = wilson_interval(out.suppress.successes, out.suppress.trials);
  return out;
}

json to_json(const AsymmetryReport& r) {
  auto arm = [](const RateWithInterval& x) {
    return json{{"successes", x.successes},
                {"trials", x.trials},
                {"rate_percent", 100.0 * x.rate()},
                {"wilson95_low_percent", 100.0 * x.ci.low},
                {"wilson95_high_percent", 100.0 * x.ci.high}};
  };
  return {{"restore", arm(r.restore)}, {"suppress", arm(r.suppress)}};
}

}  // namespace ordergap
