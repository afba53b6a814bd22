#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordergap/chain.hpp"
#include "ordergap/run_record.hpp"

namespace ordergap {

// Counts indexed [baseline][patched] with index 0 = DETECT, 1 = PARTIAL,
// 2 = ABSORB.
struct TransitionMatrix {
  std::array<std::array<int, 3>, 3> counts{};

  static constexpr std::size_t index(Grade g) { return 2 - static_cast<std::size_t>(g); }
  int& at(Grade baseline, Grade patched) { return counts[index(baseline)][index(patched)]; }
  int at(Grade baseline, Grade patched) const { return counts[index(baseline)][index(patched)]; }
  int row_sum(Grade baseline) const;
  int column_sum(Grade patched) const;
  int total() const;
};

struct GradedPair {
  int chain_id = 0;
  Grade baseline = Grade::Absorb;
  Grade patched = Grade::Absorb;
};

struct ReleaseReport {
  int population = 0;  // chains with both runs ok and graded
  int released = 0;
  int full_restorations = 0;
  int excluded_failed = 0;  // chains dropped because a run failed
  TransitionMatrix transitions;
  std::vector<int> released_ids;

  // Percentage of population; 0 when the population is empty.
  double rate_percent() const;
};

ReleaseReport release_rate(std::span<const GradedPair> pairs, int excluded_failed = 0);

// Picks the records that make up one arm of a comparison.
struct ArmSelector {
  OrderLevel order_level = OrderLevel::O5;
  Condition condition = Condition::Baseline;
  std::optional<std::string> core_id;  // nullopt: the unpatched run
  std::string variant;

  bool matches(const RunRecord& r) const;
  std::string describe() const;
};

inline ArmSelector baseline_arm(OrderLevel level = OrderLevel::O5, Condition condition = Condition::Baseline,
                                std::string variant = {}) {
  return {level, condition, std::nullopt, std::move(variant)};
}

inline ArmSelector patched_arm(std::string core_id, OrderLevel level = OrderLevel::O5,
                               Condition condition = Condition::Patched, std::string variant = {}) {
  return {level, condition, std::move(core_id), std::move(variant)};
}

struct PairingResult {
  std::vector<GradedPair> pairs;
  int excluded_failed = 0;
};

// Matches each population chain's baseline and patched record within the
// same experiment. Throws IncompleteGradingError listing every pending
// run_id in scope, ValidationError when a chain lacks either arm or has
// more than one candidate. An empty population means every chain that has
// a patched record.
PairingResult pair_records(std::span<const RunRecord> records, std::span<const int> population,
                           const ArmSelector& baseline, const ArmSelector& patched);

ReleaseReport release_rate(std::span<const RunRecord> records, std::span<const int> population,
                           const ArmSelector& baseline, const ArmSelector& patched);

nlohmann::json to_json(const ReleaseReport& report);
std::string format_release_report(const ReleaseReport& report, const std::string& title);

// ---- chi-square -------------------------------------------------------------

struct ChiSquareResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  bool p_underflow = false;  // true p is below kSmallestReportedP

  std::string p_text() const;  // "< 10^-300" on underflow
};

inline constexpr double kSmallestReportedP = 1e-300;

// Pearson's statistic with expected counts from the row and column
// marginals; df = (rows - 1)(cols - 1); p from the chi-square upper tail.
ChiSquareResult chi_square(const std::vector<std::vector<double>>& table);
// Upper-tail probability of the chi-square distribution.
double chi_square_upper_tail(double statistic, int df);

// ---- binomial intervals -------------------------------------------------------

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

inline constexpr double kZ95 = 1.959963984540054;

Interval wilson_interval(int successes, int trials, double z = kZ95);

struct RateWithInterval {
  int successes = 0;
  int trials = 0;
  Interval ci;

  double rate() const { return trials == 0 ? 0.0 : static_cast<double>(successes) / trials; }
};

struct AsymmetryReport {
  RateWithInterval restore;   // patched strictly better than baseline
  RateWithInterval suppress;  // patched strictly worse than baseline
};

// Throws ValidationError when either set is empty.
AsymmetryReport asymmetry_report(std::span<const GradedPair> restore, std::span<const GradedPair> suppress);

nlohmann::json to_json(const AsymmetryReport& report);
std::string format_percent(double fraction_or_percent, bool is_fraction = true);

}  // namespace ordergap
