#pragma once

#include <array>
#include <compare>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ordergap {

// Ordered verdict. Enumerator values encode the rubric order
// DETECT > PARTIAL > ABSORB, so built-in comparison is the grade order.
enum class Grade : int { Absorb = 0, Partial = 1, Detect = 2 };

inline constexpr std::array<Grade, 3> kAllGrades{Grade::Detect, Grade::Partial, Grade::Absorb};

std::string_view to_string(Grade g);
// Accepts DETECT/PARTIAL/ABSORB (case-insensitive), the single letters D/P/A,
// and COMPLY as a synonym of ABSORB.
Grade parse_grade(std::string_view text);

enum class OrderLevel : int { O1 = 1, O2 = 2, O3 = 3, O4 = 4, O5 = 5 };

std::string_view to_string(OrderLevel level);
OrderLevel parse_order_level(std::string_view text);

enum class PremiseClass { Empirical, Normative, Unknown };

std::string_view to_string(PremiseClass c);
PremiseClass parse_premise_class(std::string_view text);

struct Chain {
  int id = 0;
  std::string domain;
  std::string precondition_false;
  std::string precondition_true;
  std::array<std::string, 5> orders;  // O1..O5
  PremiseClass premise_class = PremiseClass::Unknown;

  const std::string& order(OrderLevel level) const {
    return orders[static_cast<std::size_t>(level) - 1];
  }

  bool operator==(const Chain&) const = default;
};

// Throws ValidationError naming the chain id.
void validate_chain(const Chain& chain);

// Parses one benchmark record (a single JSON object). `line` is used in
// error messages only.
Chain parse_chain_record(std::string_view record, std::size_t line = 0);
std::string chain_record(const Chain& chain);

std::vector<Chain> parse_benchmark(std::string_view contents);
std::vector<Chain> load_benchmark(const std::filesystem::path& path);

const Chain* find_chain(const std::vector<Chain>& chains, int id);

// O5 strictly worse than O2.
constexpr bool cascade_collapsed(Grade grade_o2, Grade grade_o5) noexcept {
  return grade_o5 < grade_o2;
}

// Patched strictly better than the same chain's unpatched O5 grade.
constexpr bool released(Grade grade_baseline, Grade grade_patched) noexcept {
  return grade_patched > grade_baseline;
}

// ABSORB -> DETECT.
constexpr bool full_restoration(Grade grade_baseline, Grade grade_patched) noexcept {
  return grade_baseline == Grade::Absorb && grade_patched == Grade::Detect;
}

// The true-premise counterpart of an order prompt: every occurrence of the
// false precondition replaced by the true one. Throws ValidationError when
// the false precondition does not occur verbatim.
std::string true_premise_prompt(const Chain& chain, OrderLevel level);

}  // namespace ordergap
