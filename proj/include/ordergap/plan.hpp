#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ordergap {

// Inclusive range of layer indices.
struct LayerWindow {
  int first = 0;
  int last = 0;

  std::vector<int> layers() const;
  int size() const { return last - first + 1; }
  bool contains(int layer) const { return layer >= first && layer <= last; }
  bool overlaps(const LayerWindow& other) const { return first <= other.last && other.first <= last; }
  std::string label() const;  // "24-31"

  bool operator==(const LayerWindow&) const = default;
};

// "24-31" or "7".
LayerWindow parse_window(std::string_view text);

// The reference detector body and the four ablation windows.
inline constexpr LayerWindow kBodyWindow{24, 31};
inline const std::vector<LayerWindow> kAblationWindows{{0, 7}, {8, 15}, {16, 23}, {24, 31}};

enum class InjectionMode { Replace, AddScaled };
enum class PositionPolicy { PrefillLastToken, EveryStep };

std::string_view to_string(InjectionMode m);
InjectionMode parse_injection_mode(std::string_view text);
std::string_view to_string(PositionPolicy p);
PositionPolicy parse_position_policy(std::string_view text);

struct PatchPlan {
  std::vector<int> layers;  // strictly ascending
  InjectionMode mode = InjectionMode::Replace;
  std::optional<double> scale;  // add_scaled only
  PositionPolicy position_policy = PositionPolicy::PrefillLastToken;

  static PatchPlan replace(const LayerWindow& window,
                           PositionPolicy policy = PositionPolicy::PrefillLastToken);
  static PatchPlan add_scaled(const LayerWindow& window, double scale,
                              PositionPolicy policy = PositionPolicy::PrefillLastToken);

  // Stable one-line description stored with every run, e.g.
  // "replace@24-31/prefill_last_token".
  std::string summary() const;

  bool operator==(const PatchPlan&) const = default;
};

// Throws ValidationError unless layers are non-empty, strictly ascending,
// inside [0, layer_count), and scale is present exactly for add_scaled.
void validate_plan(const PatchPlan& plan, int layer_count);

}  // namespace ordergap
