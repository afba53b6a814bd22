#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ordergap/chain.hpp"

namespace ordergap {

using Vector = std::vector<float>;
// Residual-stream vectors keyed by layer index, ascending.
using LayerVectors = std::map<int, Vector>;

enum class Polarity { Safety, Absorb };
enum class Construction { Single, Averaged, Blended, SyntheticAnchor, Cluster };

std::string_view to_string(Polarity p);
Polarity parse_polarity(std::string_view text);
std::string_view to_string(Construction c);
Construction parse_construction(std::string_view text);

struct CaptureProvenance {
  std::vector<std::string> anchors;  // anchor identifiers, e.g. "chain:183:O2"
  OrderLevel order_level = OrderLevel::O2;
  std::string position = "last_prompt_token";
  std::string timestamp;             // ISO-8601 UTC
  std::vector<std::string> parents;  // core ids this core was combined from
  bool polarity_override = false;    // capture level deliberately breaks the polarity convention

  bool operator==(const CaptureProvenance&) const = default;
};

// A swappable detector core: layer-indexed residual vectors plus where they
// came from. Immutable once built.
struct ActivationCore {
  std::string core_id;
  Polarity polarity = Polarity::Safety;
  LayerVectors vectors;
  std::string model_id;
  CaptureProvenance capture;
  Construction construction = Construction::Single;

  std::size_t hidden_dim() const { return vectors.empty() ? 0 : vectors.begin()->second.size(); }
  std::vector<int> layers() const;
  bool has_layer(int layer) const { return vectors.contains(layer); }

  bool operator==(const ActivationCore&) const = default;
};

// Checks the core invariants: non-empty, one hidden_dim, contiguous layer
// window, and safety <=> O2 / absorb <=> O5 unless polarity_override is set.
void validate_core(const ActivationCore& core);
void check_polarity_convention(const std::string& core_id, Polarity polarity, const CaptureProvenance& capture);

}  // namespace ordergap
