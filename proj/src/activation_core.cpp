#include "ordergap/activation_core.hpp"

#include "ordergap/errors.hpp"

namespace ordergap {

std::string_view to_string(Polarity p) { return p == Polarity::Safety ? "safety" : "absorb"; }

Polarity parse_polarity(std::string_view text) {
  if (text == "safety") return Polarity::Safety;
  if (text == "absorb") return Polarity::Absorb;
  throw ValidationError("unknown polarity '" + std::string(text) + "'");
}

std::string_view to_string(Construction c) {
  switch (c) {
    case Construction::Single: return "single";
    case Construction::Averaged: return "averaged";
    case Construction::Blended: return "blended";
    case Construction::SyntheticAnchor: return "synthetic_anchor";
    case Construction::Cluster: return "cluster";
  }
  return "single";
}

Construction parse_construction(std::string_view text) {
  if (text == "single") return Construction::Single;
  if (text == "averaged") return Construction::Averaged;
  if (text == "blended") return Construction::Blended;
  if (text == "synthetic_anchor") return Construction::SyntheticAnchor;
  if (text == "cluster") return Construction::Cluster;
  throw ValidationError("unknown construction '" + std::string(text) + "'");
}

std::vector<int> ActivationCore::layers() const {
  std::vector<int> out;
  out.reserve(vectors.size());
  for (const auto& [layer, v] : vectors) out.push_back(layer);
  return out;
}

void check_polarity_convention(const std::string& core_id, Polarity polarity, const CaptureProvenance& capture) {
  if (capture.polarity_override) return;
  const OrderLevel want = polarity == Polarity::Safety ? OrderLevel::O2 : OrderLevel::O5;
  if (capture.order_level != want) {
    throw ValidationError("core '" + core_id + "': " + std::string(to_string(polarity)) + " cores are captured at " +
                          std::string(to_string(want)) + ", not " + std::string(to_string(capture.order_level)) +
                          " (set polarity_override)");
  }
}

void validate_core(const ActivationCore& core) {
  const std::string who = "core '" + core.core_id + "'";
  if (core.core_id.empty()) throw ValidationError("core id must be non-empty");
  if (core.vectors.empty()) throw ValidationError(who + " has no layers");
  const std::size_t dim = core.hidden_dim();
  if (dim == 0) throw ValidationError(who + " has zero hidden_dim");
  int expected = core.vectors.begin()->first;
  for (const auto& [layer, v] : core.vectors) {
    if (v.size() != dim) {
      throw ValidationError(who + ": layer " + std::to_string(layer) + " has dimension " +
                            std::to_string(v.size()) + ", expected " + std::to_string(dim));
    }
    if (layer != expected) throw ValidationError(who + ": layer window is not contiguous");
    ++expected;
  }
  check_polarity_convention(core.core_id, core.polarity, core.capture);
}

}  // namespace ordergap
