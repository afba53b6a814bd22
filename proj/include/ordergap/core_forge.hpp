#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ordergap/activation_core.hpp"
#include "ordergap/backend.hpp"
#include "ordergap/plan.hpp"

namespace ordergap {

struct CaptureOptions {
  std::string core_id;               // defaults to "<polarity>-<anchor or hash>"
  std::vector<std::string> anchors;  // provenance labels, e.g. "chain:183:O2"
  // Defaults to O2 for safety cores and O5 for absorb cores.
  std::optional<OrderLevel> order_level;
  bool polarity_override = false;
  Construction construction = Construction::Single;
};

// One capture_residual call over `window` at the anchor's last token.
ActivationCore capture_core(Backend& backend, std::string_view anchor_prompt, const LayerWindow& window,
                            Polarity polarity, const CaptureOptions& options = {});

// Per-layer elementwise mean. Each element is summed in double precision over
// the inputs sorted by value, so the result is independent of input order,
// then rounded once to float.
ActivationCore average_cores(std::span<const ActivationCore> cores, std::string core_id = {});

// Same arithmetic as average_cores over {a, b}, recorded as a blend.
ActivationCore blend_cores(const ActivationCore& a, const ActivationCore& b, std::string core_id = {});

inline constexpr int kCoreFormatVersion = 1;

// Payload bytes: little-endian float32, layers ascending, hidden_dim each.
std::vector<std::uint8_t> core_payload(const ActivationCore& core);
std::uint64_t core_checksum(const ActivationCore& core);

// Header line (JSON object, '\n'-terminated) followed by the payload.
std::vector<std::uint8_t> serialize_core(const ActivationCore& core);
ActivationCore deserialize_core(std::span<const std::uint8_t> bytes);

void save_core(const ActivationCore& core, const std::filesystem::path& path);
ActivationCore load_core(const std::filesystem::path& path);

std::string utc_timestamp();

}  // namespace ordergap
