#include "ordergap/plan.hpp"

#include <charconv>

#include "ordergap/errors.hpp"

namespace ordergap {

std::vector<int> LayerWindow::layers() const {
  std::vector<int> out;
  for (int l = first; l <= last; ++l) out.push_back(l);
  return out;
}

std::string LayerWindow::label() const {
  return first == last ? std::to_string(first) : std::to_string(first) + "-" + std::to_string(last);
}

namespace {

int parse_int(std::string_view s, std::string_view whole) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw ValidationError("bad layer window '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

LayerWindow parse_window(std::string_view text) {
  const auto dash = text.find('-');
  LayerWindow w;
  if (dash == std::string_view::npos) {
    w.first = w.last = parse_int(text, text);
  } else {
    w.first = parse_int(text.substr(0, dash), text);
    w.last = parse_int(text.substr(dash + 1), text);
  }
  if (w.first < 0 || w.last < w.first) throw ValidationError("bad layer window '" + std::string(text) + "'");
  return w;
}

std::string_view to_string(InjectionMode m) { return m == InjectionMode::Replace ? "replace" : "add_scaled"; }

InjectionMode parse_injection_mode(std::string_view text) {
  if (text == "replace") return InjectionMode::Replace;
  if (text == "add_scaled") return InjectionMode::AddScaled;
  throw ValidationError("unknown injection mode '" + std::string(text) + "'");
}

std::string_view to_string(PositionPolicy p) {
  return p == PositionPolicy::PrefillLastToken ? "prefill_last_token" : "every_step";
}

PositionPolicy parse_position_policy(std::string_view text) {
  if (text == "prefill_last_token") return PositionPolicy::PrefillLastToken;
  if (text == "every_step") return PositionPolicy::EveryStep;
  throw ValidationError("unknown position policy '" + std::string(text) + "'");
}

PatchPlan PatchPlan::replace(const LayerWindow& window, PositionPolicy policy) {
  return PatchPlan{window.layers(), InjectionMode::Replace, std::nullopt, policy};
}

PatchPlan PatchPlan::add_scaled(const LayerWindow& window, double scale, PositionPolicy policy) {
  return PatchPlan{window.layers(), InjectionMode::AddScaled, scale, policy};
}

std::string PatchPlan::summary() const {
  std::string out(to_string(mode));
  if (scale) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, *scale);
    out += "(" + std::string(buf, ptr) + ")";
  }
  out += "@";
  const bool contiguous = !layers.empty() && layers.back() - layers.front() + 1 == static_cast<int>(layers.size());
  if (contiguous) {
    out += LayerWindow{layers.front(), layers.back()}.label();
  } else {
    for (std::size_t i = 0; i < layers.size(); ++i) out += (i ? "," : "") + std::to_string(layers[i]);
  }
  out += "/";
  out += to_string(position_policy);
  return out;
}

void validate_plan(const PatchPlan& plan, int layer_count) {
  if (plan.layers.empty()) throw ValidationError("patch plan has no layers");
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    const int l = plan.layers[i];
    if (l < 0 || l >= layer_count) {
      throw ValidationError("patch plan layer " + std::to_string(l) + " outside [0, " +
                            std::to_string(layer_count) + ")");
    }
    if (i > 0 && l <= plan.layers[i - 1]) throw ValidationError("patch plan layers must be strictly ascending");
  }
  if (plan.mode == InjectionMode::Replace && plan.scale) {
    throw ValidationError("replace-mode plans take no scale");
  }
  if (plan.mode == InjectionMode::AddScaled && !plan.scale) {
    throw ValidationError("add_scaled plans require a scale");
  }
}

}  // namespace ordergap
