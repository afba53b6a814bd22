#include "ordergap/mock_backend.hpp"

#include <cmath>

#include "ordergap/errors.hpp"

namespace ordergap {

MockBackend::MockBackend(int layer_count, int hidden_dim, int max_context)
    : descriptor_{"mock", layer_count, hidden_dim, true}, max_context_(max_context) {
  validate_descriptor(descriptor_);
  if (layer_count != 32 || hidden_dim != 8) {
    descriptor_.model_id = "mock:" + std::to_string(layer_count) + "x" + std::to_string(hidden_dim);
  }
}

std::vector<int> MockBackend::tokenize(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(static_cast<unsigned char>(c) % kVocab);
  return out;
}

char MockBackend::detokenize(int symbol) {
  static constexpr char kChars[kVocab] = {'d', 'a', 'b', 'c'};
  return kChars[symbol];
}

int MockBackend::block_coefficient(int layer, int row, int col) const {
  return ((row + 2 * col + layer) % 3) - 1;
}

int MockBackend::logit_weight(int symbol, int col) const { return ((symbol + 3 * col) % 4) - 1; }

void MockBackend::step(int symbol, std::vector<std::vector<State>>& columns,
                       const Intervention* intervention) const {
  const int d = descriptor_.hidden_dim;
  State x(static_cast<std::size_t>(d), 0.0);
  x[static_cast<std::size_t>(symbol % d)] = 1.0;
  for (int l = 0; l < descriptor_.layer_count; ++l) {
    auto& column = columns[static_cast<std::size_t>(l)];
    State out(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      double acc = x[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j) acc += block_coefficient(l, i, j) * x[static_cast<std::size_t>(j)];
      if (!column.empty()) acc += column.back()[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(i)] = acc - kModulus * std::floor(acc / kModulus);
    }
    if (intervention != nullptr) {
      if (auto it = intervention->vectors.find(l); it != intervention->vectors.end()) {
        for (int i = 0; i < d; ++i) {
          const double v = it->second[static_cast<std::size_t>(i)];
          if (intervention->mode == InjectionMode::Replace) {
            out[static_cast<std::size_t>(i)] = v;
          } else {
            out[static_cast<std::size_t>(i)] += intervention->scale * v;
          }
        }
      }
    }
    column.push_back(out);
    x = std::move(out);
  }
}

int MockBackend::pick(const State& h) const {
  int best = 0;
  double best_logit = 0.0;
  for (int s = 0; s < kVocab; ++s) {
    double logit = 0.0;
    for (int j = 0; j < descriptor_.hidden_dim; ++j) logit += logit_weight(s, j) * h[static_cast<std::size_t>(j)];
    if (s == 0 || logit > best_logit) {
      best = s;
      best_logit = logit;
    }
  }
  return best;
}

std::vector<std::vector<std::vector<double>>> MockBackend::trace(std::string_view prompt,
                                                                 const Intervention* intervention) const {
  const auto symbols = tokenize(prompt);
  std::vector<std::vector<State>> columns(static_cast<std::size_t>(descriptor_.layer_count));
  for (std::size_t t = 0; t < symbols.size(); ++t) {
    step(symbols[t], columns, t + 1 == symbols.size() ? intervention : nullptr);
  }
  return columns;
}

std::string MockBackend::do_generate(std::string_view prompt, int max_new_tokens,
                                     const Intervention* intervention) {
  const auto symbols = tokenize(prompt);
  if (symbols.size() + static_cast<std::size_t>(max_new_tokens) > static_cast<std::size_t>(max_context_)) {
    throw LengthError("prompt of " + std::to_string(symbols.size()) + " tokens plus " +
                      std::to_string(max_new_tokens) + " new tokens exceeds context of " +
                      std::to_string(max_context_));
  }
  std::vector<std::vector<State>> columns(static_cast<std::size_t>(descriptor_.layer_count));
  for (std::size_t t = 0; t < symbols.size(); ++t) {
    step(symbols[t], columns, t + 1 == symbols.size() ? intervention : nullptr);
  }
  const bool every_step = intervention != nullptr && intervention->policy == PositionPolicy::EveryStep;
  std::string text;
  text.reserve(static_cast<std::size_t>(max_new_tokens));
  for (int n = 0; n < max_new_tokens; ++n) {
    const int next = pick(columns.back().back());
    text.push_back(detokenize(next));
    if (n + 1 < max_new_tokens) step(next, columns, every_step ? intervention : nullptr);
  }
  return text;
}

LayerVectors MockBackend::do_capture(std::string_view prompt, std::span<const int> layers) {
  if (tokenize(prompt).size() > static_cast<std::size_t>(max_context_)) {
    throw LengthError("prompt exceeds context of " + std::to_string(max_context_));
  }
  const auto states = trace(prompt);
  LayerVectors out;
  for (int layer : layers) {
    const auto& h = states[static_cast<std::size_t>(layer)].back();
    out.emplace(layer, Vector(h.begin(), h.end()));
  }
  return out;
}

}  // namespace ordergap
