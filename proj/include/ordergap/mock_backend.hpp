#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ordergap/backend.hpp"

namespace ordergap {

// Fully deterministic stand-in for a transformer, exact over small integers.
//
//   tokens     byte b -> symbol b mod 4; symbol s prints as "dabc"[s]
//   embedding  one-hot of (s mod hidden_dim)
//   block l    h[l][t] = wrap(h[l-1][t] + A_l h[l-1][t] + h[l][t-1]),
//              A_l[i][j] = ((i + 2j + l) mod 3) - 1,  h[l][-1] = 0,
//              wrap(v) = v - 7 floor(v / 7) elementwise
//   logits     W h[L-1][T-1],  W[s][j] = ((s + 3j) mod 4) - 1
//   decode     argmax, lowest symbol index wins ties
//
// The h[l][t-1] term is the only cross-position path, so an injected state
// at the last prompt token conditions every later token.
class MockBackend final : public Backend {
 public:
  static constexpr int kVocab = 4;
  static constexpr double kModulus = 7.0;

  explicit MockBackend(int layer_count = 32, int hidden_dim = 8, int max_context = 4096);

  const BackendDescriptor& descriptor() const override { return descriptor_; }

  // Post-block states for every layer and prompt position: [layer][position].
  // Same forward pass the generators use, with the intervention applied at
  // the last prompt token.
  std::vector<std::vector<std::vector<double>>> trace(std::string_view prompt,
                                                      const Intervention* intervention = nullptr) const;

  static std::vector<int> tokenize(std::string_view text);
  static char detokenize(int symbol);
  int block_coefficient(int layer, int row, int col) const;
  int logit_weight(int symbol, int col) const;

 protected:
  std::string do_generate(std::string_view prompt, int max_new_tokens,
                          const Intervention* intervention) override;
  LayerVectors do_capture(std::string_view prompt, std::span<const int> layers) override;

 private:
  using State = std::vector<double>;

  // Appends one position to `columns` ([layer][position]), optionally
  // applying the intervention at that position.
  void step(int symbol, std::vector<std::vector<State>>& columns, const Intervention* intervention) const;
  int pick(const State& final_state) const;

  BackendDescriptor descriptor_;
  int max_context_;
};

}  // namespace ordergap
