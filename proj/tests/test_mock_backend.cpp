#include <doctest.h>

#include <cmath>
#include <random>

#include "ordergap/errors.hpp"
#include "ordergap/mock_backend.hpp"

using namespace ordergap;

namespace {

// Second, deliberately naive implementation: recomputes the whole forward
// pass from scratch for every generated token.
struct NaiveMock {
  int L, d;

  // Injects at positions [first, last] of the layers in `inject`.
  std::vector<std::vector<double>> last_states(const std::vector<int>& syms, const LayerVectors* inject,
                                               std::size_t first, std::size_t last, bool replace, double scale) const {
    const std::size_t T = syms.size();
    const auto D = static_cast<std::size_t>(d);
    std::vector<std::vector<double>> prev(T, std::vector<double>(D, 0.0));
    for (std::size_t t = 0; t < T; ++t) prev[t][static_cast<std::size_t>(syms[t] % d)] = 1.0;
    std::vector<std::vector<double>> out_last;
    for (int l = 0; l < L; ++l) {
      std::vector<std::vector<double>> cur;
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> out(D);
        for (std::size_t i = 0; i < D; ++i) {
          double v = prev[t][i];
          for (std::size_t j = 0; j < D; ++j) {
            const double a = static_cast<double>((i + 2 * j + static_cast<std::size_t>(l)) % 3) - 1.0;
            v += a * prev[t][j];
          }
          if (t > 0) v += cur[t - 1][i];
          out[i] = v - 7.0 * std::floor(v / 7.0);
        }
        if (inject != nullptr && inject->contains(l) && t >= first && t <= last) {
          const auto& vec = inject->at(l);
          for (std::size_t i = 0; i < D; ++i) out[i] = replace ? vec[i] : out[i] + scale * vec[i];
        }
        cur.push_back(out);
      }
      out_last.push_back(cur.back());
      prev = cur;
    }
    return out_last;
  }

  std::string generate(const std::string& prompt, int n, const LayerVectors* inject = nullptr, bool every = false,
                       bool replace = true, double scale = 1.0) const {
    std::vector<int> syms;
    for (unsigned char b : prompt) syms.push_back(b % 4);
    const std::size_t P = syms.size();
    std::string out;
    for (int k = 0; k < n; ++k) {
      const auto st = last_states(syms, inject, P - 1, every ? syms.size() : P - 1, replace, scale);
      const auto& h = st.back();
      int best = 0;
      double best_v = -1e300;
      for (int s = 0; s < 4; ++s) {
        double v = 0.0;
        for (int j = 0; j < d; ++j) v += (((s + 3 * j) % 4) - 1) * h[static_cast<std::size_t>(j)];
        if (v > best_v) {
          best_v = v;
          best = s;
        }
      }
      out.push_back("dabc"[best]);
      syms.push_back(best);
    }
    return out;
  }
};

ActivationCore core_of(LayerVectors v, std::string model = "mock:4x3") {
  ActivationCore c;
  c.core_id = "t";
  c.model_id = std::move(model);
  c.vectors = std::move(v);
  return c;
}

std::vector<std::vector<float>> as_rows(const LayerVectors& v) {
  std::vector<std::vector<float>> out;
  for (const auto& [l, x] : v) out.push_back(x);
  return out;
}

}  // namespace

// Frozen values from tests/oracles/mock_oracle.py (exact rational arithmetic).
TEST_CASE("mock matches the frozen oracle") {
  MockBackend small(4, 3);
  const int all4[] = {0, 1, 2, 3};
  CHECK(small.generate_greedy("aa", 8) == "ccdddddc");
  CHECK(as_rows(small.capture_residual("a", all4)) == std::vector<std::vector<float>>{{1, 0, 0}, {1, 1, 6}, {3, 1, 4}, {1, 4, 3}});
  CHECK(as_rows(small.capture_residual("aa", all4)) == std::vector<std::vector<float>>{{2, 0, 0}, {3, 3, 4}, {5, 4, 2}, {5, 6, 1}});

  const auto zero = core_of({{2, {0, 0, 0}}});
  const auto trace = small.trace("aa", nullptr);
  Intervention iv{{{2, {0, 0, 0}}}, InjectionMode::Replace, 1.0, PositionPolicy::PrefillLastToken};
  const auto patched = small.trace("aa", &iv);
  std::vector<std::vector<double>> last;
  for (const auto& layer : patched) last.push_back(layer.back());
  CHECK(last == std::vector<std::vector<double>>{{2, 0, 0}, {3, 3, 4}, {0, 0, 0}, {1, 4, 3}});
  CHECK(trace.size() == 4);

  PatchPlan prefill{{2}, InjectionMode::Replace, std::nullopt, PositionPolicy::PrefillLastToken};
  PatchPlan every = prefill;
  every.position_policy = PositionPolicy::EveryStep;
  CHECK(small.generate_with_injection("aa", zero, prefill, 8) == "ddcddcdd");
  CHECK(small.generate_with_injection("aa", zero, every, 8) == "dddddddd");

  const auto add = core_of({{1, {1, 2, 3}}});
  PatchPlan scaled{{1}, InjectionMode::AddScaled, 0.5, PositionPolicy::PrefillLastToken};
  CHECK(small.generate_with_injection("abc", add, scaled, 8) == "cccdadac");

  MockBackend full;
  CHECK(full.descriptor().model_id == "mock");
  CHECK(full.generate_greedy("squish and release", 16) == "daddddcaaaabbccc");
  const std::vector<std::vector<float>> abc = {{3, 5, 6, 4, 2, 2, 3, 2}, {0, 4, 2, 1, 3, 4, 0, 3}, {0, 3, 3, 1, 3, 4, 0, 3},
                                               {2, 3, 2, 3, 3, 2, 2, 3}, {0, 1, 1, 1, 0, 0, 0, 0}, {2, 2, 1, 3, 6, 6, 2, 6},
                                               {6, 4, 6, 0, 5, 3, 6, 5}, {4, 2, 1, 5, 6, 4, 4, 6}};
  CHECK(as_rows(full.capture_residual("abc", kBodyWindow.layers())) == abc);
}

TEST_CASE("mock agrees with a from-scratch recomputation on random prompts") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> ch(32, 126), len(1, 10), shape(2, 6);
  for (int trial = 0; trial < 30; ++trial) {
    const int L = shape(rng), d = shape(rng);
    MockBackend m(L, d);
    NaiveMock naive{L, d};
    std::string prompt;
    for (int i = len(rng); i > 0; --i) prompt.push_back(static_cast<char>(ch(rng)));
    CAPTURE(prompt);
    CHECK(m.generate_greedy(prompt, 6) == naive.generate(prompt, 6));
    LayerVectors v;
    const int layer = static_cast<int>(rng() % static_cast<unsigned>(L));
    Vector x(static_cast<std::size_t>(d));
    for (auto& e : x) e = static_cast<float>(static_cast<int>(rng() % 7));
    v[layer] = x;
    const auto core = core_of(v, m.descriptor().model_id);
    PatchPlan plan{{layer}, InjectionMode::Replace, std::nullopt, PositionPolicy::PrefillLastToken};
    CHECK(m.generate_with_injection(prompt, core, plan, 6) == naive.generate(prompt, 6, &v, false));
    plan.position_policy = PositionPolicy::EveryStep;
    CHECK(m.generate_with_injection(prompt, core, plan, 6) == naive.generate(prompt, 6, &v, true));
  }
}

TEST_CASE("detokenize round trip and descriptor") {
  CHECK(MockBackend::tokenize("abcd") == std::vector<int>{1, 2, 3, 0});
  std::string text;
  for (int s : MockBackend::tokenize("dabc")) text.push_back(MockBackend::detokenize(s));
  CHECK(text == "dabc");
  MockBackend m(5, 2);
  CHECK(m.descriptor().model_id == "mock:5x2");
  CHECK(m.descriptor().layer_count == 5);
  CHECK(m.descriptor().hidden_dim == 2);
  CHECK(make_backend("mock:3x4")->descriptor().hidden_dim == 4);
  CHECK_THROWS_AS(make_backend("mock:0x4"), LoadError);
  CHECK_THROWS_AS(make_backend("some-model"), LoadError);
}

TEST_CASE("budget and context errors") {
  MockBackend m(2, 2, 16);
  CHECK(m.generate_greedy("abc", 0).empty());
  CHECK_THROWS_AS(m.generate_greedy("abc", 20), LengthError);
  CHECK_THROWS_AS(m.generate_greedy("", 2), ValidationError);
  const int bad[] = {2};
  CHECK_THROWS_AS(m.capture_residual("abc", bad), ValidationError);
  const int dup[] = {1, 0, 1};
  CHECK(m.capture_residual("abc", dup).size() == 2);
}

TEST_CASE("injection compatibility checks") {
  MockBackend m(4, 3);
  PatchPlan plan{{2, 3}, InjectionMode::Replace, std::nullopt, PositionPolicy::PrefillLastToken};
  auto core = core_of({{2, {1, 1, 1}}});
  CHECK_THROWS_AS(m.generate_with_injection("ab", core, plan, 2), ValidationError);  // layer 3 missing
  core.vectors[3] = {1, 1};
  CHECK_THROWS_AS(m.generate_with_injection("ab", core, plan, 2), ValidationError);  // wrong dim
  core.vectors[3] = {1, 1, 1};
  CHECK_NOTHROW(m.generate_with_injection("ab", core, plan, 2));
  plan.scale = 2.0;
  CHECK_THROWS_AS(m.generate_with_injection("ab", core, plan, 2), ValidationError);  // replace with scale
}
