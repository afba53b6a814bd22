#include <doctest.h>

#include "ordergap/core_forge.hpp"
#include "ordergap/errors.hpp"
#include "ordergap/mock_backend.hpp"
#include "ordergap/remote_backend.hpp"

using namespace ordergap;

namespace {

struct Served {
  explicit Served(int layers = 32, int dim = 8, int context = 4096)
      : mock(layers, dim, context), server(mock), port(server.start("127.0.0.1", 0)) {}
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port); }
  MockBackend mock;
  BackendServer server;
  int port;
};

}  // namespace

TEST_CASE("remote backend reproduces the wrapped backend") {
  Served s;
  RemoteBackend remote(s.endpoint(), "mock");
  MockBackend local;
  CHECK(remote.descriptor() == local.descriptor());

  const std::string prompt = "Given that the premise holds, draft the memo.";
  CHECK(remote.generate_greedy(prompt, 24) == local.generate_greedy(prompt, 24));
  CHECK(remote.generate_greedy(prompt, 0).empty());

  const int layers[] = {0, 5, 31};
  CHECK(remote.capture_residual(prompt, layers) == local.capture_residual(prompt, layers));

  const auto core = capture_core(local, "anchor", kBodyWindow, Polarity::Safety);
  for (const auto& plan : {PatchPlan::replace(kBodyWindow), PatchPlan::add_scaled({26, 28}, -0.5),
                           PatchPlan::replace({24, 25}, PositionPolicy::EveryStep)}) {
    CHECK(remote.generate_with_injection(prompt, core, plan, 16) ==
          local.generate_with_injection(prompt, core, plan, 16));
  }
}

TEST_CASE("remote errors map to backend error types") {
  Served s(4, 3, 32);
  CHECK_THROWS_AS(RemoteBackend(s.endpoint(), "mock"), LoadError);
  RemoteBackend remote(s.endpoint());
  CHECK(remote.descriptor().model_id == "mock:4x3");
  CHECK_THROWS_AS(remote.generate_greedy("a prompt that is far too long for a tiny context", 8), LengthError);
  CHECK_THROWS_AS(RemoteBackend("http://127.0.0.1:1"), LoadError);
  CHECK_THROWS_AS(make_backend("some/checkpoint"), LoadError);
  CHECK_THROWS_AS(make_backend("mock:0x4"), LoadError);
  CHECK(make_backend("mock:4x3")->descriptor().hidden_dim == 3);
  CHECK_THROWS_AS(make_backend("some/checkpoint", s.endpoint()), LoadError);
  CHECK(make_backend("mock:4x3", s.endpoint())->descriptor().model_id == "mock:4x3");
}
