#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pdlearn/nn.hpp"
#include "pdlearn/rng.hpp"
#include "support/finite_diff.hpp"

using namespace pdlearn;
using nn::Activation;
using nn::Mlp;

namespace {

Mlp single_layer(double w, double b, Activation act) {
  Mlp net(std::vector<nn::LayerSpec>{{1, 1, act}});
  net.params()[0] = w;
  net.params()[1] = b;
  return net;
}

// Random net with no pre-activation near a ReLU kink, so central
// differences are valid at the checked point.
struct RandomCase {
  Mlp net;
  std::vector<double> input;
  std::vector<double> upstream;
};

RandomCase random_case(Rng& rng, int max_hidden_layers = 3) {
  const Activation acts[] = {Activation::kIdentity, Activation::kRelu,
                             Activation::kSigmoid};
  while (true) {
    const int in = 1 + static_cast<int>(rng.below(5));
    const int out = 1 + static_cast<int>(rng.below(4));
    std::vector<int> hidden(1 + rng.below(static_cast<std::uint64_t>(max_hidden_layers)));
    for (int& w : hidden) w = 2 + static_cast<int>(rng.below(6));
    Mlp net(in, hidden, out, acts[rng.below(3)], acts[rng.below(3)]);
    nn::init_he_uniform(net, rng);
    for (double& p : net.params()) p += 0.05 * rng.normal01();
    std::vector<double> input(static_cast<std::size_t>(in));
    for (double& v : input) v = rng.uniform(-2.0, 2.0);
    if (testsupport::near_relu_kink(net, input, 1e-3)) continue;
    std::vector<double> upstream(static_cast<std::size_t>(out));
    for (double& v : upstream) v = rng.uniform(-1.5, 1.5);
    return {std::move(net), std::move(input), std::move(upstream)};
  }
}

}  // namespace

TEST_CASE("forward: single-layer identity is the identity map", "[nn]") {
  const Mlp net = single_layer(1.0, 0.0, Activation::kIdentity);
  REQUIRE(net.forward(std::vector<double>{3.0})[0] == 3.0);
}

TEST_CASE("forward: ReLU clamps a negative pre-activation", "[nn]") {
  const Mlp net = single_layer(-1.0, 0.0, Activation::kRelu);
  REQUIRE(net.forward(std::vector<double>{2.0})[0] == 0.0);
}

TEST_CASE("forward: two-layer hand-computed chain", "[nn]") {
  // 2->2 identity with W=[[1,1],[1,-1]], b=0; then 2->1 with W=[[.5,.5]], b=1.
  Mlp net(std::vector<nn::LayerSpec>{{2, 2, Activation::kIdentity},
                                     {2, 1, Activation::kIdentity}});
  auto p = net.params();
  p[0] = 1.0; p[1] = 1.0;   // first row
  p[2] = 1.0; p[3] = -1.0;  // second row
  p[4] = 0.0; p[5] = 0.0;   // biases
  p[6] = 0.5; p[7] = 0.5;   // output weights
  p[8] = 1.0;               // output bias
  const auto y = net.forward(std::vector<double>{1.0, 1.0});
  // layer 1 -> (2, 0); output 0.5*2 + 0.5*0 + 1 = 2
  REQUIRE(y[0] == Catch::Approx(2.0).margin(1e-15));
}

TEST_CASE("forward: dimension mismatch is a hard error", "[nn]") {
  const Mlp net = single_layer(1.0, 0.0, Activation::kIdentity);
  REQUIRE_THROWS_AS(net.forward(std::vector<double>{1.0, 2.0}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(net.backward(std::vector<double>{1.0},
                                 std::vector<double>{1.0, 2.0}),
                    std::invalid_argument);
}

TEST_CASE("layer dimensions must chain", "[nn]") {
  REQUIRE_THROWS_AS(Mlp(std::vector<nn::LayerSpec>{
                        {2, 3, Activation::kRelu}, {4, 1, Activation::kRelu}}),
                    std::invalid_argument);
}

TEST_CASE("backward: linear map derivative", "[nn]") {
  const double w = 1.7, b = -0.3, x = 0.9;
  const Mlp net = single_layer(w, b, Activation::kIdentity);
  const nn::Gradients g =
      net.backward(std::vector<double>{x}, std::vector<double>{1.0});
  REQUIRE(g.d_params[0] == Catch::Approx(x));   // dw
  REQUIRE(g.d_params[1] == Catch::Approx(1.0)); // db
  REQUIRE(g.d_input[0] == Catch::Approx(w));
}

TEST_CASE("backward: ReLU dead region zeroes every gradient", "[nn]") {
  const Mlp net = single_layer(1.0, -5.0, Activation::kRelu);  // pre-act -3
  const nn::Gradients g =
      net.backward(std::vector<double>{2.0}, std::vector<double>{4.0});
  REQUIRE(g.d_params[0] == 0.0);
  REQUIRE(g.d_params[1] == 0.0);
  REQUIRE(g.d_input[0] == 0.0);
}

TEST_CASE("backward: random two-hidden-layer net matches finite differences",
          "[nn]") {
  Rng rng(42);
  const Activation acts[] = {Activation::kIdentity, Activation::kRelu,
                             Activation::kSigmoid};
  for (const Activation hidden_act : acts) {
    Mlp net(3, std::vector<int>{5, 4}, 2, hidden_act, Activation::kIdentity);
    nn::init_he_uniform(net, rng);
    std::vector<double> x{0.37, -0.81, 1.23};
    if (testsupport::near_relu_kink(net, x, 1e-3)) x[0] += 0.01;
    const std::vector<double> upstream{0.7, -1.1};
    const nn::Gradients g = net.backward(x, upstream);
    const auto fd_p = testsupport::fd_param_gradient(net, x, upstream);
    const auto fd_x = testsupport::fd_input_gradient(net, x, upstream);
    REQUIRE(testsupport::max_rel_error(g.d_params, fd_p) < 1e-5);
    REQUIRE(testsupport::max_rel_error(g.d_input, fd_x) < 1e-5);
  }
}

TEST_CASE("gradient property: 100 random configurations, both outputs",
          "[nn][gradcheck]") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    RandomCase c = random_case(rng);
    const nn::Gradients g = c.net.backward(c.input, c.upstream);
    const auto fd_p = testsupport::fd_param_gradient(c.net, c.input, c.upstream);
    const auto fd_x = testsupport::fd_input_gradient(c.net, c.input, c.upstream);
    INFO("trial " << trial);
    REQUIRE(testsupport::max_rel_error(g.d_params, fd_p) < 1e-5);
    REQUIRE(testsupport::max_rel_error(g.d_input, fd_x) < 1e-5);
  }
}

TEST_CASE("chain consistency: policy-through-value gradient", "[nn]") {
  // d/dtheta_f of V(f(h), h) must equal (df/dtheta) * dV/dx.
  Rng rng(7);
  Mlp policy(1, std::vector<int>{6}, 1, Activation::kRelu,
             Activation::kIdentity);
  Mlp value(2, std::vector<int>{8}, 1, Activation::kSigmoid,
            Activation::kIdentity);
  nn::init_he_uniform(policy, rng);
  nn::init_he_uniform(value, rng);

  const std::vector<double> h{0.8};
  const auto composed = [&](const Mlp& pol) {
    const double x = pol.forward(h)[0];
    return value.forward(std::vector<double>{x, h[0]})[0];
  };

  const double x0 = policy.forward(h)[0];
  const nn::Gradients vg =
      value.backward(std::vector<double>{x0, h[0]}, std::vector<double>{1.0});
  const double dv_dx = vg.d_input[0];
  const nn::Gradients pg = policy.backward(h, std::vector<double>{dv_dx});

  auto params = policy.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + 1e-5;
    const double up = composed(policy);
    params[i] = saved - 1e-5;
    const double down = composed(policy);
    params[i] = saved;
    const double fd = (up - down) / 2e-5;
    REQUIRE(testsupport::rel_error(pg.d_params[i], fd, 1e-5) < 1e-4);
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged", "[nn]") {
  Mlp net = single_layer(1.25, -0.5, Activation::kIdentity);
  nn::AdamState st(net.param_count());
  const std::vector<double> zero(net.param_count(), 0.0);
  nn::adam_step(net.params(), st, zero, 1e-3, nn::Direction::kDescent);
  REQUIRE(net.params()[0] == 1.25);
  REQUIRE(net.params()[1] == -0.5);
  REQUIRE(st.step_count == 1);
}

TEST_CASE("adam: first descent step from a fresh state moves by ~lr", "[nn]") {
  // Scalar hand-trace: m_hat = v_hat = 1, so the step is lr/(1 + eps).
  std::vector<double> w{1.0};
  nn::AdamState st(1);
  nn::adam_step(w, st, std::vector<double>{1.0}, 1e-3,
                nn::Direction::kDescent);
  REQUIRE(w[0] == Catch::Approx(0.999).margin(1e-9));

  std::vector<double> wa{1.0};
  nn::AdamState sa(1);
  nn::adam_step(wa, sa, std::vector<double>{1.0}, 1e-3,
                nn::Direction::kAscent);
  REQUIRE(wa[0] == Catch::Approx(1.001).margin(1e-9));
}

TEST_CASE("adam: v strictly increases across identical gradients", "[nn]") {
  std::vector<double> w{0.0};
  nn::AdamState st(1);
  nn::adam_step(w, st, std::vector<double>{0.5}, 1e-3, nn::Direction::kDescent);
  const double v1 = st.v[0];
  nn::adam_step(w, st, std::vector<double>{0.5}, 1e-3, nn::Direction::kDescent);
  REQUIRE(st.v[0] > v1);
  REQUIRE(st.v[0] >= 0.0);
  REQUIRE(st.step_count == 2);
}

TEST_CASE("adam: non-finite gradients are surfaced", "[nn]") {
  std::vector<double> w{1.0};
  nn::AdamState st(1);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(nn::adam_step(w, st, std::vector<double>{nan}, 1e-3,
                                  nn::Direction::kDescent),
                    std::runtime_error);
}

TEST_CASE("adam: identical seeds give bit-identical trajectories", "[nn]") {
  const auto run = [] {
    Rng rng(31337);
    Mlp net(2, std::vector<int>{6, 5}, 1, Activation::kRelu,
            Activation::kIdentity);
    nn::init_he_uniform(net, rng);
    nn::AdamState st(net.param_count());
    for (int t = 0; t < 50; ++t) {
      const std::vector<double> x{rng.normal01(), rng.normal01()};
      const nn::Gradients g = net.backward(x, std::vector<double>{1.0});
      nn::adam_step(net.params(), st, g.d_params, 1e-3,
                    nn::Direction::kAscent);
    }
    return std::vector<double>(net.params().begin(), net.params().end());
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a == b);
}

TEST_CASE("multiplier output clamp", "[nn]") {
  std::vector<double> v{-1.0, 2.0};
  nn::clamp_nonnegative(v);
  REQUIRE(v == std::vector<double>{0.0, 2.0});

  std::vector<double> zero{0.0};
  nn::clamp_nonnegative(zero);
  REQUIRE(zero[0] == 0.0);

  std::vector<double> pos{0.3, 1.7, 42.0};
  const std::vector<double> expect = pos;
  nn::clamp_nonnegative(pos);
  REQUIRE(pos == expect);
}

TEST_CASE("clamp property: outputs nonnegative for 1e4 random inputs", "[nn]") {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> v{rng.uniform(-100.0, 100.0),
                          rng.uniform(-100.0, 100.0)};
    nn::clamp_nonnegative(v);
    REQUIRE(v[0] >= 0.0);
    REQUIRE(v[1] >= 0.0);
  }
}

TEST_CASE("final-layer constant init pins the initial output", "[nn]") {
  Rng rng(9);
  Mlp net(1, std::vector<int>{50, 40, 30}, 1, Activation::kRelu,
          Activation::kRelu);
  nn::init_he_uniform(net, rng);
  nn::init_final_layer_constant(net, 10.0);
  for (double h : {0.01, 0.5, 1.0, 4.0})
    REQUIRE(net.forward(std::vector<double>{h})[0] == 10.0);
}
