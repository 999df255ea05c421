#include <doctest.h>

#include <random>
#include <sstream>

#include "../support/oracles.hpp"
#include "nfwpo/binary_io.hpp"
#include "nfwpo/errors.hpp"
#include "nfwpo/nn.hpp"

using namespace nfwpo;
using nn::Activation;
using nn::MlpNet;

TEST_CASE("forward: zero weights give activation of the bias") {
  MlpNet net({3, 2}, Activation::Relu);
  net.layers()[0].bias << 0.7, -0.4;
  const auto y = nn::forward(net, Eigen::Vector3d(1.0, -2.0, 3.0));
  CHECK(y[0] == 0.7);
  CHECK(y[1] == 0.0);
}

TEST_CASE("forward: identity layer passes the input through") {
  MlpNet net({3, 3}, Activation::Identity);
  net.layers()[0].weight = Eigen::Matrix3d::Identity();
  const Eigen::Vector3d x(1.5, -2.0, 0.25);
  CHECK(nn::forward(net, x) == x);
}

TEST_CASE("forward: 2-1 rectifier net evaluated by hand") {
  MlpNet net({2, 1}, Activation::Relu);
  net.layers()[0].weight << 1.0, -1.0;
  net.layers()[0].bias << 0.5;
  CHECK(nn::forward(net, Eigen::Vector2d(2.0, 1.0))[0] == doctest::Approx(1.5));
}

TEST_CASE("forward: shape mismatch and non-finite output are rejected") {
  MlpNet net({2, 1}, Activation::Identity);
  CHECK_THROWS_AS(nn::forward(net, Eigen::Vector3d::Zero()), ShapeError);
  net.layers()[0].bias << std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(nn::forward(net, Eigen::Vector2d::Zero()), NumericError);
}

TEST_CASE("forward_batch matches per-sample forward") {
  std::mt19937_64 rng(3);
  const auto net = MlpNet::random({4, 6, 2}, Activation::BoundedTanh, 10.0, rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 7);
  const auto y = nn::forward_batch(net, x);
  for (int c = 0; c < 7; ++c) CHECK((y.col(c) - nn::forward(net, x.col(c))).norm() < 1e-12);
}

TEST_CASE("input gradient of a linear net is its weight vector") {
  MlpNet net({3, 1}, Activation::Identity);
  net.layers()[0].weight << 0.5, -2.0, 3.0;
  for (const Eigen::Vector3d x : {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(4, -1, 9)}) {
    const auto g = nn::backprop_input_grad(net, x);
    CHECK(g[0] == 0.5);
    CHECK(g[1] == -2.0);
    CHECK(g[2] == 3.0);
  }
}

TEST_CASE("input gradient is zero in the rectifier's flat region") {
  MlpNet net({1, 1, 1}, Activation::Identity);
  net.layers()[0].weight << 1.0;
  net.layers()[0].bias << -5.0;
  net.layers()[1].weight << 2.0;
  CHECK(nn::backprop_input_grad(net, Eigen::VectorXd::Constant(1, 1.0))[0] == 0.0);
}

TEST_CASE("random 10-8-1 net: input gradient matches central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = MlpNet::random({10, 8, 1}, Activation::Identity, 1.0, rng);
    std::vector<double> x(10);
    for (auto& v : x) v = u(rng);
    const auto r = oracle::check_input_grad(net, x);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("parameter gradient: zero loss gradient gives zero gradients") {
  std::mt19937_64 rng(5);
  const auto net = MlpNet::random({3, 4, 2}, Activation::Identity, 1.0, rng);
  const auto g = nn::backprop_param_grad(net, Eigen::Vector3d(1, 2, 3), Eigen::Vector2d::Zero());
  CHECK(g.max_abs() == 0.0);
}

TEST_CASE("parameter gradient: single linear neuron under squared error") {
  MlpNet net({1, 1}, Activation::Identity);
  const double w = 0.7, b = -0.2, x = 1.3, t = 2.0;
  net.layers()[0].weight << w;
  net.layers()[0].bias << b;
  const double dl_dy = 2.0 * (w * x + b - t);
  const auto g = nn::backprop_param_grad(net, Eigen::VectorXd::Constant(1, x), Eigen::VectorXd::Constant(1, dl_dy));
  CHECK(g.weight[0](0, 0) == doctest::Approx(2.0 * (w * x + b - t) * x).epsilon(1e-14));
  CHECK(g.bias[0][0] == doctest::Approx(dl_dy).epsilon(1e-14));
}

TEST_CASE("random nets: parameter gradients match central differences") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto act : {Activation::Identity, Activation::BoundedTanh}) {
    const auto net = MlpNet::random({5, 7, 6, 2}, act, 3.0, rng);
    std::vector<double> x(5);
    for (auto& v : x) v = u(rng);
    const auto r = oracle::check_param_grad(net, x, {0.8, -1.7});
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("optimizer: zero gradient leaves parameters and advances the step") {
  std::mt19937_64 rng(2);
  auto net = MlpNet::random({2, 3, 1}, Activation::Identity, 1.0, rng);
  const auto before = net;
  auto state = nn::AdamState::for_net(net);
  nn::optimizer_step(net, nn::GradRecord::zeros_like(net), state, 1e-3);
  CHECK(net == before);
  CHECK(state.step == 1);
}

TEST_CASE("optimizer: first bias-corrected step moves by the learning rate") {
  MlpNet net({1, 1}, Activation::Identity);
  net.layers()[0].weight << 1.0;
  auto state = nn::AdamState::for_net(net);
  auto g = nn::GradRecord::zeros_like(net);
  g.weight[0](0, 0) = 1.0;
  nn::optimizer_step(net, g, state, 1e-3);
  CHECK(net.layers()[0].weight(0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
}

TEST_CASE("optimizer: constant gradient decreases the parameter monotonically") {
  MlpNet net({1, 1}, Activation::Identity);
  auto state = nn::AdamState::for_net(net);
  auto g = nn::GradRecord::zeros_like(net);
  g.weight[0](0, 0) = 0.3;
  double prev = 0.0;
  for (int i = 0; i < 200; ++i) {
    nn::optimizer_step(net, g, state, 1e-2);
    CHECK(net.layers()[0].weight(0, 0) < prev);
    prev = net.layers()[0].weight(0, 0);
  }
}

TEST_CASE("optimizer rejects non-finite gradients") {
  MlpNet net({1, 1}, Activation::Identity);
  auto state = nn::AdamState::for_net(net);
  auto g = nn::GradRecord::zeros_like(net);
  g.bias[0][0] = std::nan("");
  CHECK_THROWS_AS(nn::optimizer_step(net, g, state, 1e-3), NumericError);
}

TEST_CASE("soft update") {
  MlpNet target({1, 1}, Activation::Identity), online({1, 1}, Activation::Identity);
  online.layers()[0].weight << 1.0;
  auto t = target;
  nn::soft_update(t, online, 0.001);
  CHECK(t.layers()[0].weight(0, 0) == doctest::Approx(0.001));
  t = target;
  nn::soft_update(t, online, 0.0);
  CHECK(t == target);
  nn::soft_update(t, online, 1.0);
  CHECK(t == online);
  MlpNet other({2, 1}, Activation::Identity);
  CHECK_THROWS_AS(nn::soft_update(t, other, 0.5), ShapeError);
}

TEST_CASE("network and optimizer state survive a binary round trip") {
  std::mt19937_64 rng(9);
  auto net = MlpNet::random({4, 5, 1}, Activation::BoundedTanh, 10.0, rng, 3e-3);
  auto state = nn::AdamState::for_net(net);
  auto g = nn::GradRecord::zeros_like(net);
  g.weight[1].setConstant(0.25);
  nn::optimizer_step(net, g, state, 1e-3);

  std::stringstream buf;
  io::BinaryWriter w(buf);
  nn::write(w, net);
  nn::write(w, state);
  io::BinaryReader r(buf);
  CHECK(nn::read_net(r) == net);
  CHECK(nn::read_adam(r) == state);
}

TEST_CASE("truncated network data is a format error") {
  std::mt19937_64 rng(9);
  const auto net = MlpNet::random({4, 5, 1}, Activation::Identity, 1.0, rng);
  std::stringstream buf;
  io::BinaryWriter w(buf);
  nn::write(w, net);
  auto bytes = buf.str();
  bytes.resize(bytes.size() / 2);
  std::stringstream cut(bytes);
  io::BinaryReader r(cut);
  CHECK_THROWS_AS(nn::read_net(r), FormatError);
}
