#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "nfwpo/acrl.hpp"
#include "nfwpo/binary_io.hpp"
#include "nfwpo/errors.hpp"

using namespace nfwpo;
using namespace nfwpo::rl;

namespace {

env::Frame test_frame(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  return env::sample_training_frame(rng, n, 27.0);
}

nn::MlpNet constant_actor(double delta) {
  nn::MlpNet a({static_cast<int>(env::kStateSize), 1}, nn::Activation::BoundedTanh, kDeltaQpMax);
  a.layers()[0].bias[0] = std::atanh(delta / kDeltaQpMax);
  return a;
}

Transition make_t(std::uint64_t episode, std::uint32_t step, double r_d, double r_r, bool done) {
  Transition t;
  t.state.fill(0.1 * step);
  t.action = 0.5;
  t.r_distortion = r_d;
  t.r_rate = r_r;
  t.done = done;
  if (!done) {
    StateVec next;
    next.fill(0.1 * (step + 1));
    t.next_state = next;
  }
  t.episode = episode;
  t.step = step;
  return t;
}

}  // namespace

TEST_CASE("rollout without noise repeats the actor's constant action") {
  env::CodecEnv e(test_frame(1, 40));
  std::mt19937_64 rng(0);
  const auto steps = rollout(e, constant_actor(2.5), NoiseProcess{0.0, 1.0}, rng, 0);
  REQUIRE(steps.size() == 40);
  for (const auto& t : steps) CHECK(t.action == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(steps.back().done);
  CHECK_FALSE(steps.back().next_state.has_value());
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) CHECK_FALSE(steps[i].done);
}

TEST_CASE("rollout is reproducible for a fixed seed") {
  auto run = [] {
    env::CodecEnv e(test_frame(2, 40));
    std::mt19937_64 rng(42);
    return rollout(e, constant_actor(0.0), NoiseProcess{}, rng, 3);
  };
  CHECK(run() == run());
}

TEST_CASE("exploration noise decays and clips") {
  NoiseProcess n{2.0, 0.995};
  CHECK(n.scale(0) == 2.0);
  CHECK(n.scale(100) == doctest::Approx(2.0 * std::pow(0.995, 100)));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = n.perturb(9.5, 0, rng);
    CHECK(a <= kDeltaQpMax);
    CHECK(a >= kDeltaQpMin);
  }
}

TEST_CASE("n-step target arithmetic") {
  const std::vector<double> r{-1.0, -2.0, -3.0};
  CHECK(n_step_target(r, 0.99, -10.0) == doctest::Approx(-15.62329).epsilon(1e-12));
  CHECK(n_step_target(r, 0.0, -10.0) == -1.0);
  const std::vector<double> last{-4.0};
  CHECK(n_step_target(last, 0.99, std::nullopt) == -4.0);
}

TEST_CASE("n-step targets stop at the end of an episode") {
  ReplayBuffer buf(100);
  buf.push(make_t(0, 0, -1.0, 0.0, false));
  buf.push(make_t(0, 1, -2.0, -0.3, true));
  buf.push(make_t(1, 0, -5.0, 0.0, false));
  const nn::MlpNet critic({kCriticInputSize, 1}, nn::Activation::Identity);
  const auto actor = constant_actor(0.0);
  const std::vector<std::size_t> idx{0, 1};
  const auto y_d = n_step_targets(buf, idx, 3, 0.9, critic, actor, {RewardChannel::Distortion, 1.0, 0.0});
  CHECK(y_d[0] == doctest::Approx(-1.0 + 0.9 * -2.0));
  CHECK(y_d[1] == -2.0);
  const auto y_r = n_step_targets(buf, idx, 3, 0.9, critic, actor, {RewardChannel::Rate, 1.0, 0.0});
  CHECK(y_r[0] == doctest::Approx(0.9 * -0.3));
  const auto y_c = n_step_targets(buf, idx, 1, 0.9, critic, actor, {RewardChannel::Combined, 0.5, 100.0});
  CHECK(y_c[1] == doctest::Approx(-2.0 * 0.5 + 100.0 * -0.3));
}

TEST_CASE("n-step targets bootstrap from the target critic at the window end") {
  ReplayBuffer buf(100);
  for (std::uint32_t s = 0; s < 5; ++s) buf.push(make_t(0, s, -1.0, 0.0, s == 4));
  nn::MlpNet critic({kCriticInputSize, 1}, nn::Activation::Identity);
  critic.layers()[0].bias[0] = -7.0;
  const std::vector<std::size_t> idx{0};
  const auto y = n_step_targets(buf, idx, 3, 0.5, critic, constant_actor(0.0), {});
  CHECK(y[0] == doctest::Approx(-1.0 - 0.5 - 0.25 + 0.125 * -7.0));
}

TEST_CASE("critic update loss") {
  std::mt19937_64 rng(4);
  auto critic = nn::MlpNet::random({kCriticInputSize, 8, 1}, nn::Activation::Identity, 1.0, rng);
  auto opt = nn::AdamState::for_net(critic);
  Eigen::MatrixXd inputs = Eigen::MatrixXd::Random(kCriticInputSize, 6);
  const auto pred = nn::forward_batch(critic, inputs);

  SUBCASE("targets equal predictions") {
    const std::vector<double> y(pred.data(), pred.data() + pred.size());
    const auto before = critic;
    CHECK(critic_update(critic, opt, 1e-3, inputs, y) == 0.0);
    CHECK(critic == before);
  }
  SUBCASE("mean squared residual") {
    std::vector<double> y(6);
    double expected = 0.0;
    for (int i = 0; i < 6; ++i) {
      y[i] = 0.3 * i - 1.0;
      expected += (y[i] - pred(0, i)) * (y[i] - pred(0, i));
    }
    CHECK(critic_update(critic, opt, 1e-3, inputs, y) == doctest::Approx(expected / 6.0).epsilon(1e-12));
  }
  SUBCASE("single sample") {
    const std::vector<double> y{2.0};
    const auto loss = critic_update(critic, opt, 1e-3, inputs.leftCols(1), y);
    CHECK(loss == doctest::Approx((2.0 - pred(0, 0)) * (2.0 - pred(0, 0))));
  }
}

TEST_CASE("replay buffer validates, evicts oldest and keeps windows inside episodes") {
  ReplayBuffer buf(3);
  auto bad = make_t(0, 0, -1.0, 0.0, false);
  bad.action = 11.0;
  CHECK_THROWS_AS(buf.push(bad), ConfigError);
  bad.action = 0.0;
  bad.r_distortion = std::nan("");
  CHECK_THROWS_AS(buf.push(bad), NumericError);

  for (std::uint32_t s = 0; s < 4; ++s) buf.push(make_t(0, s, -double(s), 0.0, s == 3));
  CHECK(buf.size() == 3);
  CHECK(buf.at(0).step == 1);
  const auto w = buf.window(1, 5);
  CHECK(w.steps.size() == 2);
  CHECK_FALSE(w.bootstrap_state.has_value());
}

TEST_CASE("sample_batch") {
  ReplayBuffer buf(200);
  for (std::uint32_t s = 0; s < 100; ++s) buf.push(make_t(s / 10, s % 10, -1.0, 0.0, s % 10 == 9));
  std::mt19937_64 rng(1);
  CHECK_FALSE(sample_batch(buf, 101, rng).has_value());

  auto all = *sample_batch(buf, 100, rng);
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(all[i] == i);

  std::mt19937_64 a(9), b(9);
  CHECK(*sample_batch(buf, 16, a) == *sample_batch(buf, 16, b));
}

TEST_CASE("sample_batch is uniform over 1e5 single draws") {
  ReplayBuffer buf(200);
  for (std::uint32_t s = 0; s < 100; ++s) buf.push(make_t(0, s, -1.0, 0.0, s == 99));
  std::mt19937_64 rng(123);
  std::vector<int> counts(100, 0);
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) ++counts[(*sample_batch(buf, 1, rng))[0]];
  const double p = 0.01, sd = std::sqrt(draws * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - draws * p) <= 3.0 * sd + 1e-9);
}

TEST_CASE("replay buffer survives a binary round trip") {
  ReplayBuffer buf(5);
  for (std::uint32_t s = 0; s < 7; ++s) buf.push(make_t(0, s, -1.5 * s, s == 6 ? -0.2 : 0.0, s == 6));
  std::stringstream ss;
  io::BinaryWriter w(ss);
  buf.write(w);
  io::BinaryReader r(ss);
  CHECK(ReplayBuffer::read(r) == buf);
}
