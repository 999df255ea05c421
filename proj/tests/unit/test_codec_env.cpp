#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "nfwpo/codec_env.hpp"
#include "nfwpo/errors.hpp"

using namespace nfwpo;
using namespace nfwpo::env;

namespace {

CtuModel unit(double a = 1000.0, double b = 1.0, double kappa = 1.0, double variance = 1e6, bool roi = false) {
  CtuModel c;
  c.rate_scale = a;
  c.rate_exponent = b;
  c.distortion_scale = kappa;
  c.variance = variance;
  c.roi = roi;
  return c;
}

std::vector<CtuModel> random_units(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  return sample_content(rng, n);
}

// Recursive enumeration, written separately from the library's odometer.
void enumerate(const Frame& f, const std::vector<double>& grid, double eps, std::size_t i, std::vector<double>& qps,
               double bits, double dist, OracleResult& best) {
  if (i == f.size()) {
    if (std::abs(bits - f.budget) / f.budget > std::abs(eps)) return;
    const bool better = !best.feasible || dist < best.weighted_distortion ||
                        (dist == best.weighted_distortion &&
                         (bits < best.total_bits || (bits == best.total_bits && qps < best.qps)));
    if (better) best = {true, qps, bits, dist};
    return;
  }
  for (double q : grid) {
    const auto r = encode_ctu(f.ctus[i], q);
    qps.push_back(q);
    enumerate(f, grid, eps, i + 1, qps, bits + r.bits, dist + r.mse * (f.ctus[i].roi ? 10.0 : 1.0), best);
    qps.pop_back();
  }
}

}  // namespace

TEST_CASE("qstep doubles every six QP") {
  CHECK(qstep(4) == 1.0);
  CHECK(qstep(10) == 2.0);
  CHECK(qstep(22) == 8.0);
}

TEST_CASE("encode_ctu follows the parametric models") {
  CHECK(encode_ctu(unit(1000.0, 1.0), 4).bits == 1000.0);
  CHECK(encode_ctu(unit(10.0, 1.0), 4).bits == kRateFloorBits);
  CHECK(encode_ctu(unit(1000.0, 1.0, 1.2), 10).mse == doctest::Approx(0.4));
  CHECK(encode_ctu(unit(1000.0, 1.0, 1.0, 37.0), 80).mse == 37.0);
  CHECK_THROWS_AS(encode_ctu(unit(), std::nan("")), NumericError);
}

TEST_CASE("frame budget is the fixed-QP bit total") {
  const auto one = std::vector<CtuModel>{unit(3000.0, 1.2)};
  CHECK(frame_budget(one, 27) == encode_ctu(one[0], 27).bits);
  const auto two = std::vector<CtuModel>{unit(3000.0, 1.2), unit(3000.0, 1.2)};
  CHECK(frame_budget(two, 27) == 2.0 * frame_budget(one, 27));
  const auto many = random_units(4, 40);
  double sum = 0.0;
  for (const auto& c : many) sum += std::max(kRateFloorBits, c.rate_scale * std::pow(qstep(27), -c.rate_exponent));
  CHECK(frame_budget(many, 27) == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("make_frame sets base QP three below the rate point") {
  const auto f = make_frame(random_units(1, 5), 32.0);
  CHECK(f.base_qp == 29.0);
  CHECK(f.qp_l == 32.0);
}

TEST_CASE("content is drawn from the declared ranges") {
  for (const auto& c : random_units(12, 2000)) {
    CHECK(c.variance >= 50.0);
    CHECK(c.variance <= 5000.0);
    CHECK(c.rate_exponent >= 0.8);
    CHECK(c.rate_exponent <= 1.4);
    CHECK(c.distortion_scale >= 0.5);
    CHECK(c.distortion_scale <= 2.0);
  }
}

TEST_CASE("reset exposes the initial features") {
  auto units = random_units(2, 40);
  for (int i = 0; i < 10; ++i) units[i].roi = true;
  CodecEnv env(make_frame(units, 27.0));
  const auto& s = env.reset();
  CHECK(s.features[5] == 1.0);
  CHECK(s.features[9] == 0.25);
  CHECK(s.features[4] == 1.0);

  for (auto& u : units) u.roi = true;
  CodecEnv all_roi(make_frame(units, 27.0));
  CHECK(all_roi.reset().features[9] == 1.0);
}

TEST_CASE("rewards") {
  CHECK(distortion_reward(2.0, true, 10.0) == -20.0);
  CHECK(distortion_reward(2.0, false, 10.0) == -2.0);
  CHECK(rate_reward(1000.0, 1000.0) == 0.0);
  CHECK(rate_reward(1100.0, 1000.0) == doctest::Approx(-0.1));
}

TEST_CASE("rate reward arrives on the last step only") {
  CodecEnv env(make_frame(random_units(3, 6), 27.0));
  env.reset();
  double bits = 0.0;
  for (int i = 0; i < 6; ++i) {
    const auto out = env.step(30.0);
    bits += out.bits;
    if (i < 5) {
      CHECK(out.r_rate == 0.0);
      CHECK_FALSE(out.done);
      REQUIRE(out.next.has_value());
      CHECK(out.next->index == static_cast<std::size_t>(i + 1));
    } else {
      CHECK(out.done);
      CHECK_FALSE(out.next.has_value());
      CHECK(out.r_rate == doctest::Approx(-std::abs(env.frame().budget - bits) / env.frame().budget));
    }
  }
  CHECK_THROWS_AS(env.step(30.0), ProtocolError);
}

TEST_CASE("fixed QP at the rate point meets the budget exactly") {
  const auto f = make_frame(random_units(8, 40), 27.0);
  const auto out = run_episode(f, [](const EnvState&) { return 27.0; });
  CHECK(out.total_bits == doctest::Approx(f.budget).epsilon(1e-12));
}

TEST_CASE("step before reset is a protocol error") {
  CodecEnv env(make_frame(random_units(3, 2), 27.0));
  CHECK_THROWS_AS(env.step(27.0), ProtocolError);
}

TEST_CASE("generate_frames is deterministic and honours the ROI policies") {
  FrameGenOptions o;
  o.seed = 77;
  o.count = 30;
  o.n_ctus = 40;
  o.roi_policy = RoiPolicy::Small;
  const auto small = generate_frames(o);
  CHECK(small == generate_frames(o));
  o.roi_policy = RoiPolicy::Large;
  const auto large = generate_frames(o);
  REQUIRE(small.size() == 30);
  for (std::size_t k = 0; k < small.size(); ++k) {
    CHECK(small[k].roi_count() >= 1);
    CHECK(small[k].roi_count() <= 5);
    for (std::size_t i = 0; i < 40; ++i) CHECK(small[k].ctus[i].roi != large[k].ctus[i].roi);
  }
  o.roi_policy = RoiPolicy::Regular;
  CHECK(generate_frames(o).front().roi_setting == "regular");
}

TEST_CASE("frame sets round trip through JSON") {
  FrameGenOptions o;
  o.seed = 5;
  o.count = 3;
  o.n_ctus = 7;
  const auto frames = generate_frames(o);
  CHECK(frames_from_json(frames_to_json(frames)) == frames);
  CHECK(frames_from_json(frames_to_json({})).empty());
  CHECK_THROWS_AS(frames_from_json("{\"format\":\"other\"}"), FormatError);
}

TEST_CASE("oracle: single unit") {
  const auto f = make_frame({unit(2000.0, 1.1)}, 27.0);
  const std::vector<double> feasible_grid{27.0};
  const auto r = oracle_allocate(f, feasible_grid, -0.05);
  CHECK(r.feasible);
  CHECK(r.qps == std::vector<double>{27.0});
  const std::vector<double> far_grid{40.0};
  CHECK_FALSE(oracle_allocate(f, far_grid, -0.05).feasible);
}

TEST_CASE("oracle: identical units get a symmetric or lexicographic answer") {
  const auto f = make_frame({unit(5000.0, 1.0, 1.0, 500.0), unit(5000.0, 1.0, 1.0, 500.0)}, 27.0);
  const std::vector<double> grid{25, 26, 27, 28, 29};
  const auto r = oracle_allocate(f, grid, -0.05);
  REQUIRE(r.feasible);
  CHECK(r.qps[0] <= r.qps[1]);
}

TEST_CASE("oracle matches an independent recursive enumeration") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(seed);
    auto f = sample_training_frame(rng, 4, 27.0);
    const std::vector<double> grid{25, 26, 27, 28, 29};
    const auto r = oracle_allocate(f, grid, -0.05);
    OracleResult expected;
    std::vector<double> qps;
    enumerate(f, grid, -0.05, 0, qps, 0.0, 0.0, expected);
    CHECK(r.feasible == expected.feasible);
    CHECK(r.qps == expected.qps);
    CHECK(r.total_bits == doctest::Approx(expected.total_bits));
    CHECK(r.weighted_distortion == doctest::Approx(expected.weighted_distortion));
  }
}

TEST_CASE("oracle refuses frames too large to enumerate") {
  const auto f = make_frame(random_units(1, 7), 27.0);
  const std::vector<double> grid{27.0};
  CHECK_THROWS_AS(oracle_allocate(f, grid, -0.05), ConfigError);
}
