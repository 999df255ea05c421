#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "nfwpo/errors.hpp"
#include "nfwpo/metrics.hpp"

using namespace nfwpo;
using namespace nfwpo::metrics;

namespace {

std::vector<RdPoint> curve(double scale = 1.0) {
  return {{1000.0 * scale, 30.0}, {1800.0 * scale, 33.0}, {3100.0 * scale, 36.5}, {5600.0 * scale, 39.0}};
}

}  // namespace

TEST_CASE("rate deviation with deadband") {
  CHECK(rate_deviation(1000.0, 1000.0) == 0.0);
  CHECK(rate_deviation(1050.0, 1000.0, 0.05) == 0.0);
  CHECK(rate_deviation(1100.0, 1000.0) == doctest::Approx(10.0));
  CHECK(rate_deviation(900.0, 1000.0, 0.0) == doctest::Approx(10.0));
  CHECK(rate_deviation(3.0 * 1100.0, 3.0 * 1000.0) == doctest::Approx(rate_deviation(1100.0, 1000.0)));
  CHECK_THROWS_AS(rate_deviation(1.0, 0.0), ConfigError);
}

TEST_CASE("ROI-weighted MSE") {
  CHECK(roi_weighted_mse(4.0, 2, 6.0, 2, 10.0) == doctest::Approx(46.0 / 22.0));
  CHECK(roi_weighted_mse(0.0, 0, 6.0, 3, 10.0) == doctest::Approx(2.0));
  CHECK(roi_weighted_mse(9.0, 3, 0.0, 0, 10.0) == doctest::Approx(3.0));
  CHECK(roi_weighted_mse(5.0, 2, 6.0, 2) > roi_weighted_mse(4.0, 2, 6.0, 2));
  CHECK_THROWS_AS(roi_weighted_mse(0.0, 0, 0.0, 0), ConfigError);
}

TEST_CASE("PSNR") {
  CHECK(psnr_from_mse(255.0 * 255.0) == doctest::Approx(0.0));
  CHECK(psnr_from_mse(255.0 * 255.0 / 10.0) == doctest::Approx(10.0));
  CHECK(psnr_from_mse(1.0) == doctest::Approx(48.1308).epsilon(1e-6));
  CHECK(std::isinf(psnr_from_mse(0.0)));
}

TEST_CASE("BD-rate identity and constant offset") {
  for (auto v : {BdVariant::CubicFit, BdVariant::PiecewiseCubic}) {
    CHECK(bd_rate(curve(), curve(), v) == 0.0);
    CHECK(bd_rate(curve(), curve(0.9), v) == doctest::Approx(-10.0).epsilon(1e-10));
    const double fwd = bd_rate(curve(), curve(1.25), v);
    const double back = bd_rate(curve(1.25), curve(), v);
    CHECK(fwd == doctest::Approx(25.0).epsilon(1e-10));
    CHECK(back == doctest::Approx((1.0 / (1.0 + fwd / 100.0) - 1.0) * 100.0).epsilon(1e-10));
  }
}

TEST_CASE("BD-rate agrees with interpolation plus trapezoid integration") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RdPoint> a, t;
    double qa = 30.0 + u(rng), qt = 30.5 + u(rng), ba = 800.0, bt = 700.0 + 300.0 * u(rng);
    for (int k = 0; k < 4; ++k) {
      a.push_back({ba, qa});
      t.push_back({bt, qt});
      ba *= 1.6 + 0.3 * u(rng);
      bt *= 1.6 + 0.3 * u(rng);
      qa += 2.5 + u(rng);
      qt += 2.5 + u(rng);
    }
    const double got = bd_rate(a, t);
    const double expected = oracle::bd_rate_trapezoid(a, t);
    CHECK(std::abs(got - expected) <= 1e-4 * std::max(1.0, std::abs(expected)));
  }
}

TEST_CASE("BD-rate errors") {
  auto low = curve();
  auto high = curve();
  for (auto& p : high) p.quality += 20.0;
  CHECK_THROWS_AS(bd_rate(low, high), NoOverlapError);
  auto three = curve();
  three.pop_back();
  CHECK_THROWS_AS(bd_rate(three, curve()), ConfigError);
}

TEST_CASE("aggregate groups, averages and computes per-frame BD-rates") {
  std::vector<EpisodeRecord> recs;
  const double qps[] = {22, 27, 32, 37};
  for (int k = 0; k < 4; ++k) {
    const double budget = 1000.0 * std::pow(2.0, 3 - k);
    const double mse = 2.0 * std::pow(1.8, k);
    recs.push_back({"fixed-qp", "regular", qps[k], 0, budget, budget, mse});
    recs.push_back({"nfwpo", "regular", qps[k], 0, 0.9 * budget, budget, mse});
  }
  // second frame for the test agent only: skipped in BD-rate (no anchor)
  recs.push_back({"nfwpo", "regular", 22, 1, 1200.0, 1000.0, 1.0});

  const auto rep = aggregate(recs);
  CHECK(rep.groups.size() == 8);
  const auto* bd = rep.find_bd("nfwpo", "regular");
  REQUIRE(bd != nullptr);
  CHECK(bd->bd_rate == doctest::Approx(-10.0).epsilon(1e-9));
  CHECK(bd->frames_used == 1);
  CHECK(bd->frames_skipped == 1);
  CHECK(rep.find_bd("fixed-qp", "regular")->bd_rate == 0.0);

  // nfwpo at QP 22: frames 0 (10% under) and 1 (20% over) -> mean 15%
  const auto it = std::find_if(rep.groups.begin(), rep.groups.end(),
                               [](const GroupStat& g) { return g.agent == "nfwpo" && g.qp_l == 22.0; });
  REQUIRE(it != rep.groups.end());
  CHECK(it->frames == 2);
  CHECK(it->mean_deviation == doctest::Approx(15.0));
  CHECK(aggregate(recs) .groups.size() == rep.groups.size());
  CHECK(report_to_json(aggregate(recs)) == report_to_json(rep));
  CHECK(report_to_table(rep).find("nfwpo") != std::string::npos);
}

TEST_CASE("aggregate of one episode reports that episode") {
  const std::vector<EpisodeRecord> recs{{"dual", "small", 27, 0, 1100.0, 1000.0, 4.0}};
  const auto rep = aggregate(recs, "fixed-qp");
  REQUIRE(rep.groups.size() == 1);
  CHECK(rep.groups[0].mean_deviation == doctest::Approx(10.0));
  CHECK(rep.groups[0].mean_roi_mse == 4.0);
  CHECK(rep.bd.empty());
  CHECK_FALSE(rep.notes.empty());
}
