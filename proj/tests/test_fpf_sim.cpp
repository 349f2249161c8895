#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fpfgain/fpf_sim.hpp"

using namespace fpfgain;

namespace {

FilterScenario scalar_scenario(double a, double h, std::size_t n, std::uint64_t seed, double horizon = 1.0) {
  Eigen::MatrixXd A(1, 1);
  A << a;
  Vector H(1);
  H << h;
  return FilterScenario::linear_gaussian(A, H, Gaussian::isotropic(Vector::Zero(1), 1.0), 0.01, horizon, n, seed);
}

} // namespace

TEST_CASE("scenario validation") {
  auto s = scalar_scenario(-0.5, 1.0, 50, 1);
  CHECK(s.steps() == 100);
  s.dt = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = scalar_scenario(-0.5, 1.0, 1, 1);
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(parse_gain_mode("oracle") == GainMode::Oracle);
  CHECK_THROWS_AS(parse_gain_mode("kalman"), ConfigError);
}

TEST_CASE("truth and filter are deterministic in the seed") {
  const auto s = scalar_scenario(-0.5, 1.0, 60, 11, 0.3);
  const auto t1 = simulate_truth(s), t2 = simulate_truth(s);
  CHECK(t1.x == t2.x);
  CHECK(t1.dz == t2.dz);
  CHECK(t1.z.size() == t1.dz.size() + 1);
  CHECK(t1.z.back() == doctest::Approx(std::accumulate(t1.dz.begin(), t1.dz.end(), 0.0)));
  StepOptions opt;
  opt.mode = GainMode::G2;
  const auto r1 = run_filter(s, t1, opt), r2 = run_filter(s, t1, opt);
  CHECK(r1.mean_square_error == r2.mean_square_error);
  CHECK(r1.particle_mean.size() == s.steps() + 1);
  const auto other = simulate_truth(scalar_scenario(-0.5, 1.0, 60, 12, 0.3));
  CHECK(other.x != t1.x);
}

TEST_CASE("without observation information every gain mode follows the same paths") {
  // h = 0 makes every gain vanish; the particles then only see drift and noise
  const auto s = scalar_scenario(0.0, 0.0, 40, 3, 0.2);
  const auto truth = simulate_truth(s);
  std::vector<FilterRun> runs;
  for (auto m : {GainMode::Constant, GainMode::G1, GainMode::G2, GainMode::Oracle}) {
    StepOptions opt;
    opt.mode = m;
    runs.push_back(run_filter(s, truth, opt));
  }
  for (const auto& r : runs)
    for (std::size_t k = 0; k < r.particle_mean.size(); ++k)
      CHECK(std::abs(r.particle_mean[k][0] - runs[0].particle_mean[k][0]) < 1e-12);
}

TEST_CASE("Kalman-Bucy covariance settles at the Riccati fixed point") {
  // dP/dt = 2aP + 1 - P^2 h^2 with a = -1/2, h = 1: P* = (sqrt(5) - 1) / 2
  const auto s = scalar_scenario(-0.5, 1.0, 10, 1, 20.0);
  const auto kb = kalman_bucy(s, simulate_truth(s));
  CHECK(kb.covariance.size() == s.steps() + 1);
  CHECK(kb.covariance.back()(0, 0) == doctest::Approx((std::sqrt(5.0) - 1) / 2).epsilon(1e-3));
  CHECK(kb.covariance.front()(0, 0) == 1.0);
}

TEST_CASE("constant-gain filter tracks the Kalman-Bucy mean in the linear Gaussian case") {
  double dev = 0.0;
  const int seeds = 6;
  for (int k = 0; k < seeds; ++k) {
    const auto s = scalar_scenario(-0.5, 1.0, 2000, 100 + k, 1.0);
    const auto truth = simulate_truth(s);
    const auto kb = kalman_bucy(s, truth);
    StepOptions opt;
    opt.mode = GainMode::Constant;
    const auto run = run_filter(s, truth, opt);
    double acc = 0.0;
    for (std::size_t t = 1; t < kb.mean.size(); ++t) acc += std::abs(run.particle_mean[t][0] - kb.mean[t][0]);
    dev += acc / static_cast<double>(kb.mean.size() - 1);
  }
  // particle mean error is O(1/sqrt(N)) ~ 0.02 per coordinate
  CHECK(dev / seeds < 0.06);
}

TEST_CASE("oracle mode needs a linear model") {
  auto s = scalar_scenario(-0.5, 1.0, 20, 1, 0.05);
  s.linear.reset();
  StepOptions opt;
  opt.mode = GainMode::Oracle;
  CHECK_THROWS_AS(run_filter(s, simulate_truth(s), opt), ConfigError);
}

TEST_CASE("mean square error helper") {
  PointMatrix truth(2, 1);
  truth << 0.0, 1.0;
  std::vector<Vector> est{Vector::Constant(1, 5.0), Vector::Constant(1, 3.0)};
  // step 0 excluded: |3 - 1|^2
  CHECK(mean_square_error(est, truth) == doctest::Approx(4.0));
}
