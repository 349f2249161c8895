#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "fpfgain/gain_solver.hpp"

using namespace fpfgain;

namespace {

// Direct solution of Phi = T Phi + b - c 1 with mean(Phi) = 0.
Vector direct_solve(const MarkovOperator& op, const Vector& h) {
  const auto n = static_cast<Eigen::Index>(op.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + 1, n + 1);
  A.topLeftCorner(n, n) = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd(op.matrix());
  A.topRightCorner(n, 1).setOnes();
  A.bottomLeftCorner(1, n).setOnes();
  Vector rhs = Vector::Zero(n + 1);
  rhs.head(n) = op.epsilon() * (h.array() - h.mean()).matrix();
  return A.fullPivLu().solve(rhs).head(n);
}

ParticleEnsemble bimodal(std::size_t n, std::size_t d, std::uint64_t seed) {
  return make_ensemble(DensitySpec::symmetric_bimodal(d, 1.0, 0.2), ObservationFn::coordinate(0), n, seed);
}

} // namespace

TEST_CASE("method names") {
  CHECK(parse_gain_method("g2") == GainMethod::G2);
  CHECK(parse_gain_method("Constant") == GainMethod::Constant);
  CHECK(to_string(GainMethod::G1) == "G1");
  CHECK_THROWS_AS(parse_gain_method("G3"), ConfigError);
  SolverConfig bad;
  bad.max_iterations = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.max_iterations = 5;
  bad.residual_tol = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("picard iteration matches a direct solve") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed)
    for (double eps : {0.05, 0.2, 1.0}) {
      const auto e = bimodal(seed % 2 ? 120 : 300, 1 + seed % 3, seed);
      const auto op = MarkovOperator::build(e.points, eps);
      SolverConfig cfg;
      cfg.residual_tol = 1e-13;
      cfg.max_iterations = 200000;
      const auto sol = solve_fixed_point(op, e.h_values, cfg);
      REQUIRE(sol.diagnostics.converged);
      const Vector ref = direct_solve(op, e.h_values);
      const double scale = std::max(1.0, ref.cwiseAbs().maxCoeff());
      // Picard error <= residual / (1 - contraction); contraction is far from 1 here
      CHECK((sol.phi - ref).cwiseAbs().maxCoeff() < 1e-8 * scale);
    }
}

TEST_CASE("fixed-point residual, centering and history") {
  const auto e = bimodal(200, 1, 3);
  const auto op = MarkovOperator::build(e.points, 0.1);
  const auto sol = solve_fixed_point(op, e.h_values);
  REQUIRE(sol.diagnostics.converged);
  const auto& phi = sol.phi;
  const double scale = std::max(1.0, phi.cwiseAbs().maxCoeff());
  CHECK(std::abs(phi.mean()) <= 1e-12 * scale);
  CHECK(sol.diagnostics.final_residual <= 1e-10);
  // residual modulo constants: T phi + b - phi equals c 1
  Vector r = op.apply(phi) + 0.1 * (e.h_values.array() - e.h_values.mean()).matrix() - phi;
  CHECK(std::abs(r.mean() - sol.diagnostics.constant_offset) < 1e-10 * scale);
  r.array() -= r.mean();
  CHECK(r.cwiseAbs().maxCoeff() <= 1e-10 * scale);
  const auto& hist = sol.diagnostics.residual_history;
  CHECK(hist.size() == sol.diagnostics.iterations);
  for (std::size_t t = 2; t < hist.size(); ++t) CHECK(hist[t] <= hist[t - 1] * (1 + 1e-9));
}

TEST_CASE("constant h gives zero potential at once") {
  const auto e = bimodal(50, 2, 1);
  const auto op = MarkovOperator::build(e.points, 0.3);
  const auto sol = solve_fixed_point(op, Vector::Constant(50, 4.2));
  CHECK(sol.diagnostics.converged);
  CHECK(sol.diagnostics.iterations == 1);
  CHECK(sol.phi.cwiseAbs().maxCoeff() == 0.0);
  CHECK(gain_g2(op, sol.phi, Vector::Constant(50, 4.2)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(gain_constant(e.points, Vector::Constant(50, 4.2)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("iteration cap is reported, not thrown") {
  const auto e = bimodal(100, 1, 2);
  const auto op = MarkovOperator::build(e.points, 0.01);
  SolverConfig cfg;
  cfg.max_iterations = 3;
  const auto sol = solve_fixed_point(op, e.h_values, cfg);
  CHECK(!sol.diagnostics.converged);
  CHECK(sol.diagnostics.iterations == 3);
  Vector bad = e.h_values;
  bad[7] = std::nan("");
  CHECK_THROWS_AS(solve_fixed_point(op, bad), NumericalError);
  CHECK_THROWS_AS(solve_fixed_point(op, e.h_values.head(99)), ConfigError);
}

// Second eigenvalue of T, from the symmetric conjugate diag(pi)^1/2 T diag(pi)^-1/2.
double second_eigenvalue(const MarkovOperator& op) {
  const Vector s = op.stationary().cwiseSqrt();
  const Eigen::MatrixXd S = s.asDiagonal() * Eigen::MatrixXd(op.matrix()) * s.cwiseInverse().asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues()[es.eigenvalues().size() - 2];
}

TEST_CASE("warm start converges to the same potential") {
  for (auto [eps, seed] : {std::pair{0.08, 5}, {0.3, 6}, {0.5, 7}, {1.0, 8}}) {
    CAPTURE(eps);
    const auto e = bimodal(150, 1 + seed % 2, static_cast<std::uint64_t>(seed));
    const auto op = MarkovOperator::build(e.points, eps);
    const auto cold = solve_fixed_point(op, e.h_values);
    REQUIRE(cold.diagnostics.converged);
    SolverConfig warm;
    warm.warm_start = cold.phi;
    CHECK(solve_fixed_point(op, e.h_values, warm).diagnostics.iterations <= 2);

    SolverConfig rough;
    rough.warm_start = Vector(cold.phi * 1.3 + Vector::Constant(150, 2.0));
    const auto other = solve_fixed_point(op, e.h_values, rough);
    REQUIRE(other.diagnostics.converged);
    const double diff = (other.phi - cold.phi).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, cold.phi.cwiseAbs().maxCoeff());
    // the stopping rule bounds the step; each iterate sits up to
    // step / (1 - lambda_2) from the fixed point, so two of them agree within
    // 10 tol only when 2 / (1 - lambda_2) <= 10
    const double lambda2 = second_eigenvalue(op);
    CAPTURE(lambda2);
    CHECK(diff <= 2 * 1e-10 * scale / (1 - lambda2) * std::sqrt(150.0));
    if (lambda2 <= 0.8) CHECK(diff <= 10 * 1e-10 * scale);
  }
  const auto e = bimodal(20, 1, 5);
  const auto op = MarkovOperator::build(e.points, 0.1);
  SolverConfig wrong;
  wrong.warm_start = Vector::Zero(3);
  CHECK_THROWS_AS(solve_fixed_point(op, e.h_values, wrong), ConfigError);
}

TEST_CASE("covariance and summation forms of G2 agree") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t n = 10 + 2 * seed, d = 1 + seed % 3;
    const auto e = bimodal(n, d, seed);
    const double eps = 0.02 * static_cast<double>(seed);
    const auto op = MarkovOperator::build(e.points, eps);
    const auto sol = solve_fixed_point(op, e.h_values);
    const PointMatrix a = gain_g2(op, sol.phi, e.h_values);
    const PointMatrix b = gain_g2_summation(op, sol.phi, e.h_values);
    // both forms differentiate f = phi + eps (h - hhat); rounding in either is
    // relative to |f|, which reaches the hundreds when the graph nearly splits
    const Vector f = sol.phi + eps * (e.h_values.array() - e.h_values.mean()).matrix();
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, f.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("G1 needs a gradient") {
  const auto e = bimodal(40, 1, 1);
  const auto op = MarkovOperator::build(e.points, 0.1);
  const auto sol = solve_fixed_point(op, e.h_values);
  auto nograd = ObservationFn::custom([](std::span<const double> x) { return x[0]; });
  CHECK_THROWS_AS(gain_g1(op, sol.phi, nograd), ConfigError);
  CHECK_THROWS_AS(estimate_gain(e, 0.1, GainMethod::G1, &nograd), ConfigError);
  CHECK_THROWS_AS(estimate_gain(e, 0.1, GainMethod::G1, nullptr), ConfigError);
  const auto h = ObservationFn::coordinate(0);
  const PointMatrix g1 = gain_g1(op, sol.phi, h);
  const PointMatrix expect = op.apply_gradient(sol.phi).array() + 0.1;
  CHECK((g1 - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("constant gain") {
  PointMatrix p(3, 1);
  p << -1.0, 0.0, 1.0;
  const Vector k = gain_constant(p, p.col(0));
  CHECK(k[0] == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(gain_constant(p.topRows(1), p.col(0).head(1)), ConfigError);
  const auto e = bimodal(30, 2, 4);
  const auto est = estimate_gain(e, 0.1, GainMethod::Constant);
  for (Eigen::Index i = 0; i < 30; ++i) CHECK((est.gain.row(i) - gain_constant(e).transpose()).norm() == 0.0);
  // Phi is the linear potential whose gradient is the constant gain
  const Eigen::RowVectorXd xbar = e.points.colwise().mean();
  CHECK((est.phi - (e.points.rowwise() - xbar) * gain_constant(e)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("large eps reduces G2 to the constant gain") {
  const auto e = bimodal(200, 1, 7);
  const auto est = estimate_gain(e, 1e6, GainMethod::G2);
  CHECK(est.converged);
  const Vector k = gain_constant(e);
  for (Eigen::Index i = 0; i < 200; ++i) CHECK(std::abs(est.gain(i, 0) - k[0]) < 1e-4);
  CHECK((est.gain.rowwise() - est.gain.row(0)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("kernel_gains shares one solve between G1 and G2") {
  const auto e = bimodal(80, 2, 9);
  const auto h = ObservationFn::coordinate(0);
  const auto op = MarkovOperator::build(e.points, 0.15);
  const auto kg = kernel_gains(op, e, &h);
  const auto g1 = estimate_gain(e, 0.15, GainMethod::G1, &h);
  const auto g2 = estimate_gain(e, 0.15, GainMethod::G2);
  CHECK((kg.g1 - g1.gain).cwiseAbs().maxCoeff() < 1e-13);
  CHECK((kg.g2 - g2.gain).cwiseAbs().maxCoeff() < 1e-13);
  CHECK(kernel_gains(op, e, nullptr).g1.size() == 0);
}

TEST_CASE("gain energy stays under the Poincare bound") {
  // (1/N) sum |K|^2 <= sigma_max^2 (1/N) sum |h - hhat|^2 (1 + 0.1)
  Eigen::MatrixXd cov(2, 2);
  cov << 1.0, 0.3, 0.3, 0.5;
  const DensitySpec spec(Gaussian(Vector::Zero(2), cov));
  const double smax = spec.gaussian().max_variance();
  Vector H(2);
  H << 1.0, -0.5;
  for (const auto& h : {ObservationFn::linear(H), ObservationFn::bilinear(0, 1)}) {
    const auto e = make_ensemble(spec, h, 400, 21);
    const double var = (e.h_values.array() - e.h_mean()).square().mean();
    for (double eps : {0.05, 0.2, 1.0}) {
      const auto est = estimate_gain(e, eps, GainMethod::G2);
      CHECK(est.gain.rowwise().squaredNorm().mean() <= smax * var * 1.1);
    }
  }
}
