#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "fpfgain/density.hpp"
#include "fpfgain/kernel_operator.hpp"

using namespace fpfgain;

namespace {

PointMatrix small_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  return DensitySpec::symmetric_bimodal(d, 1.0, 0.2).sample(n, seed);
}

} // namespace

TEST_CASE("assembly stages") {
  const auto pts = small_points(30, 2, 1);
  const double eps = 0.1;
  auto g = kernel::gaussian_affinity(pts, eps);
  for (Eigen::Index i = 0; i < 30; ++i) {
    CHECK(g(i, i) == 1.0);
    for (Eigen::Index j = 0; j < 30; ++j) {
      const double r2 = (pts.row(i) - pts.row(j)).squaredNorm();
      CHECK(g(i, j) == doctest::Approx(std::exp(-r2 / (4 * eps))).epsilon(1e-14));
      CHECK(g(i, j) == g(j, i));
    }
  }
  const Vector deg = kernel::affinity_degree(g);
  CHECK(deg[3] == doctest::Approx(std::sqrt(g.row(3).sum())));
  kernel::symmetric_normalize(g, deg);
  CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
  const Vector sums = kernel::row_normalize(g);
  CHECK((g.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-14);
  CHECK(sums.minCoeff() > 0.0);
  CHECK_THROWS_AS(kernel::gaussian_affinity(pts, 0.0), ConfigError);
  CHECK_THROWS_AS(kernel::gaussian_affinity(pts, -1.0), ConfigError);
  DenseMatrix zero = DenseMatrix::Zero(3, 3);
  CHECK_THROWS_AS(kernel::row_normalize(zero), NumericalError);
}

TEST_CASE("operator invariants") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed)
    for (std::size_t d : {1u, 3u}) {
      const auto pts = small_points(40, d, seed);
      const auto op = MarkovOperator::build(pts, 0.2);
      const auto& T = op.matrix();
      CHECK(T.minCoeff() > 0.0);
      CHECK((T.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-14);
      const Vector one = Vector::Ones(40);
      CHECK((op.apply(one) - one).cwiseAbs().maxCoeff() < 1e-14);
      const Vector pi = op.stationary();
      CHECK(pi.sum() == doctest::Approx(1.0));
      CHECK((T.transpose() * pi - pi).cwiseAbs().maxCoeff() < 1e-15);
      // contraction on the pi-orthogonal complement: second eigenvalue of the
      // symmetrized matrix is below one
      const Vector s = pi.cwiseSqrt();
      const Eigen::MatrixXd S = s.asDiagonal() * T * s.cwiseInverse().asDiagonal();
      CHECK((S - S.transpose()).cwiseAbs().maxCoeff() < 1e-14);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
      const auto& ev = es.eigenvalues();
      CHECK(ev[39] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(ev[38] < 1.0 - 1e-6);
      CHECK(ev[0] > -1.0);
    }
}

TEST_CASE("apply and apply_gradient follow their definitions") {
  const auto pts = small_points(25, 2, 4);
  const auto op = MarkovOperator::build(pts, 0.3);
  const auto& T = op.matrix();
  Vector f(25);
  for (Eigen::Index i = 0; i < 25; ++i) f[i] = std::sin(pts(i, 0)) + pts(i, 1) * pts(i, 1);
  CHECK((op.apply(f) - T * f).cwiseAbs().maxCoeff() < 1e-14);
  const PointMatrix G = op.apply_gradient(f);
  for (Eigen::Index i = 0; i < 25; ++i) {
    Eigen::RowVectorXd xf = Eigen::RowVectorXd::Zero(2), xm = Eigen::RowVectorXd::Zero(2);
    double fm = 0;
    for (Eigen::Index j = 0; j < 25; ++j) {
      xf += T(i, j) * pts.row(j) * f[j];
      xm += T(i, j) * pts.row(j);
      fm += T(i, j) * f[j];
    }
    const Eigen::RowVectorXd expect = (xf - xm * fm) / (2 * 0.3);
    CHECK((G.row(i) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  // constants have zero gradient
  CHECK(op.apply_gradient(Vector::Constant(25, 3.0)).cwiseAbs().maxCoeff() < 1e-13);
  CHECK_THROWS_AS(op.apply(Vector::Zero(24)), ConfigError);
  CHECK_THROWS_AS(op.apply_gradient(Vector::Zero(26)), ConfigError);
  CHECK_THROWS_AS(MarkovOperator::build(pts.topRows(1), 0.1), ConfigError);
}

TEST_CASE("half-storage apply for large operators") {
  const auto pts = small_points(1500, 1, 8);
  const auto op = MarkovOperator::build(pts, 0.05);
  Vector f = pts.col(0).array().cube();
  const Vector full = op.matrix() * f;
  CHECK((op.apply(f) - full).cwiseAbs().maxCoeff() < 1e-12 * f.cwiseAbs().maxCoeff());
  CHECK((op.apply(Vector::Ones(1500)).array() - 1.0).abs().maxCoeff() < 1e-13);
}

TEST_CASE("large eps approaches the uniform average") {
  const auto pts = small_points(20, 2, 5);
  const auto op = MarkovOperator::build(pts, 1e8);
  CHECK((op.matrix().array() - 1.0 / 20).abs().maxCoeff() < 1e-8);
}

TEST_CASE("tiny eps approaches the identity") {
  const auto pts = small_points(20, 2, 5);
  const auto op = MarkovOperator::build(pts, 1e-8);
  CHECK((op.matrix() - DenseMatrix::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-12);
}
