#include <doctest.h>

#include <sstream>

#include "ggdopt/ccp.hpp"
#include "ggdopt/errors.hpp"
#include "ggdopt/normal.hpp"
#include "support.hpp"

using namespace ggdopt;
using ggdopt::testing::random_vector;

TEST_CASE("objective value examples") {
  CHECK(QuadraticObjective::isotropic(Vector::Ones(8)).value(Vector::Zero(8)) == 0.0);
  CHECK(QuadraticObjective::isotropic(Vector::Ones(1)).value(Vector::Constant(1, -1.0)) == -0.5);
  Vector b(2);
  b << 1, 2;
  // 1/2 (1 + 1) + 1 + 2
  CHECK(QuadraticObjective::isotropic(b).value(Vector::Ones(2)) == doctest::Approx(4.0));
  CHECK(QuadraticObjective(Matrix::Identity(2, 2), b, 0.5).value(Vector::Ones(2)) ==
        doctest::Approx(4.5));
}

TEST_CASE("gradient and hessian examples") {
  QuadraticObjective lin(Matrix::Zero(1, 1), Vector::Constant(1, 3.0));
  CHECK(lin.gradient(Vector::Constant(1, 5.0))[0] == 3.0);
  CHECK(lin.hessian(Vector::Constant(1, 5.0))(0, 0) == 0.0);
  CHECK(QuadraticObjective::isotropic(Vector::Ones(1)).gradient(Vector::Constant(1, 2.0))[0] == 3.0);
}

TEST_CASE("objective rejects bad shapes") {
  const auto f = QuadraticObjective::isotropic(Vector::Ones(3));
  CHECK_THROWS_AS(f.value(Vector::Zero(2)), InvalidArgument);
  CHECK_THROWS_AS(f.gradient(Vector::Zero(4)), InvalidArgument);
  CHECK_THROWS_AS(f.hessian(Vector::Zero(4)), InvalidArgument);
  Matrix asym = Matrix::Identity(2, 2);
  asym(0, 1) = 1e-12;
  CHECK_THROWS_AS(QuadraticObjective(asym, Vector::Zero(2)), InvalidArgument);
  CHECK_THROWS_AS(QuadraticObjective(Matrix::Identity(2, 2), Vector::Zero(3)), InvalidArgument);
}

TEST_CASE("gradient and hessian agree with central differences") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> dim(1, 10);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = dim(rng);
    Matrix G(n, n);
    for (Index i = 0; i < n; ++i) G.col(i) = random_vector(n, rng);
    const Matrix A = 0.5 * (G + G.transpose());
    const QuadraticObjective f(A, random_vector(n, rng), random_vector(1, rng)[0]);
    const Vector x = random_vector(n, rng);
    const Vector g = f.gradient(x);
    const Matrix H = f.hessian(x);
    for (Index i = 0; i < n; ++i) {
      Vector e = Vector::Zero(n);
      e[i] = h;
      const double fd = (f.value(x + e) - f.value(x - e)) / (2 * h);
      CHECK(std::abs(fd - g[i]) <= 1e-5 * std::max(1.0, std::abs(g[i])));
      const Vector fd_col = (f.gradient(x + e) - f.gradient(x - e)) / (2 * h);
      for (Index j = 0; j < n; ++j) {
        CHECK(std::abs(fd_col[j] - H(j, i)) <= 1e-5 * std::max(1.0, std::abs(H(j, i))));
      }
    }
  }
}

TEST_CASE("constraint value examples") {
  LinearChanceConstraint con(Vector::Ones(8), 1.0, 0.1);
  CHECK(con.value(Vector::Zero(8), Vector::Constant(8, 7.0)) == 1.0);
  CHECK(con.value(Vector::Constant(8, -1.0 / 8), Vector::Ones(8)) == doctest::Approx(0.0));
  LinearChanceConstraint one(Vector::Ones(1), -1.0, 0.1);
  CHECK(one.value(Vector::Ones(1), Vector::Constant(1, 2.0)) == 1.0);
  CHECK_THROWS_AS(con.value(Vector::Zero(7), Vector::Zero(8)), InvalidArgument);
}

TEST_CASE("constraint validates rho and covariance") {
  CHECK_THROWS_AS(LinearChanceConstraint(Vector::Ones(2), 1.0, 0.5), InvalidArgument);
  CHECK_THROWS_AS(LinearChanceConstraint(Vector::Ones(2), 1.0, 0.0), InvalidArgument);
  Matrix indefinite = Matrix::Identity(2, 2);
  indefinite(1, 1) = -1.0;
  CHECK_THROWS_AS(LinearChanceConstraint(Vector::Ones(2), 1.0, 0.1, indefinite), InvalidArgument);
}

TEST_CASE("analytic draws are seeded and centred") {
  const auto src = UncertaintySource::analytic(Vector::Ones(8), Matrix::Identity(8, 8), 5);
  CHECK(src.draw(5, 9) == src.draw(5, 9));
  CHECK(src.draw(5, 9) != src.draw(5, 10));
  const Matrix big = src.draw(100000, 3);
  const Vector means = big.colwise().mean().transpose();
  CHECK((means - Vector::Ones(8)).cwiseAbs().maxCoeff() < 0.02);
  CHECK_THROWS_AS(src.draw(0), InvalidArgument);
}

TEST_CASE("empirical draws resample stored rows") {
  Matrix rows(3, 2);
  rows << 1, 2, 3, 4, 5, 6;
  const auto src = UncertaintySource::empirical(rows, 1);
  const Matrix out = src.draw(9);
  REQUIRE(out.rows() == 9);
  for (Index i = 0; i < out.rows(); ++i) {
    bool found = false;
    for (Index r = 0; r < 3; ++r) found = found || out.row(i) == rows.row(r);
    CHECK(found);
  }
  CHECK_THROWS_AS(UncertaintySource::empirical(Matrix(0, 2), 1).draw(3), StateError);
}

TEST_CASE("exact feasibility probability agrees with Monte Carlo") {
  const auto inst = ggdopt::testing::linear_instance(8);
  const Matrix draws = inst.uncertainty().draw(1000000, 77);
  std::mt19937_64 rng(8);
  for (int k = 0; k < 20; ++k) {
    const Vector x = random_vector(8, rng, 0.3);
    const double exact = normal_cdf((Vector::Ones(8).dot(x) + 1.0) / x.norm());
    CHECK(inst.constraint().feasibility_probability(x) == doctest::Approx(exact).epsilon(1e-12));
    const double mc = ((draws * x).array() + 1.0 >= 0.0).cast<double>().mean();
    CHECK(std::abs(mc - exact) < 0.005);
  }
}

TEST_CASE("normal quantile") {
  CHECK(std::abs(normal_quantile(0.5)) < 1e-15);
  CHECK(std::abs(normal_quantile(0.975) - 1.959963984540054) < 1e-9);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(1e-10, 1.0 - 1e-10);
  for (int i = 0; i < 1000; ++i) {
    const double p = uni(rng);
    CHECK(std::abs(normal_cdf(normal_quantile(p)) - p) < 1e-9);
  }
  CHECK_THROWS_AS(normal_quantile(0.0), InvalidArgument);
  CHECK_THROWS_AS(normal_quantile(1.0), InvalidArgument);
}

TEST_CASE("instance file round trip") {
  std::istringstream text(R"(# linear instance
n = 3
A = identity
b = ones
cbar = 1 2 3
d = 1     # offset
rho = 0.1
seed = 4
)");
  const CCPInstance inst = parse_instance(text);
  CHECK(inst.dim() == 3);
  CHECK(inst.constraint().cbar()[2] == 3.0);
  CHECK(inst.uncertainty().kind() == UncertaintyKind::kAnalyticGaussian);
  CHECK(inst.uncertainty().seed() == 4);
  CHECK(inst.fingerprint() != ggdopt::testing::linear_instance(3).fingerprint());
  CHECK(fingerprint_hex(inst.fingerprint()).size() == 16);

  std::istringstream unknown("n = 1\nb = 1\ncbar = 1\nd = 1\nrho = 0.1\ncolour = red\n");
  CHECK_THROWS_AS(parse_instance(unknown), ConfigError);
  std::istringstream missing("n = 1\nb = 1\nd = 1\nrho = 0.1\n");
  CHECK_THROWS_AS(parse_instance(missing), ConfigError);
  std::istringstream bad_rho("n = 1\nb = 1\ncbar = 1\nd = 1\nrho = 0.7\n");
  CHECK_THROWS_AS(parse_instance(bad_rho), ConfigError);
}

TEST_CASE("fingerprint depends on every number") {
  const auto a = ggdopt::testing::linear_instance(4, 0.1);
  const auto b = ggdopt::testing::linear_instance(4, 0.1);
  const auto c = ggdopt::testing::linear_instance(4, 0.2);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint() != c.fingerprint());
}
