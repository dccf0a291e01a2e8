#include <doctest.h>

#include "ggdopt/baselines.hpp"
#include "ggdopt/datagen.hpp"
#include "ggdopt/errors.hpp"
#include "support.hpp"

using namespace ggdopt;
using ggdopt::testing::linear_instance;
using ggdopt::testing::random_spd;
using ggdopt::testing::random_vector;

namespace {

// For A = I and b = cbar = 1 the optimum lies on the ray x = s 1 with the cone
// active: s = -1 / (n + kappa sqrt(n)).
double ray_optimum(Index n, double rho) {
  const double kappa = -normal_quantile(rho);
  const double s = -1.0 / (static_cast<double>(n) + kappa * std::sqrt(static_cast<double>(n)));
  return static_cast<double>(n) * (0.5 * s * s + s);
}

}  // namespace

TEST_CASE("linear instance reference value") {
  const auto sol = socp_solve(linear_instance(8));
  CHECK(std::abs(sol.f_star - (-0.6586)) <= 5e-4);
  CHECK(sol.f_star == doctest::Approx(ray_optimum(8, 0.1)).epsilon(1e-10));
  CHECK(sol.active);
  CHECK(sol.kkt_residual <= 1e-8);
  const double kappa = -normal_quantile(0.1);
  CHECK(std::abs(kappa * sol.x_star.norm() - (sol.x_star.sum() + 1.0)) <= 1e-8);
}

TEST_CASE("risk sweep reproduces the reference row") {
  const double rhos[] = {0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
  const double expected[] = {-0.6073, -0.6585, -0.6983, -0.7335, -0.7667, -0.7991};
  double prev = 1e300;
  for (int k = 0; k < 6; ++k) {
    const auto sol = socp_solve(linear_instance(8, rhos[k]));
    CHECK(std::abs(sol.f_star - expected[k]) <= 1e-3);
    CHECK(sol.f_star <= prev);
    prev = sol.f_star;
  }
}

TEST_CASE("zero kappa reduces to the linear constraint") {
  const auto s = solve_cone_qp(Matrix::Identity(8, 8), Vector::Ones(8), Vector::Ones(8), 1.0, 0.0);
  CHECK((s.x - Vector::Constant(8, -1.0 / 8)).cwiseAbs().maxCoeff() < 1e-12);
  const double f = 0.5 * s.x.squaredNorm() + s.x.sum();
  CHECK(f == doctest::Approx(-0.9375));
}

TEST_CASE("empty cone is reported as infeasible") {
  // kappa ||x|| <= x_1 + x_2 - 1 has no solution when kappa >= ||(1,1)||.
  const CCPInstance inst(QuadraticObjective::isotropic(Vector::Ones(2)),
                         LinearChanceConstraint(Vector::Ones(2), -1.0, 0.05),
                         UncertaintySource::analytic(Vector::Ones(2), Matrix::Identity(2, 2), 1));
  CHECK_THROWS_AS(socp_solve(inst), InfeasibleError);
}

TEST_CASE("kkt residual on random feasible instances") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> rho(0.02, 0.45);
  const Index dims[] = {2, 4, 8, 16};
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = dims[trial % 4];
    const Matrix cov = trial % 2 ? Matrix(random_spd(n, rng, 0.2, 2.0)) : Matrix::Identity(n, n);
    const Vector cbar = random_vector(n, rng);
    const CCPInstance inst(QuadraticObjective(random_spd(n, rng), random_vector(n, rng, 2.0)),
                           LinearChanceConstraint(cbar, 0.1 + std::abs(random_vector(1, rng)[0]),
                                                  rho(rng), cov),
                           UncertaintySource::analytic(cbar, cov, 1));
    const auto sol = socp_solve(inst);
    CHECK(sol.kkt_residual <= 1e-8);
    CHECK(inst.constraint().feasibility_probability(sol.x_star) >=
          1.0 - inst.constraint().rho() - 1e-9);
    if (sol.active) {
      CHECK(std::abs(inst.constraint().cone_violation(sol.x_star)) <= 1e-8);
    }
  }
}

TEST_CASE("optimum is no worse than projected random points") {
  std::mt19937_64 rng(9);
  for (int inst_k = 0; inst_k < 4; ++inst_k) {
    const Index n = 2 << inst_k;
    const Vector cbar = random_vector(n, rng);
    const CCPInstance inst(QuadraticObjective(random_spd(n, rng), random_vector(n, rng)),
                           LinearChanceConstraint(cbar, 1.0, 0.1),
                           UncertaintySource::analytic(cbar, Matrix::Identity(n, n), 1));
    const auto sol = socp_solve(inst);
    for (int k = 0; k < 1000; ++k) {
      const Vector p = project_onto_cone(inst.constraint(), random_vector(n, rng, 2.0));
      CHECK(inst.constraint().cone_violation(p) <= 1e-9);
      CHECK(sol.f_star <= inst.objective().value(p) + 1e-10);
    }
  }
}

TEST_CASE("optimum agrees with projected gradient descent") {
  // First-order reference: x <- P(x - step * grad f(x)) converges to the
  // constrained minimiser for step < 2 / lambda_max(A).
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 3 + trial % 4;
    const Matrix A = random_spd(n, rng, 0.5, 2.0);
    const Vector cbar = random_vector(n, rng);
    const CCPInstance inst(QuadraticObjective(A, random_vector(n, rng, 2.0)),
                           LinearChanceConstraint(cbar, 0.5, 0.15),
                           UncertaintySource::analytic(cbar, Matrix::Identity(n, n), 1));
    Vector x = Vector::Zero(n);
    for (int it = 0; it < 5000; ++it) {
      x = project_onto_cone(inst.constraint(), x - 0.5 * inst.objective().gradient(x));
    }
    const auto sol = socp_solve(inst);
    CHECK((sol.x_star - x).norm() < 1e-6);
  }
}

TEST_CASE("projection properties") {
  const auto con = linear_instance(8).constraint();
  const Vector inside = Vector::Constant(8, 0.01);
  CHECK(project_onto_cone(con, inside) == inside);
  std::mt19937_64 rng(2);
  for (int k = 0; k < 200; ++k) {
    const Vector y = random_vector(8, rng, 3.0);
    const Vector p = project_onto_cone(con, y);
    CHECK(con.cone_violation(p) <= 1e-9);
    CHECK((project_onto_cone(con, p) - p).norm() <= 1e-9);
    // No feasible point is closer than the projection.
    for (int j = 0; j < 20; ++j) {
      const Vector q = project_onto_cone(con, random_vector(8, rng, 3.0));
      CHECK((y - p).norm() <= (y - q).norm() + 1e-9);
    }
  }
  // Points on the ray through the optimum project onto it.
  const auto sol = socp_solve(linear_instance(8));
  const Vector far = Vector::Constant(8, -0.5);
  CHECK((project_onto_cone(con, far) - sol.x_star).norm() < 1e-9);
}

TEST_CASE("empirical mean baseline") {
  const CCPInstance feasible_min(QuadraticObjective::isotropic(-Vector::Ones(3)),
                                 LinearChanceConstraint(Vector::Ones(3), 1.0, 0.1),
                                 UncertaintySource::analytic(Vector::Ones(3),
                                                             Matrix::Identity(3, 3), 1));
  const auto p = empirical_mean_baseline(feasible_min, feasible_min.uncertainty().draw(100, 1));
  CHECK((p.x - Vector::Ones(3)).norm() < 1e-14);

  // 1D: b = cbar = d = 1 with hbar = 1 exactly.
  const auto one = linear_instance(1);
  const auto q = empirical_mean_baseline(one, Matrix::Ones(5, 1));
  CHECK(q.x[0] == doctest::Approx(-1.0));
  CHECK(q.f == doctest::Approx(-0.5));

  const auto inst = linear_instance(8);
  const auto em = empirical_mean_baseline(inst, inst.uncertainty().draw(100, 4));
  const auto socp = socp_solve(inst);
  const Matrix fresh = inst.uncertainty().draw(1000000, 5);
  CHECK(1.0 - empirical_rho(inst, em.x, fresh) <= 1.0 - empirical_rho(inst, socp.x_star, fresh));
}

TEST_CASE("quantile delegate") {
  CHECK(std::abs(quantile_gaussian(0.975) - 1.959964) <= 1e-6);
  CHECK_THROWS_AS(quantile_gaussian(1.5), InvalidArgument);
}
