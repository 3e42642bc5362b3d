#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dctl/prox.hpp"
#include "instances.hpp"
#include "oracles.hpp"

using namespace fixtures;

using namespace dctl;

// ---------------------------------------------------------------------------
// One-sided soft threshold

TEST(ProxNonnegL1, Examples) {
  EXPECT_EQ(prox_nonneg_l1(0.0, 0.5, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(prox_nonneg_l1(2.0, 0.5, 1.0), 1.5);
  EXPECT_EQ(prox_nonneg_l1(-3.0, 0.1, 2.0), 0.0);
}

TEST(ProxNonnegL1, RejectsBadParameters) {
  EXPECT_THROW(prox_nonneg_l1(1.0, -0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(prox_nonneg_l1(1.0, 0.1, 0.0), std::invalid_argument);
  EXPECT_THROW(prox_nonneg_l1(1.0, 0.1, -1.0), std::invalid_argument);
}

TEST(ProxNonnegL1, MatchesGridSearch) {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> uu(-2.0, 8.0), ub(0.01, 2.0), uw(0.2, 5.0);
  for (int i = 0; i < 200; ++i) {
    const double u = uu(rng), beta = ub(rng), w = uw(rng);
    const auto f = [&](double z) { return 0.5 * w * (z - u) * (z - u) + beta * z; };
    EXPECT_NEAR(prox_nonneg_l1(u, beta, w), oracle::grid_argmin(f, 0.0, 10.0, 1e-4), 1e-4);
  }
}

TEST(ProxNonnegL1, MonotoneAndNonexpansive) {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng);
    const double pa = prox_nonneg_l1(a, 0.7, 1.3), pb = prox_nonneg_l1(b, 0.7, 1.3);
    EXPECT_LE(std::abs(pa - pb), std::abs(a - b) + 1e-15);
    if (a <= b) EXPECT_LE(pa, pb);
  }
}

// ---------------------------------------------------------------------------
// Log-det prox

TEST(ProxLogdet, ZeroInputGivesUnitSingularValues) {
  const Matrix out = prox_logdet_svd(Matrix::Zero(2, 2), 1.0);
  Eigen::JacobiSVD<Matrix> svd(out);
  EXPECT_NEAR(svd.singularValues()(0), 1.0, 1e-12);
  EXPECT_NEAR(svd.singularValues()(1), 1.0, 1e-12);
}

TEST(ProxLogdet, VanishingWeightIsIdentityMap) {
  const Matrix y = 3.0 * Matrix::Identity(3, 3);
  EXPECT_LT((prox_logdet_svd(y, 1e-14) - y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ProxLogdet, RejectsNonPositiveWeight) {
  EXPECT_THROW(prox_logdet_svd(Matrix::Identity(2, 2), 0.0), std::invalid_argument);
  EXPECT_THROW(prox_logdet_svd(Matrix::Identity(2, 2), -1.0), std::invalid_argument);
}

TEST(ProxLogdet, SingularValueStationarity) {
  std::mt19937_64 rng(103);
  for (int i = 0; i < 50; ++i) {
    const Matrix y = oracle::random_matrix(rng, 4, 4, -2.0, 2.0);
    const double lambda = 0.05 + std::abs(oracle::random_vector(rng, 1)(0));
    const Matrix x = prox_logdet_svd(y, lambda);
    // x and y share singular vectors; compare sorted singular values
    const Vector sy = Eigen::JacobiSVD<Matrix>(y).singularValues();
    const Vector sx = Eigen::JacobiSVD<Matrix>(x).singularValues();
    for (Eigen::Index k = 0; k < 4; ++k) EXPECT_NEAR(sx(k) - sy(k) - lambda / sx(k), 0.0, 1e-10);
  }
}

TEST(ProxLogdet, MatchesNumericalMinimizer) {
  std::mt19937_64 rng(104);
  const double lambda = 0.7;
  for (int inst = 0; inst < 5; ++inst) {
    const Matrix y = oracle::random_matrix(rng, 3, 3, -2.0, 2.0);
    const auto f = [&](const Matrix& x) {
      const double ld = oracle::sum_log_sv(x);
      return std::isfinite(ld) ? 0.5 * (x - y).squaredNorm() - lambda * ld : std::numeric_limits<double>::infinity();
    };
    const auto grad = [&](const Matrix& x) -> Matrix { return x - y - lambda * x.inverse().transpose(); };
    const double closed = f(prox_logdet_svd(y, lambda));
    double best = std::numeric_limits<double>::infinity();
    // log|det| splits into two components; start inside the one holding y
    for (int start = 0; start < 3; ++start) {
      const Matrix x0 = y + 0.5 * oracle::random_matrix(rng, 3, 3);
      if (x0.determinant() * y.determinant() <= 0.0) continue;
      best = std::min(best, oracle::descend(f, grad, x0, 5000));
    }
    best = std::min(best, oracle::descend(f, grad, y, 5000));
    EXPECT_LE(closed, best + 1e-6);
    EXPECT_NEAR(closed, best, 1e-6);
  }
}

// ---------------------------------------------------------------------------
// Transform update

TEST(UpdateTransform, ScalarCaseMatchesGoldenSection) {
  // 1/2 t^2 - t - 0.5 log t  ->  t^2 - t - 0.5 = 0
  TransformUpdateInputs in{Matrix::Ones(1, 1), Matrix::Ones(1, 1), Matrix::Ones(1, 1), 0.0, 0.5,
                           std::numeric_limits<double>::infinity()};
  const double t = update_transform(in)(0, 0);
  const double ref = oracle::golden_section([](double x) { return 0.5 * x * x - x - 0.5 * std::log(x); }, 1e-6, 10.0);
  EXPECT_NEAR(t, ref, 1e-6);
  EXPECT_NEAR(t, (1.0 + std::sqrt(3.0)) / 2.0, 1e-12);
}

TEST(UpdateTransform, VanishingRegularizersGiveLeastSquares) {
  std::mt19937_64 rng(105);
  const Matrix cross = oracle::random_matrix(rng, 4, 4) + 3.0 * Matrix::Identity(4, 4);
  TransformUpdateInputs in{Matrix::Identity(4, 4), cross, Matrix::Zero(4, 4), 0.0, 1e-12,
                           std::numeric_limits<double>::infinity()};
  EXPECT_LT((update_transform(in) - cross).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(UpdateTransform, RejectsInvalidInputs) {
  TransformUpdateInputs in{Matrix::Identity(3, 3), Matrix::Zero(3, 3), Matrix::Zero(3, 3), 0.0, 0.1, 1.0};
  auto bad = in;
  bad.lambda = 0.0;
  EXPECT_THROW(update_transform(bad), std::invalid_argument);
  bad = in;
  bad.cross = Matrix::Zero(2, 3);
  EXPECT_THROW(update_transform(bad), std::invalid_argument);
  bad = in;
  bad.gram(0, 1) = 1.0;
  EXPECT_THROW(update_transform(bad), std::invalid_argument);
}

TEST(UpdateTransform, NotPositiveDefiniteIsNumericalError) {
  TransformUpdateInputs in{-5.0 * Matrix::Identity(2, 2), Matrix::Zero(2, 2), Matrix::Zero(2, 2), 0.0, 0.1,
                           std::numeric_limits<double>::infinity()};
  EXPECT_THROW(update_transform(in), numerical_error);
}


TEST(UpdateTransform, BeatsGradientDescentFromRandomStarts) {
  std::mt19937_64 rng(106);
  for (int i = 0; i < 5; ++i) {
    const auto inst = random_transform_instance(rng, 4, 3, 16);
    const Matrix t = update_transform(inst.inputs());
    const double closed = inst.phi(t);
    for (int start = 0; start < 2; ++start) {
      const double gd = oracle::descend([&](const Matrix& m) { return inst.phi(m); },
                                        [&](const Matrix& m) { return inst.grad(m); },
                                        oracle::random_matrix(rng, 4, 4, -1.5, 1.5), 3000);
      EXPECT_LE(closed, gd + 1e-6);
    }
  }
}

TEST(UpdateTransform, SatisfiesStationarity) {
  std::mt19937_64 rng(107);
  for (int i = 0; i < 20; ++i) {
    const auto inst = random_transform_instance(rng, 5, 2, 12);
    const auto in = inst.inputs();
    const Matrix t = update_transform(in);
    const auto [w, g] = transform_quadratic(in);
    const Matrix residual = w * t - g - in.lambda * t.inverse().transpose();
    EXPECT_LT(residual.norm() / g.norm(), 1e-9);
    // and the independent gradient vanishes too
    EXPECT_LT(inst.grad(t).norm() / g.norm(), 1e-9);
    EXPECT_GT(Eigen::JacobiSVD<Matrix>(t).singularValues().minCoeff(), 0.0);
  }
}

TEST(UpdateTransform, HalvedLogDetConstantIsNotStationary) {
  // Replacing 4 lambda by 2 lambda under the root moves off the minimizer.
  std::mt19937_64 rng(108);
  const auto inst = random_transform_instance(rng, 4, 3, 16);
  const auto in = inst.inputs();
  const auto [w, g] = transform_quadratic(in);
  Eigen::LLT<Matrix> llt(w);
  const Matrix y = llt.matrixL().solve(g);
  Eigen::JacobiSVD<Matrix> svd(y, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector s = svd.singularValues();
  for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = 0.5 * (s(i) + std::sqrt(s(i) * s(i) + 2.0 * in.lambda));
  const Matrix alt = llt.matrixU().solve(Matrix(svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose()));
  const Matrix t = update_transform(in);
  EXPECT_LT(inst.phi(t), inst.phi(alt));
  EXPECT_GT(inst.grad(alt).norm() / g.norm(), 1e-4);
}

TEST(UpdateTransform, DescentFromAnchor) {
  std::mt19937_64 rng(109);
  for (int i = 0; i < 100; ++i) {
    const auto inst = random_transform_instance(rng, 3, 2, 8);
    EXPECT_LE(inst.phi(update_transform(inst.inputs())), inst.phi(inst.anchor) + 1e-12);
  }
}

TEST(UpdateTransformChannelwise, EqualGramsReduceToExactStep) {
  std::mt19937_64 rng(110);
  const auto inst = random_transform_instance(rng, 4, 3, 16);
  const auto in = inst.inputs();
  ChannelwiseTransformInputs cw{std::vector<Matrix>(4, in.gram), in.cross, in.anchor, in.mu, in.lambda, in.gamma1};
  EXPECT_LT((update_transform_channelwise(cw) - update_transform(in)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(UpdateTransformChannelwise, DecreasesItsObjective) {
  std::mt19937_64 rng(111);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Index k = 3;
    ChannelwiseTransformInputs in;
    in.cross = Matrix::Zero(k, k);
    for (Eigen::Index c = 0; c < k; ++c) {
      Matrix g = Matrix::Zero(k, k);
      for (int m = 0; m < 2; ++m) {
        const Matrix op = oracle::toeplitz_columns(oracle::random_vector(rng, 8, 0.0, 1.0), k);
        g += op.transpose() * op;
        in.cross.col(c) += op.transpose() * oracle::random_vector(rng, 8, 0.0, 1.0);
      }
      in.grams.push_back(g);
    }
    in.anchor = Matrix::Identity(k, k) + 0.3 * oracle::random_matrix(rng, k, k);
    in.mu = 0.01;
    in.lambda = 0.2;
    in.gamma1 = 1.0;
    const Matrix t = update_transform_channelwise(in);
    // direct evaluation of the full proximal objective
    auto full = [&](const Matrix& x) {
      double acc = -in.lambda * oracle::sum_log_sv(x) + in.mu * x.squaredNorm() + 0.5 / in.gamma1 * (x - in.anchor).squaredNorm();
      for (Eigen::Index c = 0; c < k; ++c) acc += 0.5 * x.col(c).dot(in.grams[static_cast<std::size_t>(c)] * x.col(c)) - in.cross.col(c).dot(x.col(c));
      return acc;
    };
    EXPECT_LE(full(t), full(in.anchor) + 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Coefficient step


TEST(ProjectedNewton, DecoupledClosedForm) {
  std::mt19937_64 rng(120);
  auto p = random_coefficient_problem(rng, 3, 10, 3, true, 0.0, 0.7);
  p.next_bank = KernelBank(Matrix::Zero(3, 3));
  const auto res = projected_newton_coeffs(p);
  EXPECT_TRUE(res.converged);
  for (std::size_t m = 0; m < 3; ++m) {
    const ChannelBlock expect = ((p.anchor[m] / p.gamma2 + p.data[m]) / (1.0 / p.gamma2 + 1.0)).cwiseMax(0.0);
    EXPECT_LT((res.coeffs[m] - expect).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ProjectedNewton, HugeThresholdGivesZeros) {
  std::mt19937_64 rng(121);
  auto p = random_coefficient_problem(rng, 2, 8, 2, true, 1e6, 1.0);
  for (auto& d : p.data) d = d.cwiseAbs();
  const auto res = projected_newton_coeffs(p);
  for (const auto& z : res.coeffs) EXPECT_TRUE(z.isZero(0.0));
}

TEST(ProjectedNewton, MatchesProjectedGradientReference) {
  std::mt19937_64 rng(122);
  for (int i = 0; i < 5; ++i) {
    const auto p = random_coefficient_problem(rng, 2, 8, 2, true, 0.1, 1.0);
    const auto res = projected_newton_coeffs(p);
    const auto ref = oracle_projected_gradient(p, 50000);
    EXPECT_NEAR(oracle_coefficient_objective(p, res.coeffs), oracle_coefficient_objective(p, ref), 1e-6);
    EXPECT_LE(oracle_coefficient_objective(p, res.coeffs), oracle_coefficient_objective(p, ref) + 1e-9);
    for (const auto& z : res.coeffs) EXPECT_GE(z.minCoeff(), 0.0);
  }
}

TEST(ProjectedNewton, ObjectiveAgreesWithOracleEvaluation) {
  std::mt19937_64 rng(123);
  const auto p = random_coefficient_problem(rng, 2, 9, 3, true, 0.2, 0.5);
  EXPECT_NEAR(coefficient_objective(p, p.anchor), oracle_coefficient_objective(p, p.anchor), 1e-10);
  auto neg = p.anchor;
  neg[1](0, 0) = -1e-3;
  EXPECT_TRUE(std::isinf(coefficient_objective(p, neg)));
}

TEST(ProjectedNewton, FirstOrderOptimality) {
  std::mt19937_64 rng(124);
  const NewtonSettings s{};
  for (int i = 0; i < 20; ++i) {
    const auto p = random_coefficient_problem(rng, 3, 12, 3, true, 0.15, 0.8);
    const auto res = projected_newton_coeffs(p, s);
    ASSERT_TRUE(res.converged);
    const auto g = coefficient_gradient(p, res.coeffs);
    for (std::size_t m = 0; m < g.size(); ++m)
      for (Eigen::Index idx = 0; idx < g[m].size(); ++idx) {
        const double z = res.coeffs[m].data()[idx], gi = g[m].data()[idx];
        if (z > s.active_set_eps) EXPECT_LE(std::abs(gi), 10 * s.grad_tol);
        else EXPECT_GE(gi, -10 * s.grad_tol);
      }
  }
}

TEST(ProjectedNewton, NeverIncreasesObjective) {
  std::mt19937_64 rng(125);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_coefficient_problem(rng, 2, 6, 2, i % 2 == 0, 0.3, 1.0);
    const auto res = projected_newton_coeffs(p);
    EXPECT_LE(coefficient_objective(p, res.coeffs), coefficient_objective(p, p.anchor) + 1e-12);
  }
}

TEST(ProjectedNewton, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(126);
  const double h = 1e-6;
  for (int i = 0; i < 10; ++i) {
    const auto p = random_coefficient_problem(rng, 2, 8, 2, true, 0.1, 0.9);
    // interior point so the indicator stays zero under perturbation
    std::vector<ChannelBlock> z;
    for (std::size_t m = 0; m < 2; ++m) z.push_back(oracle::random_matrix(rng, 8, 2, 0.5, 1.5));
    const auto g = coefficient_gradient(p, z);
    double num = 0.0, den = 0.0;
    for (std::size_t m = 0; m < 2; ++m)
      for (Eigen::Index idx = 0; idx < z[m].size(); ++idx) {
        auto zp = z, zm = z;
        zp[m].data()[idx] += h;
        zm[m].data()[idx] -= h;
        const double fd = (oracle_coefficient_objective(p, zp) - oracle_coefficient_objective(p, zm)) / (2 * h);
        num += std::pow(fd - g[m].data()[idx], 2);
        den += std::pow(fd, 2);
      }
    EXPECT_LT(std::sqrt(num / den), 1e-5);
  }
}

TEST(ProjectedNewton, IterationCapIsAWarning) {
  std::mt19937_64 rng(127);
  const auto p = random_coefficient_problem(rng, 2, 16, 3, true, 0.01, 100.0);
  NewtonSettings s;
  s.max_iters = 1;
  s.grad_tol = 1e-300;
  const auto res = projected_newton_coeffs(p, s);
  EXPECT_FALSE(res.converged);
  EXPECT_GT(res.unconverged_blocks, 0u);
  for (const auto& z : res.coeffs) EXPECT_GE(z.minCoeff(), 0.0);
  EXPECT_LE(coefficient_objective(p, res.coeffs), coefficient_objective(p, p.anchor));
}

TEST(SeparableUpdate, MatchesEntrywiseProx) {
  std::mt19937_64 rng(128);
  const auto p = random_coefficient_problem(rng, 2, 6, 2, false, 0.25, 0.5);
  const auto z = separable_coeff_update(p);
  const auto ref = projected_newton_coeffs(p);
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_LT((z[m] - ref.coeffs[m]).cwiseAbs().maxCoeff(), 1e-10);
    for (Eigen::Index idx = 0; idx < z[m].size(); ++idx) {
      const double a = p.data[m].data()[idx], z0 = p.anchor[m].data()[idx];
      const auto f = [&](double v) { return 0.5 * (a - v) * (a - v) + 0.5 / p.gamma2 * (v - z0) * (v - z0) + p.beta * v; };
      EXPECT_NEAR(z[m].data()[idx], oracle::grid_argmin(f, 0.0, 3.0, 1e-5), 1e-4);
    }
  }
}
