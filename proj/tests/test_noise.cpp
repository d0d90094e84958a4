#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "generators.hpp"
#include "skt/noise.hpp"

namespace {

using namespace skt;

// ---------------------------------------------------------------------------
// g_delta

TEST(GDelta, SquareRootBranch) {
  EXPECT_DOUBLE_EQ(g_delta(4.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(g_delta_prime(4.0, 1.0), 0.25);
}

TEST(GDelta, ZeroAndNegative) {
  EXPECT_EQ(g_delta(0.0, 0.1), 0.0);
  EXPECT_EQ(g_delta(-3.0, 0.1), 0.0);
  EXPECT_EQ(g_delta_prime(-3.0, 0.1), 0.0);
  EXPECT_THROW(g_delta(1.0, 0.0), std::invalid_argument);
}

TEST(GDelta, LinearBranchSlope) {
  for (double d : {1e-3, 1e-2, 1e-1}) {
    for (double x : {0.1 * d, 0.3 * d, 0.49 * d}) {
      EXPECT_NEAR(g_delta_prime(x, d), 1.0 / std::sqrt(d), 1e-12 / std::sqrt(d));
      EXPECT_NEAR(g_delta(x, d), x / std::sqrt(d), 1e-15);
    }
  }
}

TEST(GDelta, ContinuityAtBreakpoints) {
  for (double d : {1e-3, 1e-2, 1e-1, 1.0}) {
    const double sd = std::sqrt(d);
    // cubic evaluated directly from its coefficients, against the neighbouring branches
    auto cubic = [&](double x) {
      return -(2 * sd / (d * d * d)) * x * x * x + (4 / (d * sd)) * x * x - (3 / (2 * sd)) * x + sd / 2;
    };
    auto cubic_prime = [&](double x) {
      return -(6 * sd / (d * d * d)) * x * x + (8 / (d * sd)) * x - 3 / (2 * sd);
    };
    EXPECT_NEAR(cubic(d / 2), (d / 2) / sd, 1e-12 * sd);
    EXPECT_NEAR(cubic(d), std::sqrt(d), 1e-12 * sd);
    EXPECT_NEAR(cubic_prime(d / 2), 1 / sd, 1e-12 / sd);
    EXPECT_NEAR(cubic_prime(d), 0.5 / sd, 1e-12 / sd);
  }
}

TEST(GDeltaProperty, DerivativeMatchesFiniteDifference) {
  skt::testing::Gen gen(31);
  for (int trial = 0; trial < 100; ++trial) {
    const double d = gen.scale(1e-3, 1.0);
    double x = gen.uniform(0.0, 3.0 * d);
    if (std::abs(x - d / 2) < 1e-3 * d || std::abs(x - d) < 1e-3 * d) x += 0.01 * d;
    const double h = 1e-7 * d;
    const double fd = (g_delta(x + h, d) - g_delta(x - h, d)) / (2 * h);
    ASSERT_NEAR(g_delta_prime(x, d), fd, 1e-6 * std::abs(fd)) << "x " << x << " delta " << d;
  }
}

TEST(GDeltaProperty, Bounds) {
  // |g| <= C sqrt(x), |g'| <= C / sqrt(delta), |g'| <= C / sqrt(x), C = 3/2
  skt::testing::Gen gen(32);
  for (int trial = 0; trial < 20000; ++trial) {
    const double d = gen.scale(1e-4, 1.0);
    const double x = gen.scale(1e-8, 10.0);
    ASSERT_LE(g_delta(x, d), 1.5 * std::sqrt(x));
    ASSERT_LE(std::abs(g_delta_prime(x, d)), 1.5 / std::sqrt(d));
    ASSERT_LE(std::abs(g_delta_prime(x, d)), 1.5 / std::sqrt(x));
    ASSERT_GE(g_delta(x, d), 0.0);
  }
}

// ---------------------------------------------------------------------------
// NoiseBasis

TEST(NoiseBasis, Validation) {
  const Grid g(1.0, 16);
  EXPECT_THROW(NoiseBasis(g, 0, 2.5), std::invalid_argument);
  EXPECT_THROW(NoiseBasis(g, 8, 1.5), std::invalid_argument);
}

TEST(NoiseBasis, TabulatedValuesFollowDefinition) {
  const Grid g(2.0, 32);
  const NoiseBasis b(g, 6, 2.5);
  for (int k = 0; k < 6; ++k) {
    const double lam = std::pow(k * M_PI / 2.0, 2);
    const double c = k == 0 ? 1 / std::sqrt(2.0) : 1.0;
    const double w = std::pow(1 + lam, -1.25);
    EXPECT_NEAR(b.centers()(k, 5), w * c * std::cos(k * M_PI * g.center(5) / 2.0), 1e-14);
    EXPECT_NEAR(b.faces()(k, 9), w * c * std::cos(k * M_PI * g.face(9) / 2.0), 1e-14);
  }
}

TEST(NoiseBasis, DerivativeTableMatchesGradient) {
  double prev = 0.0;
  for (int M : {32, 64, 128}) {
    const Grid g(1.0, M);
    const NoiseBasis b(g, 5, 2.5);
    double err = 0.0;
    for (int q = 0; q < 5; ++q) {
      const Vector grad = g.gradient(b.centers().row(q).transpose());
      for (int f = 1; f < M; ++f) err = std::max(err, std::abs(grad[f] - b.face_gradients()(q, f)));
    }
    if (prev > 0.0) {
      EXPECT_NEAR(prev / err, 4.0, 0.3);
    }
    prev = err;
  }
}

TEST(NoiseBasis, NormsMonotoneAndBelowAnalyticBound) {
  const Grid g(1.0, 256);
  double prev = 0.0, prev_grad = 0.0;
  for (int K : {1, 2, 4, 8, 16, 32, 64, 128}) {
    const NoiseBasis b(g, K, 2.5);
    EXPECT_GE(b.norms().sup_sq, prev);
    EXPECT_GE(b.norms().grad_sup_sq, prev_grad);
    EXPECT_LE(b.norms().sup_sq, b.tail_bound(0, 0));
    EXPECT_LE(b.norms().grad_sup_sq, b.tail_bound(0, 2));
    prev = b.norms().sup_sq;
    prev_grad = b.norms().grad_sup_sq;
  }
  // the omitted tail shrinks with K
  EXPECT_LT(NoiseBasis(g, 64, 2.5).norms().sup_sq_tail, NoiseBasis(g, 8, 2.5).norms().sup_sq_tail);
}

TEST(NoiseBasis, GradL2MatchesQuadrature) {
  const Grid g(1.5, 512);
  const NoiseBasis b(g, 10, 2.5);
  double quad = 0.0;
  for (int q = 0; q < 10; ++q) quad += g.inner(b.center_gradients().row(q).transpose(), b.center_gradients().row(q).transpose());
  EXPECT_NEAR(b.grad_l2_sq(), quad, 1e-4 * quad);
}

// ---------------------------------------------------------------------------
// Wiener increments

TEST(Increment, ZeroStepAndDeterminism) {
  const Grid g(1.0, 16);
  const NoiseBasis b(g, 8, 2.5);
  Rng r1(5), r2(5);
  EXPECT_EQ(sample_increment(r1, b, 2, 0.0).dW.cwiseAbs().maxCoeff(), 0.0);
  Rng r3(9), r4(9);
  EXPECT_EQ(sample_increment(r3, b, 2, 0.1).dW, sample_increment(r4, b, 2, 0.1).dW);
}

TEST(Increment, MeanAndVariance) {
  const Grid g(1.0, 16);
  const NoiseBasis b(g, 10, 2.5);
  Rng rng(77);
  const double dt = 0.01;
  const int R = 10000;  // 10^5 entries
  double sum = 0.0, sq = 0.0;
  for (int r = 0; r < R; ++r) {
    const WienerIncrement inc = sample_increment(rng, b, 1, dt);
    sum += inc.dW.sum();
    sq += inc.dW.squaredNorm();
  }
  const double n = 10.0 * R;
  EXPECT_LT(std::abs(sum / n), 4.0 * std::sqrt(dt / n));
  // sample variance of a chi-square: sd of sq/n is dt sqrt(2/n)
  EXPECT_LT(std::abs(sq / n - dt), 4.0 * dt * std::sqrt(2.0 / n));
}

// ---------------------------------------------------------------------------
// sigma and the noise term

TEST(Sigma, Examples) {
  const Coefficients c((Eigen::MatrixXd(1, 2) << 1.0, 0.0).finished());
  const Field u4(FieldMatrix::Constant(1, 8, 4.0), FieldKind::density);
  EXPECT_NEAR(sigma_delta(c, u4, 1.0).values.maxCoeff(), 2.0, 1e-15);
  EXPECT_NEAR(sigma_delta(c, u4, 1.0).values.minCoeff(), 2.0, 1e-15);
  const Field u0(FieldMatrix::Zero(1, 8), FieldKind::density);
  EXPECT_EQ(sigma_delta(c, u0, 0.1).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SigmaProperty, BoundedByExactAndEqualAboveDelta) {
  skt::testing::Gen gen(33);
  const Grid g(1.0, 32);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = gen.integer(1, 3);
    const Coefficients c = gen.symmetric_coefficients(n);
    const double d = gen.scale(1e-3, 1.0);
    const Field u = gen.rough(g, n, 0.0, 2.0, FieldKind::density);
    const Field s = sigma_delta(c, u, d);
    const Field e = sigma_exact(c, u);
    const Field At = tilde_A(c, u);
    for (int i = 0; i < n; ++i) {
      for (int m = 0; m < 32; ++m) {
        ASSERT_GE(s.values(i, m), 0.0);
        ASSERT_LE(s.values(i, m), e.values(i, m) * (1 + 1e-15));
        if (u.values(i, m) * At.values(i, m) >= d) {
          ASSERT_EQ(s.values(i, m), e.values(i, m));
        }
      }
    }
  }
}

TEST(Sigma, ConvergesAtRateSqrtDelta) {
  const Coefficients c(Eigen::MatrixXd::Constant(1, 2, 1.0));
  const Grid g(1.0, 400);
  Field u(1, 400, FieldKind::density);
  for (int m = 0; m < 400; ++m) u.values(0, m) = g.center(m) * g.center(m);
  const Field e = sigma_exact(c, u);
  for (double d : {1e-2, 1e-4, 1e-6}) {
    const double err = (sigma_delta(c, u, d).values - e.values).cwiseAbs().maxCoeff();
    EXPECT_LE(err, std::sqrt(d));
  }
}

TEST(NoiseTerm, TrivialCases) {
  const Grid g(1.0, 32);
  const NoiseBasis b(g, 8, 2.5);
  Rng rng(1);
  const WienerIncrement inc = sample_increment(rng, b, 1, 0.01);
  const Field zero(FieldMatrix::Zero(1, 32), FieldKind::generic);
  EXPECT_EQ(noise_divergence_term(g, b, zero, inc, 100.0).values.cwiseAbs().maxCoeff(), 0.0);

  // constant sigma with only the constant mode: zero inside, no-flux walls at the two ends
  const NoiseBasis b0(g, std::vector<int>{0}, 2.5);
  const WienerIncrement inc0 = sample_increment(rng, b0, 1, 0.01);
  const Field one(FieldMatrix::Ones(1, 32), FieldKind::generic);
  const Vector d = noise_divergence_term(g, b0, one, inc0, 100.0).row(0);
  EXPECT_LT(d.segment(1, 30).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(g.integrate(d), 0.0, 1e-14);

  WienerIncrement bad = inc;
  bad.dW.resize(1, 3);
  EXPECT_THROW(noise_divergence_term(g, b, one, bad, 100.0), std::invalid_argument);
}

TEST(NoiseTermProperty, IntegratesToZero) {
  skt::testing::Gen gen(34);
  const Grid g(1.7, 64);
  const NoiseBasis b(g, 32, 2.5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = gen.integer(1, 3);
    const Field sigma = gen.rough(g, n, 0.0, 3.0);
    const WienerIncrement inc = sample_increment(gen.rng(), b, n, gen.scale(1e-6, 1e-1));
    const Field out = noise_divergence_term(g, b, sigma, inc, gen.scale(1.0, 1e6));
    for (int i = 0; i < n; ++i) {
      ASSERT_NEAR(g.integrate(out.row(i)), 0.0, 1e-13 * (1 + g.integrate(out.row(i).cwiseAbs())));
    }
  }
}

TEST(NoiseTerm, ItoIsometry) {
  const Grid g(1.0, 32);
  const NoiseBasis b(g, 8, 2.5);
  const double dt = 0.01, N = 50.0;
  Field sigma(1, 32, FieldKind::generic);
  Vector phi(32);
  for (int m = 0; m < 32; ++m) {
    sigma.values(0, m) = 1.0 + 0.5 * std::sin(3.0 * g.center(m));
    phi[m] = std::cos(2.0 * M_PI * g.center(m)) + g.center(m);
  }
  // oracle: (dt/N) sum_k (sum_f dx sigma_f e_k(x_f) grad(phi)_f)^2
  const Vector sf = g.face_average(sigma.row(0));
  const Vector gphi = g.gradient(phi);
  double expected = 0.0;
  for (int q = 0; q < b.size(); ++q) {
    double s = 0.0;
    for (int f = 1; f < 32; ++f) s += g.dx() * sf[f] * b.faces()(q, f) * gphi[f];
    expected += s * s;
  }
  expected *= dt / N;

  Rng rng(2024);
  const int R = 10000;
  std::vector<double> x(R);
  for (int r = 0; r < R; ++r) {
    const WienerIncrement inc = sample_increment(rng, b, 1, dt);
    x[r] = g.inner(noise_divergence_term(g, b, sigma, inc, N).row(0), phi);
  }
  double mean = 0.0, m2 = 0.0, m4 = 0.0;
  for (double v : x) mean += v / R;
  for (double v : x) {
    m2 += (v - mean) * (v - mean) / R;
    m4 += std::pow(v - mean, 4) / R;
  }
  const double se = std::sqrt((m4 - m2 * m2) / R);
  EXPECT_LT(std::abs(m2 - expected), 3.0 * se);
}

// ---------------------------------------------------------------------------
// correction T

TEST(Correction, TrivialCases) {
  const Grid g(1.0, 32);
  const NoiseBasis b(g, 16, 2.5);
  Eigen::MatrixXd a(2, 3);
  a << 1, 1, 0.5, 1, 0.5, 1;
  const Coefficients c(a);
  const Field zero(FieldMatrix::Zero(2, 32), FieldKind::density);
  EXPECT_EQ(correction_T(g, c, b, zero, 0.01).values.cwiseAbs().maxCoeff(), 0.0);

  const NoiseBasis b0(g, std::vector<int>{0}, 2.5);
  const Field flat(FieldMatrix::Constant(2, 32, 1.3), FieldKind::density);
  EXPECT_LT(correction_T(g, c, b0, flat, 0.01).values.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Correction, SingleSpeciesHandExpansion) {
  // n = 1, one mode: flux = g'(q)^2 (a0 + 2 a11 u)^2 e^2 u_x + g'(q) (a0 + 2 a11 u) e e' g(q), q = u (a0 + a11 u)
  const Grid g(1.0, 64);
  const NoiseBasis b(g, std::vector<int>{3}, 2.5);
  const double a0 = 0.7, a11 = 1.3, d = 0.05;
  const Coefficients c((Eigen::MatrixXd(1, 2) << a0, a11).finished());
  Field u(1, 64, FieldKind::density);
  for (int m = 0; m < 64; ++m) u.values(0, m) = 0.02 + 0.5 * std::pow(std::sin(2.0 * g.center(m)), 2);

  const Vector uf = g.face_average(u.row(0));
  const Vector ux = g.gradient(u.row(0));
  Vector flux = Vector::Zero(65);
  for (int f = 1; f < 64; ++f) {
    const double x = uf[f];
    const double q = x * (a0 + a11 * x);
    const double gp = g_delta_prime(q, d);
    const double e = b.faces()(0, f), ep = b.face_gradients()(0, f);
    flux[f] = gp * gp * std::pow(a0 + 2 * a11 * x, 2) * e * e * ux[f] +
              gp * (a0 + 2 * a11 * x) * e * ep * g_delta(q, d);
  }
  const Vector expected = g.divergence(flux);
  const Vector got = correction_T(g, c, b, u, d).row(0);
  EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-8 * expected.cwiseAbs().maxCoeff());
}

TEST(CorrectionProperty, ChainRuleMatchesFiniteDifferenceOfSigma) {
  // face flux / (d_u sigma) - e e' sigma must equal e^2 d_x sigma, with d_x sigma from a
  // directional finite difference of g(u_i A~_i(u)) along the face gradient of u
  skt::testing::Gen gen(35);
  const Grid g(1.0, 48);
  const NoiseBasis b(g, 12, 2.5);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = gen.integer(2, 3);
    const Coefficients c = gen.symmetric_coefficients(n);
    const double d = 1e-3;
    const Field u = gen.smooth_positive(g, n, 0.5);
    const Field flux = correction_flux(g, c, b, u, d);
    for (int f = 5; f < 44; f += 7) {
      Vector uf(n), ux(n);
      for (int i = 0; i < n; ++i) {
        uf[i] = 0.5 * (u.values(i, f - 1) + u.values(i, f));
        ux[i] = (u.values(i, f) - u.values(i, f - 1)) / g.dx();
      }
      for (int i = 0; i < n; ++i) {
        auto sigma_at = [&](const Vector& x) { return g_delta(x[i] * tilde_A_point(c, x)[i], d); };
        const double h = 1e-6;
        const double dsdx = (sigma_at(uf + h * ux) - sigma_at(uf - h * ux)) / (2 * h);
        Vector ei = Vector::Zero(n);
        ei[i] = 1.0;
        const double dsdu = (sigma_at(uf + h * ei) - sigma_at(uf - h * ei)) / (2 * h);
        const double expected = dsdu * (b.face_e_squared()[f] * dsdx + b.face_e_grad()[f] * sigma_at(uf));
        ASSERT_NEAR(flux.values(i, f), expected, 1e-6 * (1 + std::abs(expected)))
            << "trial " << trial << " species " << i << " face " << f;
      }
    }
  }
}

TEST(CorrectionProperty, IntegratesToZero) {
  skt::testing::Gen gen(36);
  const Grid g(2.0, 64);
  const NoiseBasis b(g, 32, 2.5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = gen.integer(1, 3);
    const Coefficients c = gen.symmetric_coefficients(n);
    const Field u = gen.rough(g, n, 0.0, 2.0, FieldKind::density);
    const Field T = correction_T(g, c, b, u, gen.scale(1e-4, 1e-1));
    for (int i = 0; i < n; ++i) {
      ASSERT_NEAR(g.integrate(T.row(i)), 0.0, 1e-12 * (1 + g.integrate(T.row(i).cwiseAbs())));
    }
  }
}

TEST(Correction, RegularizedApproachesExactAwayFromZero) {
  const Grid g(1.0, 64);
  const NoiseBasis b(g, 16, 2.5);
  Eigen::MatrixXd a(2, 3);
  a << 1, 1, 0.5, 1, 0.5, 1;
  const Coefficients c(a);
  Field u(2, 64, FieldKind::density);
  for (int m = 0; m < 64; ++m) {
    u.values(0, m) = 0.5 + 0.3 * std::cos(M_PI * g.center(m));
    u.values(1, m) = 0.8 + 0.2 * std::sin(2 * g.center(m));
  }
  const Field exact = correction_T(g, c, b, u, 0.0, SigmaModel::exact);
  // u_i A~_i >= 0.2 * 1 on this field, so every delta below that gives the exact value
  EXPECT_LT((correction_T(g, c, b, u, 1e-2).values - exact.values).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((correction_T(g, c, b, u, 5.0).values - exact.values).cwiseAbs().maxCoeff(), 1e-3);
  const Field zero(FieldMatrix::Zero(2, 64), FieldKind::density);
  EXPECT_THROW(correction_T(g, c, b, zero, 0.0, SigmaModel::exact), std::domain_error);
}

}  // namespace
