#include <gtf/forcing.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gtf;

namespace {

ShPLRNNParams random_model(Index m, Index l, bool clipped, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ShPLRNNParams p = ShPLRNNParams::zeros(m, l, clipped);
  for (Index i = 0; i < m; ++i) p.A(i) = std::uniform_real_distribution<double>(-0.9, 0.9)(rng);
  for (Index i = 0; i < p.W1.size(); ++i) p.W1.data()[i] = normal(rng) / std::sqrt(double(l));
  for (Index i = 0; i < p.W2.size(); ++i) p.W2.data()[i] = normal(rng);
  for (Index i = 0; i < m; ++i) p.h1(i) = 0.3 * normal(rng);
  for (Index i = 0; i < l; ++i) p.h2(i) = normal(rng);
  return p;
}

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

JacobianBatch constant_batch(const std::vector<Matrix>& per_sequence, std::size_t length) {
  JacobianBatch b;
  for (const auto& J : per_sequence) b.jacobians.emplace_back(length, J);
  return b;
}

// Linear model with constant Jacobian diag(2, 1) (W1 = 0) and zero data.
struct ConstantJacobianToy {
  ShPLRNNParams p = ShPLRNNParams::zeros(2, 1);
  ObservationModel obs = ObservationModel::identity(2);
  TrajectoryDataset data;

  explicit ConstantJacobianToy(Index T) {
    p.A << 2.0, 1.0;
    data = make_trajectory(Matrix::Zero(T, 2), 0.01, "zeros");
  }
};

}  // namespace

TEST(ForceState, Endpoints) {
  Vector z(2), zb(2);
  z << 0.3, -1.0;
  zb << 2.0, 4.0;
  EXPECT_EQ(force_state(z, zb, 0.0), z);
  EXPECT_EQ(force_state(z, zb, 1.0), zb);
  Vector mid = force_state(Vector::Zero(2), zb, 0.5);
  EXPECT_EQ(mid(0), 1.0);
  EXPECT_EQ(mid(1), 2.0);
  EXPECT_THROW(force_state(z, zb, 1.5), ContractError);
  EXPECT_THROW(force_state(z, Vector::Zero(3), 0.5), ContractError);
}

TEST(ForceState, JacobianFactorization) {
  std::mt19937_64 rng(31);
  for (double alpha : {0.0, 0.3, 0.9}) {
    for (int trial = 0; trial < 20; ++trial) {
      const ShPLRNNParams p = random_model(3, 6, trial % 2 == 0, rng);
      const Vector z = random_matrix(3, 1, rng);
      const Vector zb = random_matrix(3, 1, rng);
      const Vector forced = force_state(z, zb, alpha);
      const Matrix expected = (1.0 - alpha) * jacobian(p, forced).J;
      const double h = 1e-6;
      bool near = false;
      const Vector pre = p.W2 * forced;
      for (Index l = 0; l < 6; ++l) near = near || std::abs(pre(l) + p.h2(l)) < 1e-3 || std::abs(pre(l)) < 1e-3;
      if (near) continue;
      for (Index j = 0; j < 3; ++j) {
        Vector zp = z, zm = z;
        zp(j) += h;
        zm(j) -= h;
        const Vector fd = (step(p, force_state(zp, zb, alpha)) - step(p, force_state(zm, zb, alpha))) / (2 * h);
        for (Index i = 0; i < 3; ++i)
          EXPECT_LT(std::abs(fd(i) - expected(i, j)) / std::max(1.0, std::abs(expected(i, j))), 1e-6);
      }
    }
  }
}

TEST(NormBound, ContractiveClampsToZero) {
  ShPLRNNParams p = ShPLRNNParams::zeros(3, 4);
  p.A.setConstant(0.5);
  EXPECT_EQ(alpha_from_norm_bound(p), 0.0);
}

TEST(NormBound, UnitNormWeights) {
  ShPLRNNParams p = ShPLRNNParams::zeros(2, 3);
  p.A.setConstant(0.5);
  p.W1(0, 1) = 1.0;
  p.W2(2, 1) = 1.0;
  EXPECT_NEAR(jacobian_norm_upper_bound(p), 1.5, 1e-12);
  EXPECT_NEAR(alpha_from_norm_bound(p), 1.0 / 3.0, 1e-12);
}

TEST(NormBound, DominatesSampledRegions) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 30; ++trial) {
    const ShPLRNNParams p = random_model(3, 8, trial % 2 == 0, rng);
    const double bound = jacobian_norm_upper_bound(p);
    for (int k = 0; k < 200; ++k) {
      const Vector z = 3.0 * random_matrix(3, 1, rng);
      EXPECT_LE(linalg::singular_values(jacobian(p, z).J)(0), bound * (1 + 1e-8));
    }
  }
}

TEST(NormBound, MonotoneInW1Scaling) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 30; ++trial) {
    ShPLRNNParams p = random_model(3, 5, false, rng);
    const double a0 = alpha_from_norm_bound(p);
    p.W1 *= 1.7;
    EXPECT_GE(alpha_from_norm_bound(p), a0);
    EXPECT_LT(alpha_from_norm_bound(p), 1.0);
  }
}

TEST(MaxDataJacobian, Examples) {
  EXPECT_EQ(alpha_from_max_data_jacobian(constant_batch({Matrix::Zero(3, 3)}, 4)), 0.0);
  EXPECT_NEAR(alpha_from_max_data_jacobian(constant_batch({2.0 * Matrix::Identity(3, 3)}, 1)), 0.5, 1e-12);
  EXPECT_THROW(alpha_from_max_data_jacobian(JacobianBatch{}), ContractError);
}

TEST(MaxDataJacobian, BelowNormBound) {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 20; ++trial) {
    const ShPLRNNParams p = random_model(3, 8, false, rng);
    std::vector<Matrix> teacher{random_matrix(30, 3, rng), random_matrix(30, 3, rng)};
    const JacobianBatch batch = data_jacobians(p, teacher);
    ASSERT_EQ(batch.jacobians.size(), 2u);
    ASSERT_EQ(batch.jacobians[0].size(), 29u);
    EXPECT_LE(alpha_from_max_data_jacobian(batch), alpha_from_norm_bound(p) + 1e-9);
  }
}

TEST(Geomean, ConstantJacobianAllMethodsAgree) {
  Matrix J(2, 2);
  J << 1.5, 0.4, -0.3, 1.1;  // eigenvalues with positive real part
  const std::vector<Matrix> seq(10, J);
  const double ref = linalg::singular_values(J)(0);
  EXPECT_NEAR(geometric_mean_norm(seq, GeomeanMethod::ArithmeticMean).kappa, ref, 1e-8);
  EXPECT_NEAR(geometric_mean_norm(seq, GeomeanMethod::NormUpperBound).kappa, ref, 1e-8);
  const auto e = geometric_mean_norm(seq, GeomeanMethod::ExpLog);
  EXPECT_FALSE(e.fell_back);
  EXPECT_NEAR(e.kappa, ref, 1e-8);
}

TEST(Geomean, AlternatingCommutingDiagonals) {
  std::vector<Matrix> seq;
  for (int k = 0; k < 10; ++k) seq.push_back((k % 2 == 0 ? 2.0 : 0.5) * Matrix::Identity(2, 2));
  EXPECT_NEAR(geometric_mean_norm(seq, GeomeanMethod::ExpLog).kappa, 1.0, 1e-12);
  EXPECT_NEAR(geometric_mean_norm(seq, GeomeanMethod::NormUpperBound).kappa, 1.0, 1e-12);
  EXPECT_NEAR(geometric_mean_norm(seq, GeomeanMethod::ArithmeticMean).kappa, 1.25, 1e-8);
}

TEST(Geomean, UpperBoundDominatesExpLogOnSpd) {
  std::mt19937_64 rng(35);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Matrix> seq;
    for (int k = 0; k < 8; ++k) {
      const Matrix R = random_matrix(3, 3, rng);
      seq.push_back(R * R.transpose() + 0.1 * Matrix::Identity(3, 3));
    }
    const auto e = geometric_mean_norm(seq, GeomeanMethod::ExpLog);
    EXPECT_FALSE(e.fell_back);
    EXPECT_GE(geometric_mean_norm(seq, GeomeanMethod::NormUpperBound).kappa, e.kappa * (1 - 1e-9));
  }
}

TEST(Geomean, ExpLogFallsBackOnNegativeEigenvalue) {
  Matrix J = Matrix::Identity(2, 2);
  J(1, 1) = -0.5;
  const std::vector<Matrix> seq(4, J);
  const auto e = geometric_mean_norm(seq, GeomeanMethod::ExpLog);
  EXPECT_TRUE(e.fell_back);
  EXPECT_NEAR(e.kappa, geometric_mean_norm(seq, GeomeanMethod::ArithmeticMean).kappa, 1e-12);
  const auto batch = geometric_mean_norm(constant_batch({J, Matrix::Identity(2, 2)}, 3), GeomeanMethod::ExpLog);
  EXPECT_EQ(batch.fallbacks, 1);
}

TEST(Geomean, AlphaFromKappas) {
  EXPECT_EQ(alpha_from_kappas({0.3, 0.9, 1.0}), 0.0);
  EXPECT_NEAR(alpha_from_kappas({1.25, 2.0}), 0.5, 1e-15);
  const JacobianBatch b = constant_batch({1.25 * Matrix::Identity(2, 2), 2.0 * Matrix::Identity(2, 2)}, 5);
  EXPECT_NEAR(alpha_from_geomean(b, GeomeanMethod::ArithmeticMean), 0.5, 1e-8);
  const JacobianBatch single = constant_batch({2.0 * Matrix::Identity(3, 3)}, 6);
  EXPECT_NEAR(alpha_from_geomean(single, GeomeanMethod::ExpLog), alpha_from_max_data_jacobian(single), 1e-8);
}

TEST(Anneal, EmaDecrease) {
  GtfState s = GtfState::adaptive();
  ASSERT_EQ(s.alpha, 1.0);
  // kappa = 1/(1 - 0.3) gives a fresh estimate of 0.3
  s.anneal.update_interval = 1;
  const JacobianBatch b = constant_batch({(1.0 / 0.7) * Matrix::Identity(2, 2)}, 3);
  s = anneal_update(s, b);
  EXPECT_NEAR(s.alpha, 0.9993, 1e-9);
  EXPECT_EQ(s.anneal.step_count, 1);
}

TEST(Anneal, JumpUp) {
  GtfState s = GtfState::adaptive();
  s.alpha = 0.5;
  s.anneal.update_interval = 1;
  const JacobianBatch b = constant_batch({5.0 * Matrix::Identity(2, 2)}, 3);  // estimate 0.8
  s = anneal_update(s, b);
  EXPECT_NEAR(s.alpha, 0.8, 1e-8);
}

TEST(Anneal, GatedByInterval) {
  GtfState s = GtfState::adaptive();
  const JacobianBatch b = constant_batch({(1.0 / 0.7) * Matrix::Identity(2, 2)}, 3);
  for (int k = 1; k < 5; ++k) {
    s = anneal_update(s, b);
    EXPECT_EQ(s.alpha, 1.0);
  }
  s = anneal_update(s, b);
  EXPECT_EQ(s.anneal.step_count, 5);
  const double after_first = s.alpha;
  EXPECT_LT(after_first, 1.0);
  for (int k = 6; k < 10; ++k) {
    s = anneal_update(s, b);
    EXPECT_EQ(s.alpha, after_first);
  }
  s = anneal_update(s, b);
  EXPECT_LT(s.alpha, after_first);
}

TEST(Anneal, RequiresAdaptiveMode) {
  EXPECT_THROW(anneal_update(GtfState::fixed(0.1), JacobianBatch{}), ContractError);
}

TEST(SparseSchedule, Examples) {
  for (int t = 0; t < 10; ++t) EXPECT_TRUE(sparse_tf_schedule(1, t));
  for (int t = 0; t < 10; ++t) EXPECT_EQ(sparse_tf_schedule(5, t), t == 0 || t == 5);
  const std::int64_t T = 200;
  for (std::int64_t t = 0; t < T; ++t) EXPECT_EQ(sparse_tf_schedule(T, t), t == 0);
  EXPECT_THROW(sparse_tf_schedule(0, 1), ContractError);
  const GtfState s = GtfState::sparse(5);
  EXPECT_EQ(forcing_at(s, 10), 1.0);
  EXPECT_EQ(forcing_at(s, 11), 0.0);
}

TEST(NormSeries, ExactCancellation) {
  ConstantJacobianToy toy(10000);
  const auto series = jacobian_product_norm_series(toy.p, toy.obs, toy.data, 0.5, 10000);
  ASSERT_EQ(series.size(), 10000u);
  for (double v : series) ASSERT_LT(std::abs(std::pow(10.0, v) - 1.0), 1e-9);
}

TEST(NormSeries, GeometricGrowthAndDecay) {
  ConstantJacobianToy toy(600);
  const auto grow = jacobian_product_norm_series(toy.p, toy.obs, toy.data, 0.0, 600);
  const auto decay = jacobian_product_norm_series(toy.p, toy.obs, toy.data, 0.9, 600);
  for (std::size_t t = 0; t < 600; ++t) {
    const double n = static_cast<double>(t + 1);
    EXPECT_NEAR(grow[t], n * std::log10(2.0), 1e-9 * n);
    EXPECT_NEAR(decay[t], n * std::log10(0.2), 1e-9 * n);
  }
}

TEST(NormSeries, BoundedAtEstimatedAlpha) {
  ConstantJacobianToy toy(2000);
  for (double sigma : {1.0, 1.5, 2.0}) {
    toy.p.A << sigma, 0.7;
    const double alpha = alpha_from_sigma(sigma);
    for (double v : jacobian_product_norm_series(toy.p, toy.obs, toy.data, alpha, 2000))
      EXPECT_LE(std::pow(10.0, v), 1.0 + 1e-9);
  }
}

TEST(NormSeries, FullForcingIsMinusInfinity) {
  ConstantJacobianToy toy(10);
  for (double v : jacobian_product_norm_series(toy.p, toy.obs, toy.data, 1.0, 10)) EXPECT_TRUE(std::isinf(v) && v < 0);
}

TEST(Commutator, Examples) {
  EXPECT_EQ(*commutator_ratio(Vector::Constant(3, 2.0).asDiagonal().toDenseMatrix(),
                              Vector::LinSpaced(3, 1.0, 3.0).asDiagonal().toDenseMatrix()),
            0.0);
  Matrix a(2, 2), b(2, 2);
  a << 0, 1, 0, 0;
  b << 0, 0, 1, 0;
  EXPECT_NEAR(*commutator_ratio(a, b), 1.0, 1e-15);
  EXPECT_FALSE(commutator_ratio(Matrix::Zero(2, 2), a).has_value());
}

TEST(Commutator, RatioWithinUnitIntervalUnderRandomSearch) {
  std::mt19937_64 rng(36);
  double best = 0.0;
  for (int k = 0; k < 20000; ++k) {
    const Index n = 2 + k % 3;
    const Matrix a = random_matrix(n, n, rng);
    Matrix b = random_matrix(n, n, rng);
    // rotate b against a to search for the most non-commuting pair
    Eigen::HouseholderQR<Matrix> qr(random_matrix(n, n, rng));
    const Matrix Q = qr.householderQ();
    b = Q * b * Q.transpose();
    const double r = *commutator_ratio(a, b);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0 + 1e-12);
    best = std::max(best, r);
  }
  EXPECT_GT(best, 0.5);
}

TEST(Commutator, Histogram) {
  std::mt19937_64 rng(37);
  std::vector<Matrix> js;
  for (int k = 0; k < 30; ++k) js.push_back(random_matrix(3, 3, rng));
  js.push_back(Matrix::Zero(3, 3));
  const auto h = commutator_diagnostic(js, 10);
  std::uint64_t total = 0;
  for (auto c : h.counts) total += c;
  EXPECT_EQ(total, h.ratios.size());
  EXPECT_EQ(h.skipped, 60u);
  EXPECT_EQ(h.ratios.size(), 30u * 29u);
  const auto sampled = commutator_diagnostic(js, 10, 100, 5);
  EXPECT_EQ(sampled.ratios.size() + sampled.skipped, 100u);
}

TEST(SpectrumStats, GammaInUnitInterval) {
  std::mt19937_64 rng(38);
  std::vector<Matrix> js;
  for (int k = 0; k < 20; ++k) js.push_back(random_matrix(3, 3, rng));
  const auto s = spectrum_stats(js);
  EXPECT_GE(s.gamma_tilde, 0.0);
  EXPECT_LE(s.gamma_tilde, 1.0);
  const auto d = spectrum_stats({Vector::LinSpaced(3, 0.5, 2.0).asDiagonal().toDenseMatrix()});
  EXPECT_NEAR(d.sigma_max_tilde, 2.0, 1e-12);
  EXPECT_NEAR(d.lambda_min_tilde, 0.5, 1e-12);
  EXPECT_NEAR(d.gamma_tilde, 0.25, 1e-12);
}

TEST(GtfState, Validation) {
  EXPECT_THROW(GtfState::fixed(1.2), ContractError);
  EXPECT_THROW(GtfState::sparse(0), ContractError);
  AnnealSettings a;
  a.update_interval = 0;
  EXPECT_THROW(GtfState::adaptive(a), ContractError);
}
