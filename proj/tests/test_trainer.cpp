#include <gtf/benchmark_systems.hpp>
#include <gtf/trainer.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gtf;
using namespace gtf::systems;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

ShPLRNNParams random_model(Index m, Index l, bool clipped, std::mt19937_64& rng) {
  ShPLRNNParams p = initialize_shplrnn(m, l, clipped, rng);
  p.h1 = random_matrix(m, 1, rng, 0.2);
  p.h2 = random_matrix(l, 1, rng, 0.5);
  return p;
}

Batch random_batch(Index S, Index T, Index N, std::mt19937_64& rng) {
  Batch b;
  for (Index s = 0; s < S; ++s) {
    b.targets.push_back(random_matrix(T, N, rng));
    b.starts.push_back(0);
  }
  return b;
}

// Straightforward re-implementation of the forced forward pass and total loss.
// `fixed_pinv` freezes the teacher map; otherwise it is recomputed from B.
double reference_loss(const ShPLRNNParams& p, const Matrix& B, const Matrix* fixed_pinv, const GtfState& gtf,
                      const Batch& batch, const RegularizationConfig& reg, bool train_B) {
  const Matrix P = fixed_pinv ? *fixed_pinv : linalg::pseudo_inverse(B);
  double sum = 0.0;
  double count = 0.0;
  for (const auto& x : batch.targets) {
    Vector z = P * x.row(0).transpose();
    for (Index t = 0; t + 1 < x.rows(); ++t) {
      const Vector zhat = P * x.row(t).transpose();
      z = step(p, force_state(z, zhat, forcing_at(gtf, t)));
      sum += (B * z - x.row(t + 1).transpose()).squaredNorm();
      count += 1.0;
    }
  }
  double total = sum / count;
  total += reg.lambda_reg * ((1.0 - p.A.array()).square().sum() + p.W1.squaredNorm() + p.W2.squaredNorm() +
                             p.h1.squaredNorm() + p.h2.squaredNorm());
  if (train_B && reg.lambda_cn > 0.0) {
    const Vector sv = linalg::singular_values(B);
    const double r = sv(0) / (sv(sv.size() - 1) + reg.epsilon);
    total += reg.lambda_cn * (1.0 - r) * (1.0 - r);
  }
  return total;
}

struct GradCase {
  bool clipped = false;
  GtfState gtf = GtfState::fixed(0.3);
  bool trainable_B = false;
  bool differentiate_pinv = false;
  RegularizationConfig reg;
};

// Central differences over every packed parameter against backward().
void check_gradient(const GradCase& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Index M = 3, L = 8, T = 10, S = 2;
  const Index N = c.trainable_B ? 4 : 3;
  ShPLRNNParams p = random_model(M, L, c.clipped, rng);
  ObservationModel obs = c.trainable_B
                             ? ObservationModel::from_matrix(Matrix::Identity(N, M) + random_matrix(N, M, rng, 0.3), true)
                             : ObservationModel::identity(M);
  const Batch batch = random_batch(S, T, N, rng);

  const ForwardTrace trace = forward_forced(p, obs, c.gtf, batch);
  const LossReport rep = loss(batch, trace, p, obs, c.reg);
  const Matrix P0 = obs.pinv();
  const bool freeze = c.trainable_B && !c.differentiate_pinv;
  EXPECT_NEAR(rep.total, reference_loss(p, obs.B(), freeze ? &P0 : nullptr, c.gtf, batch, c.reg, c.trainable_B),
              1e-12 * std::max(1.0, rep.total));

  const Vector analytic = backward(batch, trace, p, obs, c.reg, c.differentiate_pinv).flatten();
  const Vector theta = pack_parameters(p, obs);
  ASSERT_EQ(analytic.size(), theta.size());
  const double h = 1e-6;
  ShPLRNNParams q = p;
  ObservationModel qo = obs;
  auto eval = [&](const Vector& th) {
    unpack_parameters(th, q, qo);
    return reference_loss(q, qo.B(), freeze ? &P0 : nullptr, c.gtf, batch, c.reg, c.trainable_B);
  };
  for (Index i = 0; i < theta.size(); ++i) {
    Vector tp = theta, tm = theta;
    tp(i) += h;
    tm(i) -= h;
    const double fd = (eval(tp) - eval(tm)) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic(i)), 1e-3});
    EXPECT_LT(std::abs(fd - analytic(i)) / denom, 1e-5) << "parameter " << i << " fd " << fd << " analytic "
                                                       << analytic(i);
  }
}

}  // namespace

TEST(SampleBatch, SingleStartWhenDatasetIsMinimal) {
  std::mt19937_64 rng(1);
  const TrajectoryDataset ds = make_trajectory(random_matrix(11, 2, rng), 0.1, "r");
  const Batch b = sample_batch(ds, 5, 10, rng);
  for (Index s = 0; s < 5; ++s) {
    EXPECT_EQ(b.starts[static_cast<std::size_t>(s)], 0);
    EXPECT_EQ(b.targets[static_cast<std::size_t>(s)], ds.data.topRows(10));
  }
  EXPECT_THROW(sample_batch(ds, 5, 11, rng), ConfigError);
  EXPECT_THROW(sample_batch(ds, 5, 1, rng), ConfigError);
}

TEST(SampleBatch, DeterministicForSeed) {
  std::mt19937_64 rng(2);
  const TrajectoryDataset ds = make_trajectory(random_matrix(500, 2, rng), 0.1, "r");
  std::mt19937_64 r1(9), r2(9);
  const Batch a = sample_batch(ds, 16, 50, r1);
  const Batch b = sample_batch(ds, 16, 50, r2);
  EXPECT_EQ(a.starts, b.starts);
  for (std::size_t s = 0; s < a.targets.size(); ++s)
    EXPECT_EQ(a.targets[s], ds.data.middleRows(a.starts[s], 50));
}

TEST(SampleBatch, UniformStarts) {
  const Index T = 1000, seq = 200;
  const TrajectoryDataset ds = make_trajectory(Matrix::Zero(T, 1), 0.1, "z");
  std::mt19937_64 rng(3);
  const Index K = T - seq;  // admissible starts 0..T-seq-1
  std::vector<double> counts(static_cast<std::size_t>(K), 0.0);
  const int draws = 100000;
  for (int k = 0; k < draws / 100; ++k) {
    const Batch b = sample_batch(ds, 100, seq, rng);
    for (Index s : b.starts) {
      ASSERT_GE(s, 0);
      ASSERT_LT(s, K);
      counts[static_cast<std::size_t>(s)] += 1.0;
    }
  }
  const double expected = double(draws) / double(K);
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const double dof = double(K - 1);
  EXPECT_LT(std::abs(chi2 - dof), 4.0 * std::sqrt(2.0 * dof));
}

TEST(Forward, FullForcingIsOneStepAhead) {
  std::mt19937_64 rng(4);
  const ShPLRNNParams p = random_model(3, 6, false, rng);
  const ObservationModel obs = ObservationModel::identity(3);
  const Batch b = random_batch(1, 12, 3, rng);
  const ForwardTrace tr = forward_forced(p, obs, GtfState::fixed(1.0), b);
  for (Index t = 0; t + 1 < 12; ++t) {
    const Vector expect = step(p, b.targets[0].row(t).transpose());
    EXPECT_LT((tr.sequences[0].predictions.col(t) - expect).norm(), 1e-14);
  }
}

TEST(Forward, NoForcingIsFreeRun) {
  std::mt19937_64 rng(5);
  const ShPLRNNParams p = random_model(3, 6, true, rng);
  const ObservationModel obs = ObservationModel::identity(3);
  const Batch b = random_batch(1, 30, 3, rng);
  const ForwardTrace tr = forward_forced(p, obs, GtfState::fixed(0.0), b);
  const Matrix free = free_run_latent(p, b.targets[0].row(0).transpose(), 30);
  for (Index t = 1; t < 30; ++t) EXPECT_LT((tr.sequences[0].predictions.col(t - 1) - free.row(t).transpose()).norm(), 1e-12);
}

TEST(Forward, ConstantPropagation) {
  ShPLRNNParams p = ShPLRNNParams::zeros(2, 3);
  p.A.setOnes();
  std::mt19937_64 rng(6);
  const Batch b = random_batch(2, 15, 2, rng);
  const ForwardTrace tr = forward_forced(p, ObservationModel::identity(2), GtfState::fixed(0.0), b);
  for (std::size_t s = 0; s < 2; ++s)
    for (Index t = 0; t < 14; ++t) EXPECT_EQ(tr.sequences[s].predictions.col(t), b.targets[s].row(0).transpose());
}

TEST(Forward, NonFiniteStateRaises) {
  ShPLRNNParams p = ShPLRNNParams::zeros(1, 1);
  p.A(0) = 1e200;
  Batch b;
  b.targets.push_back(Matrix::Constant(5, 1, 1e200));
  b.starts.push_back(0);
  EXPECT_THROW(forward_forced(p, ObservationModel::identity(1), GtfState::fixed(0.0), b), NumericError);
}

TEST(Loss, Examples) {
  ShPLRNNParams p = ShPLRNNParams::zeros(2, 3);
  p.A.setOnes();
  EXPECT_EQ(manifold_regularizer(p), 0.0);
  EXPECT_NEAR(condition_regularizer(3.0 * Matrix::Identity(3, 3), 1e-8), 0.0, 1e-14);
  // constant series is reproduced exactly by the identity map
  Batch b;
  b.targets.push_back(Matrix::Constant(8, 2, 0.7));
  b.starts.push_back(0);
  const ForwardTrace tr = forward_forced(p, ObservationModel::identity(2), GtfState::fixed(0.2), b);
  RegularizationConfig reg;
  reg.lambda_reg = 0.5;
  const LossReport r = loss(b, tr, p, ObservationModel::identity(2), reg);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.total, 0.0);
  EXPECT_NEAR(r.alpha_used, 0.2, 1e-15);
}

TEST(Gradient, UnclippedAlphaZero) { check_gradient({false, GtfState::fixed(0.0)}, 11); }
TEST(Gradient, UnclippedAlphaPointThree) { check_gradient({false, GtfState::fixed(0.3)}, 12); }
TEST(Gradient, UnclippedAlphaPointNine) { check_gradient({false, GtfState::fixed(0.9)}, 13); }
TEST(Gradient, ClippedAlphaZero) { check_gradient({true, GtfState::fixed(0.0)}, 14); }
TEST(Gradient, ClippedAlphaPointThree) { check_gradient({true, GtfState::fixed(0.3)}, 15); }
TEST(Gradient, ClippedAlphaPointNine) { check_gradient({true, GtfState::fixed(0.9)}, 16); }
TEST(Gradient, SparseForcing) {
  check_gradient({false, GtfState::sparse(3)}, 17);
  check_gradient({true, GtfState::sparse(4)}, 18);
}
TEST(Gradient, ManifoldRegularizer) {
  RegularizationConfig reg;
  reg.lambda_reg = 0.7;
  check_gradient({true, GtfState::fixed(0.3), false, false, reg}, 19);
}
TEST(Gradient, TrainableObservationConstantPinv) {
  RegularizationConfig reg;
  reg.lambda_cn = 0.2;
  check_gradient({false, GtfState::fixed(0.3), true, false, reg}, 20);
}
TEST(Gradient, TrainableObservationThroughPinv) {
  RegularizationConfig reg;
  reg.lambda_cn = 0.2;
  check_gradient({false, GtfState::fixed(0.3), true, true, reg}, 21);
  check_gradient({true, GtfState::fixed(0.0), true, true, {}}, 22);
  check_gradient({true, GtfState::sparse(3), true, true, {}}, 23);
}

TEST(Gradient, FullForcingStopsPropagation) {
  std::mt19937_64 rng(24);
  const ShPLRNNParams p = random_model(3, 8, false, rng);
  const Batch b = random_batch(1, 20, 3, rng);
  const Vector g = terminal_state_gradient(p, ObservationModel::identity(3), GtfState::fixed(1.0), b.targets[0]);
  EXPECT_EQ(g.norm(), 0.0);
  EXPECT_GT(terminal_state_gradient(p, ObservationModel::identity(3), GtfState::fixed(0.5), b.targets[0]).norm(), 0.0);
}

TEST(Gradient, TerminalStateMatchesFiniteDifference) {
  std::mt19937_64 rng(25);
  const ShPLRNNParams p = random_model(3, 8, false, rng);
  const Batch b = random_batch(1, 15, 3, rng);
  const GtfState gtf = GtfState::fixed(0.2);
  const Matrix& x = b.targets[0];
  const Vector g = terminal_state_gradient(p, ObservationModel::identity(3), gtf, x);
  auto last_error = [&](const Vector& z0) {
    Vector z = z0;
    for (Index t = 0; t + 1 < x.rows(); ++t) z = step(p, force_state(z, x.row(t).transpose(), forcing_at(gtf, t)));
    return (z - x.row(x.rows() - 1).transpose()).squaredNorm();
  };
  const double h = 1e-6;
  for (Index j = 0; j < 3; ++j) {
    Vector zp = x.row(0).transpose(), zm = zp;
    zp(j) += h;
    zm(j) -= h;
    const double fd = (last_error(zp) - last_error(zm)) / (2 * h);
    EXPECT_LT(std::abs(fd - g(j)) / std::max(1e-3, std::abs(fd)), 1e-5);
  }
}

TEST(Gradient, LinearModelBiasClosedForm) {
  // W1 = 0, scalar A = a: z_t = a^t z_0 + h (1 - a^t)/(1 - a) when unforced
  const double a = 0.8, h1 = 0.3;
  ShPLRNNParams p = ShPLRNNParams::zeros(1, 2);
  p.A(0) = a;
  p.h1(0) = h1;
  std::mt19937_64 rng(26);
  const Batch b = random_batch(3, 12, 1, rng);
  for (double alpha : {0.0, 1.0}) {
    const GtfState gtf = GtfState::fixed(alpha);
    const ForwardTrace tr = forward_forced(p, ObservationModel::identity(1), gtf, b);
    const Gradients g = backward(b, tr, p, ObservationModel::identity(1), {});
    double expect = 0.0;
    double count = 0.0;
    for (const auto& x : b.targets) {
      for (Index t = 1; t < x.rows(); ++t) {
        double pred, dpred;
        if (alpha == 0.0) {
          const double at = std::pow(a, double(t));
          pred = at * x(0, 0) + h1 * (1 - at) / (1 - a);
          dpred = (1 - at) / (1 - a);
        } else {
          pred = a * x(t - 1, 0) + h1;
          dpred = 1.0;
        }
        expect += 2.0 * (pred - x(t, 0)) * dpred;
        count += 1.0;
      }
    }
    EXPECT_NEAR(g.h1(0), expect / count, 1e-12);
  }
}

TEST(Gradient, BoundedAtEstimatedForcing) {
  // frozen model, alpha from the largest data Jacobian norm; the terminal
  // gradient should not grow with the window length
  IntegratorConfig ic;
  ic.dt = 0.01;
  ic.total_steps = 3000;
  ic.transient_steps = 1000;
  const TrajectoryDataset ds = make_dataset(Lorenz63{}, ic, {0.0, true, {}}, 27);
  std::mt19937_64 rng(28);
  ShPLRNNParams p = initialize_shplrnn(3, 30, false, rng);
  p.W1 *= 3.0;
  const ObservationModel obs = ObservationModel::identity(3);
  const JacobianBatch jb = data_jacobians(p, {ds.data});
  const double alpha = alpha_from_max_data_jacobian(jb);
  ASSERT_GT(alpha, 0.0);
  const GtfState gtf = GtfState::fixed(alpha);
  std::vector<double> norms;
  for (Index T : {10, 100, 1000}) norms.push_back(terminal_state_gradient(p, obs, gtf, ds.data.topRows(T)).norm());
  EXPECT_LT(norms[2] / norms[0], 10.0);
  EXPECT_LT(norms[1] / norms[0], 10.0);
}

TEST(PackParameters, RoundTrip) {
  std::mt19937_64 rng(29);
  const ShPLRNNParams p = random_model(3, 5, true, rng);
  ObservationModel obs = ObservationModel::from_matrix(random_matrix(4, 3, rng), true);
  const Vector v = pack_parameters(p, obs);
  EXPECT_EQ(v.size(), 3 + 15 + 15 + 3 + 5 + 12);
  ShPLRNNParams q = ShPLRNNParams::zeros(3, 5, true);
  ObservationModel qo = ObservationModel::from_matrix(Matrix::Identity(4, 3), true);
  unpack_parameters(v, q, qo);
  EXPECT_EQ(q.A, p.A);
  EXPECT_EQ(q.W1, p.W1);
  EXPECT_EQ(q.W2, p.W2);
  EXPECT_EQ(q.h1, p.h1);
  EXPECT_EQ(q.h2, p.h2);
  EXPECT_EQ(qo.B(), obs.B());
  EXPECT_EQ(pack_parameters(p, ObservationModel::identity(3)).size(), 3 + 15 + 15 + 3 + 5);
}

TEST(RAdam, ZeroGradientLeavesParameters) {
  RAdam opt(3);
  Vector x = Vector::LinSpaced(3, 1.0, 3.0);
  const Vector x0 = x;
  for (int k = 0; k < 10; ++k) EXPECT_TRUE(opt.step(x, Vector::Zero(3), 1e-2));
  EXPECT_EQ(x, x0);
  EXPECT_EQ(opt.first_moment(), Vector::Zero(3));
}

TEST(RAdam, ConstantGradientDecreasesMonotonically) {
  RAdam opt(1);
  Vector x = Vector::Constant(1, 5.0);
  double prev = x(0);
  for (int k = 0; k < 200; ++k) {
    opt.step(x, Vector::Constant(1, 1.0), 1e-2);
    EXPECT_LT(x(0), prev);
    prev = x(0);
  }
}

TEST(RAdam, NonFiniteGradientSkipped) {
  RAdam opt(2);
  Vector x = Vector::Ones(2);
  Vector g(2);
  g << 1.0, std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(opt.step(x, g, 0.1));
  EXPECT_EQ(opt.step_count(), 0);
  EXPECT_EQ(x, Vector::Ones(2));
}

// x0 = 1, gradient 2x, lr = 0.1; reference values from an independent
// implementation of the rectified update.
TEST(RAdam, ReferenceTraceDefaultBetas) {
  const double expected[] = {0.8,
                             0.6210526315789474,
                             0.46230335987570403,
                             0.32282963331003045,
                             0.32129683142110116,
                             0.3190911061586689,
                             0.3163661685468193,
                             0.313203960110723};
  RAdam opt(1);
  Vector x = Vector::Ones(1);
  for (double e : expected) {
    opt.step(x, 2.0 * x, 0.1);
    EXPECT_NEAR(x(0), e, 1e-14);
  }
}

TEST(RAdam, ReferenceTraceFastSecondMoment) {
  const double expected[] = {0.8, 0.6210526315789474, 0.46230335987570403, 0.32282963331003045, 0.3082837000092535};
  RAdamConfig cfg;
  cfg.beta2 = 0.9;
  RAdam opt(1, cfg);
  Vector x = Vector::Ones(1);
  for (double e : expected) {
    opt.step(x, 2.0 * x, 0.1);
    EXPECT_NEAR(x(0), e, 1e-14);
  }
}

TEST(LrSchedule, Examples) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 1000, 1e-3, 1e-6), 1e-3);
  EXPECT_NEAR(lr_schedule(1000, 1000, 1e-3, 1e-6), 1e-6, 1e-20);
  EXPECT_NEAR(lr_schedule(500, 1000, 1e-3, 1e-6), std::pow(10.0, -4.5), 1e-18);
  EXPECT_THROW(lr_schedule(0, 10, 1e-6, 1e-3), ContractError);
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  std::mt19937_64 rng(30);
  const ShPLRNNParams p = random_model(3, 5, false, rng);
  const TrajectoryDataset ds = make_trajectory(random_matrix(300, 3, rng), 0.1, "r");
  TrainingConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train(ds, p, ObservationModel::identity(3), cfg);
  EXPECT_EQ(r.status, TrainStatus::Completed);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.params.A, p.A);
  EXPECT_EQ(r.params.W1, p.W1);
  EXPECT_EQ(r.params.W2, p.W2);
}

TEST(Train, LinearTargetConverges) {
  // ramp x_{t+1} = x_t + 0.01, exactly A = 1, h1 = 0.01
  const Index T = 400;
  Matrix x(T, 1);
  x(0, 0) = 0.0;
  for (Index t = 1; t < T; ++t) x(t, 0) = x(t - 1, 0) + 0.01;
  const TrajectoryDataset ds = make_trajectory(x, 1.0, "linear");
  ShPLRNNParams p = ShPLRNNParams::zeros(1, 2);
  p.A(0) = 0.5;
  TrainingConfig cfg;
  cfg.epochs = 40;
  cfg.batches_per_epoch = 50;
  cfg.batch_size = 8;
  cfg.seq_len = 20;
  cfg.lr_start = 1e-2;
  cfg.lr_end = 1e-4;
  cfg.gtf = GtfState::fixed(0.0);
  TrainCallbacks cb;
  std::int64_t epochs_seen = 0;
  // with W2 = h2 = 0 the hidden layer is silent, so W1 receives no gradient
  cb.on_epoch_end = [&](std::int64_t, const ShPLRNNParams& q, const ObservationModel&, const GtfState&) {
    ++epochs_seen;
    EXPECT_EQ(q.W1.norm(), 0.0);
  };
  const TrainResult r = train(ds, p, ObservationModel::identity(1), cfg, cb);
  ASSERT_EQ(r.status, TrainStatus::Completed);
  ASSERT_EQ(r.log.size(), 2000u);
  EXPECT_EQ(epochs_seen, 40);
  EXPECT_LT(r.log.back().mse, 1e-6);
  EXPECT_NEAR(r.params.A(0), 1.0, 1e-3);
  EXPECT_NEAR(r.params.h1(0), 0.01, 1e-3);
}

TEST(Train, DeterministicLog) {
  IntegratorConfig ic;
  ic.dt = 0.01;
  ic.total_steps = 2000;
  ic.transient_steps = 500;
  const TrajectoryDataset ds = make_dataset(Lorenz63{}, ic, {0.05, true, {}}, 31);
  std::mt19937_64 rng(32);
  const ShPLRNNParams p = initialize_shplrnn(3, 20, true, rng);
  TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.batches_per_epoch = 10;
  cfg.seq_len = 50;
  cfg.seed = 5;
  cfg.gtf = GtfState::adaptive();
  const TrainResult a = train(ds, p, ObservationModel::identity(3), cfg);
  const TrainResult b = train(ds, p, ObservationModel::identity(3), cfg);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t k = 0; k < a.log.size(); ++k) {
    EXPECT_EQ(a.log[k].update, b.log[k].update);
    EXPECT_EQ(a.log[k].lr, b.log[k].lr);
    EXPECT_EQ(a.log[k].alpha, b.log[k].alpha);
    EXPECT_EQ(a.log[k].mse, b.log[k].mse);
    EXPECT_EQ(a.log[k].grad_norm, b.log[k].grad_norm);
  }
  EXPECT_EQ(a.params.W1, b.params.W1);
  EXPECT_EQ(a.diagnostics.size(), 6u);
  EXPECT_EQ(a.diagnostics.front().step, 4);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(a.log[k].alpha, 1.0);
}

TEST(Train, LossDecreasesOnLorenz) {
  IntegratorConfig ic;
  ic.dt = 0.01;
  ic.total_steps = 5000;
  ic.transient_steps = 1000;
  const TrajectoryDataset ds = make_dataset(Lorenz63{}, ic, {0.05, true, {}}, 33);
  std::mt19937_64 rng(34);
  TrainingConfig cfg;
  cfg.epochs = 20;
  cfg.batches_per_epoch = 20;
  cfg.seq_len = 100;
  cfg.lr_start = 5e-3;
  cfg.lr_end = 1e-4;
  cfg.gtf = GtfState::fixed(0.2);
  const TrainResult r = train(ds, initialize_shplrnn(3, 30, true, rng), ObservationModel::identity(3), cfg);
  ASSERT_EQ(r.status, TrainStatus::Completed);
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + long(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  std::vector<double> first, last;
  for (std::size_t k = 0; k < 20; ++k) first.push_back(r.log[k].mse);
  for (std::size_t k = r.log.size() - 20; k < r.log.size(); ++k) last.push_back(r.log[k].mse);
  EXPECT_LT(median(last), 0.5 * median(first));
}

TEST(Train, GradientNormGuardAborts) {
  std::mt19937_64 rng(35);
  const TrajectoryDataset ds = make_trajectory(random_matrix(300, 3, rng, 10.0), 0.1, "r");
  TrainingConfig cfg;
  cfg.epochs = 1;
  cfg.batches_per_epoch = 5;
  cfg.seq_len = 20;
  cfg.grad_norm_limit = 1e-9;
  const TrainResult r = train(ds, random_model(3, 5, false, rng), ObservationModel::identity(3), cfg);
  EXPECT_EQ(r.status, TrainStatus::AbortedGradientNorm);
  EXPECT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.optimizer_steps, 0);
}

TEST(Train, RepeatedNonFiniteAborts) {
  ShPLRNNParams p = ShPLRNNParams::zeros(1, 1);
  p.A(0) = 1e200;
  const TrajectoryDataset ds = make_trajectory(Matrix::Constant(100, 1, 1e200), 1.0, "huge");
  TrainingConfig cfg;
  cfg.epochs = 2;
  cfg.batches_per_epoch = 20;
  cfg.seq_len = 10;
  cfg.gtf = GtfState::fixed(0.0);
  const TrainResult r = train(ds, p, ObservationModel::identity(1), cfg);
  EXPECT_EQ(r.status, TrainStatus::AbortedNonFinite);
  EXPECT_EQ(r.skipped_updates, 11);
  EXPECT_EQ(r.log.size(), 11u);
}

TEST(Train, ConfigValidation) {
  TrainingConfig cfg;
  cfg.lr_end = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.seq_len = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.reg.lambda_reg = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.seq_len = 500;
  std::mt19937_64 rng(36);
  const TrajectoryDataset ds = make_trajectory(random_matrix(100, 3, rng), 0.1, "r");
  EXPECT_THROW(train(ds, random_model(3, 4, false, rng), ObservationModel::identity(3), cfg), ConfigError);
}
