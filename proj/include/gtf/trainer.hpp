#ifndef GTF_TRAINER_HPP
#define GTF_TRAINER_HPP

#include <gtf/common.hpp>
#include <gtf/dataset.hpp>
#include <gtf/forcing.hpp>
#include <gtf/linalg.hpp>
#include <gtf/radam.hpp>
#include <gtf/shplrnn.hpp>

#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace gtf {

struct RegularizationConfig {
  double lambda_reg = 0.0;  // pulls A towards 1 and the remaining tensors towards 0
  double lambda_cn = 0.0;   // condition number of a trainable B
  double epsilon = 1e-8;

  void validate() const {
    require(lambda_reg >= 0.0 && lambda_cn >= 0.0, "regularization weights must be nonnegative");
    require(epsilon > 0.0, "regularization epsilon must be positive");
  }
};

struct TrainingConfig {
  std::int64_t epochs = 5000;
  std::int64_t batches_per_epoch = 50;
  Index batch_size = 16;
  Index seq_len = 200;
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  std::uint64_t seed = 0;
  GtfState gtf = GtfState::fixed(0.15);
  RegularizationConfig reg;
  RAdamConfig optimizer;
  // Off: B+ is held constant within an update and recomputed afterwards.
  bool differentiate_pinv = false;
  double grad_norm_limit = 1e6;
  int max_consecutive_nonfinite = 10;

  std::int64_t total_updates() const { return epochs * batches_per_epoch; }

  void validate() const {
    if (epochs < 0 || batches_per_epoch < 1) throw ConfigError("epochs must be >= 0 and batches_per_epoch >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (seq_len < 2) throw ConfigError("seq_len must be >= 2");
    if (!(lr_start > 0.0) || !(lr_end > 0.0) || lr_end > lr_start)
      throw ConfigError("learning rates must satisfy 0 < lr_end <= lr_start");
    if (!(grad_norm_limit > 0.0)) throw ConfigError("grad_norm_limit must be positive");
    try {
      gtf.validate();
      reg.validate();
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  }
};

// S contiguous windows of seq_len rows; windows never wrap around.
struct Batch {
  std::vector<Matrix> targets;  // seq_len x N each
  std::vector<Index> starts;

  Index size() const noexcept { return static_cast<Index>(targets.size()); }
  Index seq_len() const noexcept { return targets.empty() ? 0 : targets.front().rows(); }
};

inline Batch sample_batch(const TrajectoryDataset& ds, Index batch_size, Index seq_len, std::mt19937_64& rng) {
  if (seq_len < 2) throw ConfigError("seq_len must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (ds.length() < seq_len + 1) {
    throw ConfigError("dataset has " + std::to_string(ds.length()) + " rows, need at least seq_len + 1 = " +
                      std::to_string(seq_len + 1));
  }
  std::uniform_int_distribution<Index> pick(0, ds.length() - seq_len - 1);
  Batch b;
  b.targets.reserve(static_cast<std::size_t>(batch_size));
  b.starts.reserve(static_cast<std::size_t>(batch_size));
  for (Index s = 0; s < batch_size; ++s) {
    const Index start = pick(rng);
    b.starts.push_back(start);
    b.targets.push_back(ds.data.middleRows(start, seq_len));
  }
  return b;
}

// Everything the backward pass needs for one sequence. Columns are time.
struct SequenceTrace {
  Matrix teacher;      // M x T, z_hat_t = B+ x_t
  Matrix states;       // M x T, z_0 = z_hat_0 and z_{t+1} = F(z~_t)
  Matrix forced;       // M x (T-1), z~_t
  Matrix pre;          // L x (T-1), W2 z~_t
  Matrix predictions;  // N x (T-1), B z_t for t = 1..T-1
  std::vector<double> alphas;  // forcing applied to z_t, t = 0..T-2
};

struct ForwardTrace {
  std::vector<SequenceTrace> sequences;

  double mean_alpha() const {
    double sum = 0.0;
    std::size_t n = 0;
    bool constant = true;
    double first = 0.0;
    for (const auto& s : sequences) {
      for (double a : s.alphas) {
        if (n == 0) first = a;
        constant = constant && a == first;
        sum += a;
        ++n;
      }
    }
    if (n == 0) return 0.0;
    return constant ? first : sum / static_cast<double>(n);
  }
};

namespace detail {

inline void hidden_activation(const ShPLRNNParams& p, const Eigen::Ref<const Vector>& pre, Eigen::Ref<Vector> act) {
  for (Index l = 0; l < pre.size(); ++l) {
    double a = std::max(0.0, pre(l) + p.h2(l));
    if (p.clipped) a -= std::max(0.0, pre(l));
    act(l) = a;
  }
}

}  // namespace detail

inline SequenceTrace forward_sequence(const ShPLRNNParams& p, const ObservationModel& obs, const GtfState& gtf,
                                      const Eigen::Ref<const Matrix>& target) {
  const Index T = target.rows();
  const Index M = p.latent_dim();
  const Index L = p.hidden_dim();
  require(T >= 2, "forward: sequences need at least two time steps");
  require(target.cols() == obs.obs_dim(), "forward: target width does not match the observation model");
  require(obs.latent_dim() == M, "forward: observation model and latent dimension disagree");

  SequenceTrace tr;
  tr.teacher = invert_observations(obs, target).transpose();
  tr.states.resize(M, T);
  tr.forced.resize(M, T - 1);
  tr.pre.resize(L, T - 1);
  tr.alphas.resize(static_cast<std::size_t>(T - 1));
  tr.states.col(0) = tr.teacher.col(0);

  Vector act(L);
  for (Index t = 0; t + 1 < T; ++t) {
    const double a = forcing_at(gtf, t);
    tr.alphas[static_cast<std::size_t>(t)] = a;
    if (a == 0.0) {
      tr.forced.col(t) = tr.states.col(t);
    } else if (a == 1.0) {
      tr.forced.col(t) = tr.teacher.col(t);
    } else {
      tr.forced.col(t) = (1.0 - a) * tr.states.col(t) + a * tr.teacher.col(t);
    }
    tr.pre.col(t).noalias() = p.W2 * tr.forced.col(t);
    detail::hidden_activation(p, tr.pre.col(t), act);
    auto next = tr.states.col(t + 1);
    next = p.A.cwiseProduct(tr.forced.col(t)) + p.h1;
    next.noalias() += p.W1 * act;
    if (!next.allFinite()) {
      throw NumericError("non-finite latent state at step " + std::to_string(t + 1) + " of a training sequence");
    }
  }
  if (obs.identity_mode()) {
    tr.predictions = tr.states.rightCols(T - 1);
  } else {
    tr.predictions.noalias() = obs.B() * tr.states.rightCols(T - 1);
  }
  return tr;
}

inline ForwardTrace forward_forced(const ShPLRNNParams& p, const ObservationModel& obs, const GtfState& gtf,
                                   const Batch& batch) {
  ForwardTrace out;
  out.sequences.reserve(batch.targets.size());
  for (const auto& x : batch.targets) out.sequences.push_back(forward_sequence(p, obs, gtf, x));
  return out;
}

struct LossReport {
  double mse = 0.0;
  double l_reg = 0.0;
  double l_cn = 0.0;
  double total = 0.0;
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  double alpha_used = 0.0;
};

inline double manifold_regularizer(const ShPLRNNParams& p) {
  return (1.0 - p.A.array()).square().sum() + p.W1.squaredNorm() + p.W2.squaredNorm() + p.h1.squaredNorm() +
         p.h2.squaredNorm();
}

// (1 - s_max / (s_min + eps))^2 over the min(N, M) singular values of B.
inline double condition_regularizer(const Eigen::Ref<const Matrix>& B, double epsilon) {
  const Vector s = linalg::singular_values(B);
  const double r = s(0) / (s(s.size() - 1) + epsilon);
  return (1.0 - r) * (1.0 - r);
}

inline LossReport loss(const Batch& batch, const ForwardTrace& trace, const ShPLRNNParams& p,
                       const ObservationModel& obs, const RegularizationConfig& reg) {
  require(batch.targets.size() == trace.sequences.size(), "loss: batch and trace sizes differ");
  require(!batch.targets.empty(), "loss: empty batch");
  LossReport r;
  double sum = 0.0;
  double count = 0.0;
  for (std::size_t s = 0; s < batch.targets.size(); ++s) {
    const auto& x = batch.targets[s];
    const auto& pred = trace.sequences[s].predictions;
    require(pred.rows() == x.cols() && pred.cols() == x.rows() - 1, "loss: prediction shape mismatch");
    sum += (pred - x.bottomRows(x.rows() - 1).transpose()).squaredNorm();
    count += static_cast<double>(x.rows() - 1);
  }
  r.mse = sum / count;
  r.l_reg = manifold_regularizer(p);
  r.l_cn = obs.trainable() ? condition_regularizer(obs.B(), reg.epsilon) : 0.0;
  r.total = r.mse + reg.lambda_reg * r.l_reg + (obs.trainable() ? reg.lambda_cn * r.l_cn : 0.0);
  r.alpha_used = trace.mean_alpha();
  return r;
}

struct Gradients {
  Vector A;
  Matrix W1;
  Matrix W2;
  Vector h1;
  Vector h2;
  Matrix B;  // empty unless the observation model is trainable

  static Gradients zeros_like(const ShPLRNNParams& p, const ObservationModel& obs) {
    Gradients g;
    g.A = Vector::Zero(p.latent_dim());
    g.W1 = Matrix::Zero(p.W1.rows(), p.W1.cols());
    g.W2 = Matrix::Zero(p.W2.rows(), p.W2.cols());
    g.h1 = Vector::Zero(p.latent_dim());
    g.h2 = Vector::Zero(p.hidden_dim());
    if (obs.trainable()) g.B = Matrix::Zero(obs.obs_dim(), obs.latent_dim());
    return g;
  }

  Index size() const { return A.size() + W1.size() + W2.size() + h1.size() + h2.size() + B.size(); }

  Vector flatten() const {
    Vector v(size());
    Index o = 0;
    auto put = [&](const auto& x) {
      v.segment(o, x.size()) = x.reshaped();
      o += x.size();
    };
    put(A);
    put(W1);
    put(W2);
    put(h1);
    put(h2);
    put(B);
    return v;
  }

  double norm() const { return std::sqrt(A.squaredNorm() + W1.squaredNorm() + W2.squaredNorm() + h1.squaredNorm() +
                                         h2.squaredNorm() + B.squaredNorm()); }
  bool all_finite() const {
    return A.allFinite() && W1.allFinite() && W2.allFinite() && h1.allFinite() && h2.allFinite() && B.allFinite();
  }
};

// Layout shared by Gradients::flatten: A, W1, W2, h1, h2, then B if trainable.
inline Vector pack_parameters(const ShPLRNNParams& p, const ObservationModel& obs) {
  Gradients g;
  g.A = p.A;
  g.W1 = p.W1;
  g.W2 = p.W2;
  g.h1 = p.h1;
  g.h2 = p.h2;
  if (obs.trainable()) g.B = obs.B();
  return g.flatten();
}

inline void unpack_parameters(const Eigen::Ref<const Vector>& v, ShPLRNNParams& p, ObservationModel& obs) {
  Index o = 0;
  auto take = [&](auto& x) {
    x.reshaped() = v.segment(o, x.size());
    o += x.size();
  };
  take(p.A);
  take(p.W1);
  take(p.W2);
  take(p.h1);
  take(p.h2);
  if (obs.trainable()) {
    Matrix b(obs.obs_dim(), obs.latent_dim());
    take(b);
    obs.set_B(std::move(b));
  }
  require(o == v.size(), "unpack_parameters: vector length does not match the model");
}

namespace detail {

// Gradient w.r.t. B of a loss whose gradient w.r.t. P = B+ is G.
inline Matrix pinv_backward(const Matrix& B, const Matrix& P, const Matrix& G) {
  const Index n = B.rows();
  const Index m = B.cols();
  const Matrix In = Matrix::Identity(n, n);
  const Matrix Im = Matrix::Identity(m, m);
  return -P.transpose() * G * P.transpose() + (In - B * P) * G.transpose() * P * P.transpose() +
         P.transpose() * P * G.transpose() * (Im - P * B);
}

}  // namespace detail

// Reverse-mode gradient of loss().total through the forced, unrolled graph.
// The adjoint crossing z~_t -> z_t is scaled by (1 - alpha_t).
inline Gradients backward(const Batch& batch, const ForwardTrace& trace, const ShPLRNNParams& p,
                          const ObservationModel& obs, const RegularizationConfig& reg,
                          bool differentiate_pinv = false) {
  require(batch.targets.size() == trace.sequences.size() && !batch.targets.empty(), "backward: batch/trace mismatch");
  Gradients g = Gradients::zeros_like(p, obs);
  const Index M = p.latent_dim();
  const Index L = p.hidden_dim();
  const bool train_B = obs.trainable();
  const bool through_pinv = train_B && differentiate_pinv;

  double count = 0.0;
  for (const auto& x : batch.targets) count += static_cast<double>(x.rows() - 1);
  const double scale = 2.0 / count;

  Matrix G_pinv;
  if (through_pinv) G_pinv = Matrix::Zero(M, obs.obs_dim());

  Vector gz(M);
  Vector carry(M);
  Vector da(L);
  Vector act(L);
  for (std::size_t s = 0; s < batch.targets.size(); ++s) {
    const auto& x = batch.targets[s];
    const auto& tr = trace.sequences[s];
    const Index T = x.rows();
    // residual r_t = B z_t - x_t for t = 1..T-1, as columns
    const Matrix resid = tr.predictions - x.bottomRows(T - 1).transpose();
    const Matrix d_states = obs.identity_mode() ? Matrix(scale * resid) : Matrix(scale * obs.B().transpose() * resid);
    if (train_B) g.B.noalias() += scale * resid * tr.states.rightCols(T - 1).transpose();

    Matrix adj(M, T - 1);   // dL/dz_{t+1}, column t
    Matrix dpre(L, T - 1);  // dL/d(W2 z~_t)
    Matrix acts(L, T - 1);
    Matrix teacher_adj;
    if (through_pinv) teacher_adj = Matrix::Zero(M, T);
    carry.setZero();
    for (Index t = T - 2; t >= 0; --t) {
      gz = d_states.col(t) + carry;
      adj.col(t) = gz;
      detail::hidden_activation(p, tr.pre.col(t), act);
      acts.col(t) = act;
      da.noalias() = p.W1.transpose() * gz;
      for (Index l = 0; l < L; ++l) {
        const double pre = tr.pre(l, t);
        double d = (pre + p.h2(l)) > 0.0 ? da(l) : 0.0;
        g.h2(l) += d;
        if (p.clipped && pre > 0.0) d -= da(l);
        dpre(l, t) = d;
      }
      // adjoint of the forced state z~_t
      Vector gf = p.A.cwiseProduct(gz);
      gf.noalias() += p.W2.transpose() * dpre.col(t);
      const double a = tr.alphas[static_cast<std::size_t>(t)];
      if (through_pinv) {
        // z_0 is itself the teacher state, so its share flows to B+ as well
        teacher_adj.col(t) += (t == 0 ? 1.0 : a) * gf;
      }
      carry = (1.0 - a) * gf;
    }
    g.A += adj.cwiseProduct(tr.forced).rowwise().sum();
    g.h1 += adj.rowwise().sum();
    g.W1.noalias() += adj * acts.transpose();
    g.W2.noalias() += dpre * tr.forced.transpose();
    if (through_pinv) G_pinv.noalias() += teacher_adj * x;
  }

  if (reg.lambda_reg > 0.0) {
    g.A.array() += reg.lambda_reg * (-2.0) * (1.0 - p.A.array());
    g.W1 += 2.0 * reg.lambda_reg * p.W1;
    g.W2 += 2.0 * reg.lambda_reg * p.W2;
    g.h1 += 2.0 * reg.lambda_reg * p.h1;
    g.h2 += 2.0 * reg.lambda_reg * p.h2;
  }
  if (train_B) {
    if (through_pinv) g.B += detail::pinv_backward(obs.B(), obs.pinv(), G_pinv);
    if (reg.lambda_cn > 0.0) {
      Eigen::JacobiSVD<Matrix> svd(obs.B(), Eigen::ComputeThinU | Eigen::ComputeThinV);
      const Vector& sv = svd.singularValues();
      const Index k = sv.size() - 1;
      const double smin = sv(k) + reg.epsilon;
      const double r = sv(0) / smin;
      const Matrix d_max = svd.matrixU().col(0) * svd.matrixV().col(0).transpose();
      const Matrix d_min = svd.matrixU().col(k) * svd.matrixV().col(k).transpose();
      const Matrix dr = d_max / smin - (sv(0) / (smin * smin)) * d_min;
      g.B += reg.lambda_cn * (-2.0 * (1.0 - r)) * dr;
    }
  }
  return g;
}

// Gradient of the last-step squared error of one window w.r.t. its initial
// latent state, propagated through the forced recursion.
inline Vector terminal_state_gradient(const ShPLRNNParams& p, const ObservationModel& obs, const GtfState& gtf,
                                      const Eigen::Ref<const Matrix>& target) {
  const SequenceTrace tr = forward_sequence(p, obs, gtf, target);
  const Index T = target.rows();
  const Index L = p.hidden_dim();
  const Vector r = tr.predictions.col(T - 2) - target.row(T - 1).transpose();
  Vector g = obs.identity_mode() ? Vector(2.0 * r) : Vector(2.0 * obs.B().transpose() * r);
  Vector da(L);
  Vector dpre(L);
  for (Index t = T - 2; t >= 0; --t) {
    da.noalias() = p.W1.transpose() * g;
    for (Index l = 0; l < L; ++l) {
      const double pre = tr.pre(l, t);
      double d = (pre + p.h2(l)) > 0.0 ? da(l) : 0.0;
      if (p.clipped && pre > 0.0) d -= da(l);
      dpre(l) = d;
    }
    Vector gf = p.A.cwiseProduct(g);
    gf.noalias() += p.W2.transpose() * dpre;
    g = (1.0 - tr.alphas[static_cast<std::size_t>(t)]) * gf;
  }
  return g;
}

struct TrainingLogRow {
  std::int64_t update = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double alpha = 0.0;
  double mse = 0.0;
  double l_reg = 0.0;
  double l_cn = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct DiagnosticsRow {
  std::int64_t step = 0;
  double alpha = 0.0;
  double kappa_max = 0.0;
  double sigma_hat_max = 0.0;
};

enum class TrainStatus { Completed, AbortedNonFinite, AbortedGradientNorm };

inline const char* to_string(TrainStatus s) {
  switch (s) {
    case TrainStatus::Completed: return "completed";
    case TrainStatus::AbortedNonFinite: return "aborted_nonfinite";
    case TrainStatus::AbortedGradientNorm: return "aborted_gradient_norm";
  }
  return "unknown";
}

struct TrainResult {
  ShPLRNNParams params;
  ObservationModel obs;
  GtfState gtf;
  std::vector<TrainingLogRow> log;
  std::vector<DiagnosticsRow> diagnostics;  // adaptive mode only, one per re-estimate
  TrainStatus status = TrainStatus::Completed;
  std::string message;
  std::int64_t skipped_updates = 0;
  std::int64_t optimizer_steps = 0;
};

struct TrainCallbacks {
  // Called after every epoch with the epoch index (0-based).
  std::function<void(std::int64_t, const ShPLRNNParams&, const ObservationModel&, const GtfState&)> on_epoch_end;
};

inline TrainResult train(const TrajectoryDataset& ds, ShPLRNNParams init, ObservationModel obs,
                         const TrainingConfig& cfg, const TrainCallbacks& callbacks = {}) {
  cfg.validate();
  init.validate();
  if (ds.dim() != obs.obs_dim()) throw ConfigError("dataset dimension does not match the observation model");
  if (obs.latent_dim() != init.latent_dim()) throw ConfigError("observation model and model latent size differ");
  if (ds.length() < cfg.seq_len + 1) throw ConfigError("dataset is shorter than seq_len + 1");

  TrainResult res;
  res.params = std::move(init);
  res.obs = std::move(obs);
  res.gtf = cfg.gtf;
  if (res.gtf.mode == ForcingMode::Adaptive) res.gtf.anneal.step_count = 0;

  std::mt19937_64 rng(cfg.seed);
  Vector theta = pack_parameters(res.params, res.obs);
  RAdam opt(theta.size(), cfg.optimizer);
  const std::int64_t total = cfg.total_updates();
  const auto t_begin = std::chrono::steady_clock::now();
  int consecutive_bad = 0;
  std::int64_t update = 0;
  res.log.reserve(static_cast<std::size_t>(total));

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::int64_t b = 0; b < cfg.batches_per_epoch; ++b, ++update) {
      Batch batch = sample_batch(ds, cfg.batch_size, cfg.seq_len, rng);
      TrainingLogRow row;
      row.update = update;
      row.epoch = epoch;
      row.lr = lr_schedule(update, total, cfg.lr_start, cfg.lr_end);

      bool ok = true;
      LossReport rep;
      Gradients grads;
      try {
        if (res.gtf.mode == ForcingMode::Adaptive) {
          const bool estimate = (res.gtf.anneal.step_count + 1) % res.gtf.anneal.update_interval == 0;
          std::vector<Matrix> teacher;
          if (estimate) {
            teacher.reserve(batch.targets.size());
            for (const auto& x : batch.targets) teacher.push_back(invert_observations(res.obs, x));
          }
          res.gtf = anneal_update(res.gtf, estimate ? data_jacobians(res.params, teacher) : JacobianBatch{});
          if (estimate) {
            res.diagnostics.push_back({update, res.gtf.alpha, res.gtf.last_kappa_max, res.gtf.last_sigma_hat_max});
          }
        }
        const ForwardTrace trace = forward_forced(res.params, res.obs, res.gtf, batch);
        rep = loss(batch, trace, res.params, res.obs, cfg.reg);
        grads = backward(batch, trace, res.params, res.obs, cfg.reg, cfg.differentiate_pinv);
        rep.grad_norm = grads.norm();
        ok = std::isfinite(rep.total) && std::isfinite(rep.grad_norm);
      } catch (const NumericError&) {
        ok = false;
        rep.mse = rep.total = rep.grad_norm = std::numeric_limits<double>::quiet_NaN();
        rep.alpha_used = res.gtf.alpha;
      }
      row.alpha = rep.alpha_used;
      row.mse = rep.mse;
      row.l_reg = rep.l_reg;
      row.l_cn = rep.l_cn;
      row.grad_norm = rep.grad_norm;

      const auto finish_row = [&]() {
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_begin).count();
        res.log.push_back(row);
      };

      if (!ok) {
        ++res.skipped_updates;
        finish_row();
        if (++consecutive_bad > cfg.max_consecutive_nonfinite) {
          res.status = TrainStatus::AbortedNonFinite;
          res.message = "more than " + std::to_string(cfg.max_consecutive_nonfinite) +
                        " consecutive non-finite losses, last at update " + std::to_string(update);
          return res;
        }
        continue;
      }
      consecutive_bad = 0;
      if (rep.grad_norm > cfg.grad_norm_limit) {
        finish_row();
        res.status = TrainStatus::AbortedGradientNorm;
        res.message = "gradient norm " + std::to_string(rep.grad_norm) + " exceeded the limit at update " +
                      std::to_string(update);
        return res;
      }

      opt.step(theta, grads.flatten(), row.lr);
      ++res.optimizer_steps;
      try {
        unpack_parameters(theta, res.params, res.obs);
      } catch (const NumericError& e) {
        finish_row();
        res.status = TrainStatus::AbortedNonFinite;
        res.message = std::string("parameters became invalid: ") + e.what();
        return res;
      }
      finish_row();
    }
    if (callbacks.on_epoch_end) callbacks.on_epoch_end(epoch, res.params, res.obs, res.gtf);
  }
  return res;
}

}  // namespace gtf

#endif  // GTF_TRAINER_HPP
