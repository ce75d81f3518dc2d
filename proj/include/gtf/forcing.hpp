#ifndef GTF_FORCING_HPP
#define GTF_FORCING_HPP

#include <gtf/common.hpp>
#include <gtf/dataset.hpp>
#include <gtf/linalg.hpp>
#include <gtf/shplrnn.hpp>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace gtf {

enum class ForcingMode { Fixed, Adaptive, SparseTF };

// Approximations of the norm of the geometric mean of a Jacobian sequence.
enum class GeomeanMethod { ExpLog, ArithmeticMean, NormUpperBound };

inline const char* to_string(ForcingMode m) {
  switch (m) {
    case ForcingMode::Fixed: return "fixed";
    case ForcingMode::Adaptive: return "adaptive";
    case ForcingMode::SparseTF: return "sparse";
  }
  return "unknown";
}

inline const char* to_string(GeomeanMethod m) {
  switch (m) {
    case GeomeanMethod::ExpLog: return "explog";
    case GeomeanMethod::ArithmeticMean: return "arithmetic";
    case GeomeanMethod::NormUpperBound: return "upper_bound";
  }
  return "unknown";
}

struct AnnealSettings {
  double alpha0 = 1.0;
  double gamma = 0.999;
  std::int64_t update_interval = 5;
  std::int64_t step_count = 0;
};

struct GtfState {
  double alpha = 0.0;
  ForcingMode mode = ForcingMode::Fixed;
  std::int64_t tau = 1;  // SparseTF forcing interval
  AnnealSettings anneal;
  GeomeanMethod method = GeomeanMethod::ArithmeticMean;
  // diagnostics from the most recent estimate (adaptive mode)
  double last_kappa_max = std::numeric_limits<double>::quiet_NaN();
  double last_sigma_hat_max = std::numeric_limits<double>::quiet_NaN();
  std::int64_t explog_fallbacks = 0;

  static GtfState fixed(double alpha) {
    GtfState s;
    s.alpha = alpha;
    s.mode = ForcingMode::Fixed;
    s.validate();
    return s;
  }

  static GtfState adaptive(AnnealSettings anneal = {}, GeomeanMethod method = GeomeanMethod::ArithmeticMean) {
    GtfState s;
    s.mode = ForcingMode::Adaptive;
    s.anneal = anneal;
    s.alpha = anneal.alpha0;
    s.method = method;
    s.validate();
    return s;
  }

  static GtfState sparse(std::int64_t tau) {
    GtfState s;
    s.mode = ForcingMode::SparseTF;
    s.tau = tau;
    s.alpha = 1.0;
    s.validate();
    return s;
  }

  void validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    require(tau >= 1, "sparse forcing interval must be >= 1");
    require(anneal.update_interval >= 1, "anneal update interval must be >= 1");
    require(anneal.gamma >= 0.0 && anneal.gamma <= 1.0, "anneal gamma must lie in [0, 1]");
  }
};

// Sparse teacher forcing replaces the state at every tau-th step.
inline bool sparse_tf_schedule(std::int64_t tau, std::int64_t t) {
  require(tau >= 1, "sparse_tf_schedule: tau must be >= 1");
  return t % tau == 0;
}

// Forcing strength applied to the state with time index t (0-based).
inline double forcing_at(const GtfState& s, std::int64_t t) {
  if (s.mode == ForcingMode::SparseTF) return sparse_tf_schedule(s.tau, t) ? 1.0 : 0.0;
  return s.alpha;
}

inline Vector force_state(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& z_bar, double alpha) {
  require(z.size() == z_bar.size(), "force_state: dimension mismatch");
  require(alpha >= 0.0 && alpha <= 1.0, "force_state: alpha must lie in [0, 1]");
  return (1.0 - alpha) * z + alpha * z_bar;
}

// Per-sequence Jacobians J_t evaluated at data-inferred states z_hat_{t-1},
// t = 2..T (T - 1 matrices per sequence).
struct JacobianBatch {
  std::vector<std::vector<Matrix>> jacobians;

  std::size_t sequences() const noexcept { return jacobians.size(); }
  bool empty() const noexcept {
    return std::all_of(jacobians.begin(), jacobians.end(), [](const auto& s) { return s.empty(); });
  }
};

// Jacobians at the teacher states of each latent sequence (rows = time).
inline JacobianBatch data_jacobians(const ShPLRNNParams& p, const std::vector<Matrix>& teacher_latents) {
  JacobianBatch batch;
  batch.jacobians.reserve(teacher_latents.size());
  Vector hidden(p.hidden_dim());
  Vector z(p.latent_dim());
  for (const auto& seq : teacher_latents) {
    require(seq.cols() == p.latent_dim(), "data_jacobians: teacher sequence has wrong width");
    std::vector<Matrix> js;
    js.reserve(static_cast<std::size_t>(std::max<Index>(0, seq.rows() - 1)));
    for (Index t = 0; t + 1 < seq.rows(); ++t) {
      Matrix J(p.latent_dim(), p.latent_dim());
      z = seq.row(t).transpose();
      jacobian_into(p, z, J, hidden);
      js.push_back(std::move(J));
    }
    batch.jacobians.push_back(std::move(js));
  }
  return batch;
}

inline double alpha_from_sigma(double sigma) {
  if (!(sigma > 1.0)) return 0.0;
  return std::max(0.0, 1.0 - 1.0 / sigma);
}

// Upper bound ||A|| + ||W1|| ||W2|| on the Jacobian norm over all regions.
inline double jacobian_norm_upper_bound(const ShPLRNNParams& p) {
  return p.A.cwiseAbs().maxCoeff() + linalg::spectral_norm(p.W1) * linalg::spectral_norm(p.W2);
}

inline double alpha_from_norm_bound(const ShPLRNNParams& p) { return alpha_from_sigma(jacobian_norm_upper_bound(p)); }

inline double max_data_jacobian_norm(const JacobianBatch& batch) {
  require(!batch.empty(), "Jacobian batch is empty");
  double sigma = 0.0;
  for (const auto& seq : batch.jacobians)
    for (const auto& J : seq) sigma = std::max(sigma, linalg::spectral_norm(J));
  return sigma;
}

inline double alpha_from_max_data_jacobian(const JacobianBatch& batch) {
  return alpha_from_sigma(max_data_jacobian_norm(batch));
}

namespace detail {

// Principal logarithm exists (and is real) only if no eigenvalue lies on the
// closed negative real axis.
inline bool has_principal_log(const Matrix& J) {
  Eigen::EigenSolver<Matrix> es(J, false);
  const auto& ev = es.eigenvalues();
  const double scale = std::max(1.0, J.cwiseAbs().maxCoeff());
  for (Index i = 0; i < ev.size(); ++i) {
    const double re = ev(i).real();
    const double im = ev(i).imag();
    if (std::abs(im) <= 1e-12 * scale && re <= 1e-12 * scale) return false;
  }
  return true;
}

inline double arithmetic_mean_norm(const std::vector<Matrix>& seq) {
  Matrix mean = Matrix::Zero(seq.front().rows(), seq.front().cols());
  for (const auto& J : seq) mean += J;
  mean /= static_cast<double>(seq.size());
  return linalg::spectral_norm(mean);
}

}  // namespace detail

struct GeomeanResult {
  double kappa = 0.0;
  bool fell_back = false;  // ExpLog replaced by ArithmeticMean
};

// Norm estimate of the (T-1)-th root of the Jacobian product of one sequence.
inline GeomeanResult geometric_mean_norm(const std::vector<Matrix>& seq, GeomeanMethod method) {
  require(!seq.empty(), "geometric_mean_norm needs at least one Jacobian (T >= 2)");
  const double count = static_cast<double>(seq.size());
  switch (method) {
    case GeomeanMethod::ArithmeticMean:
      return {detail::arithmetic_mean_norm(seq), false};
    case GeomeanMethod::NormUpperBound: {
      double log_sum = 0.0;
      for (const auto& J : seq) {
        const double s = linalg::spectral_norm(J);
        if (s == 0.0) return {0.0, false};
        log_sum += std::log(s);
      }
      return {std::exp(log_sum / count), false};
    }
    case GeomeanMethod::ExpLog: {
      Matrix log_sum = Matrix::Zero(seq.front().rows(), seq.front().cols());
      for (const auto& J : seq) {
        if (!detail::has_principal_log(J)) return {detail::arithmetic_mean_norm(seq), true};
        const Matrix L = J.log();
        if (!L.allFinite()) return {detail::arithmetic_mean_norm(seq), true};
        log_sum += L;
      }
      const Matrix G = (log_sum / count).exp();
      return {linalg::spectral_norm(G), false};
    }
  }
  return {};
}

struct GeomeanBatchResult {
  std::vector<double> kappa;  // one per sequence
  std::int64_t fallbacks = 0;

  double max() const { return kappa.empty() ? 0.0 : *std::max_element(kappa.begin(), kappa.end()); }
};

inline GeomeanBatchResult geometric_mean_norm(const JacobianBatch& batch, GeomeanMethod method) {
  GeomeanBatchResult out;
  out.kappa.reserve(batch.sequences());
  for (const auto& seq : batch.jacobians) {
    if (seq.empty()) continue;
    const auto r = geometric_mean_norm(seq, method);
    out.kappa.push_back(r.kappa);
    out.fallbacks += r.fell_back ? 1 : 0;
  }
  return out;
}

// alpha = max(0, max_p (1 - 1/kappa_p)).
inline double alpha_from_kappas(const std::vector<double>& kappas) {
  double alpha = 0.0;
  for (double k : kappas) alpha = std::max(alpha, alpha_from_sigma(k));
  return alpha;
}

inline double alpha_from_geomean(const JacobianBatch& batch, GeomeanMethod method) {
  require(!batch.empty(), "alpha_from_geomean: empty batch");
  return alpha_from_kappas(geometric_mean_norm(batch, method).kappa);
}

// One call per optimizer step, counted from 1. Every update_interval-th call
// re-estimates alpha from the batch, so the first interval-1 steps keep alpha0; increases are taken immediately, decreases are
// smoothed by an exponential moving average with rate gamma.
inline GtfState anneal_update(GtfState state, const JacobianBatch& batch, bool record_sigma_hat = true) {
  require(state.mode == ForcingMode::Adaptive, "anneal_update requires adaptive forcing");
  const std::int64_t n = ++state.anneal.step_count;
  if (n % state.anneal.update_interval != 0) return state;
  const auto est = geometric_mean_norm(batch, state.method);
  state.explog_fallbacks += est.fallbacks;
  const double kappa = est.max();
  const double alpha = alpha_from_sigma(kappa);
  state.last_kappa_max = kappa;
  if (record_sigma_hat) state.last_sigma_hat_max = max_data_jacobian_norm(batch);
  if (alpha > state.alpha) {
    state.alpha = alpha;
  } else {
    state.alpha = (1.0 - state.anneal.gamma) * alpha + state.anneal.gamma * state.alpha;
  }
  return state;
}

// log10 || (1-alpha)^t prod_k J~_k ||_2 for t = 1..t_max along a forced
// trajectory started at the data-inferred state of row `start`. The product
// is carried as exp(log_scale) * Q with Q renormalized every step.
inline std::vector<double> jacobian_product_norm_series(const ShPLRNNParams& p, const ObservationModel& obs,
                                                        const TrajectoryDataset& data, double alpha, Index t_max,
                                                        Index start = 0) {
  require(t_max >= 1, "jacobian_product_norm_series: t_max must be >= 1");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  require(start >= 0 && start + t_max <= data.length(), "dataset too short for the requested series length");
  const Index m = p.latent_dim();
  const Matrix teacher = invert_observations(obs, data.data.middleRows(start, t_max));

  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(t_max));
  if (alpha == 1.0) {
    out.assign(static_cast<std::size_t>(t_max), -std::numeric_limits<double>::infinity());
    return out;
  }
  const double log_decay = std::log(1.0 - alpha);
  Matrix Q = Matrix::Identity(m, m);
  Matrix J(m, m);
  Matrix tmp(m, m);
  Vector hidden(p.hidden_dim());
  Vector z = teacher.row(0).transpose();
  Vector forced(m);
  Vector next(m);
  double log_scale = 0.0;
  for (Index t = 0; t < t_max; ++t) {
    forced = (1.0 - alpha) * z + alpha * teacher.row(t).transpose();
    jacobian_into(p, forced, J, hidden);
    tmp.noalias() = J * Q;
    const double f = tmp.norm();
    if (f == 0.0) {
      out.resize(static_cast<std::size_t>(t_max), -std::numeric_limits<double>::infinity());
      return out;
    }
    Q = tmp / f;
    log_scale += std::log(f) + log_decay;
    out.push_back((log_scale + std::log(linalg::singular_values(Q)(0))) / std::log(10.0));
    step_into(p, forced, next, hidden);
    z.swap(next);
  }
  return out;
}

// ||[Ja, Jb]||_F / (sqrt(2) ||Ja||_F ||Jb||_F); nullopt if either norm is zero.
inline std::optional<double> commutator_ratio(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return (a * b - b * a).norm() / (std::sqrt(2.0) * na * nb);
}

struct CommutatorHistogram {
  std::vector<double> edges;  // bins + 1 edges over [0, 1]
  std::vector<std::uint64_t> counts;
  std::vector<double> ratios;
  std::uint64_t skipped = 0;
};

// Ratios for all ordered pairs when their count is at most max_pairs,
// otherwise for max_pairs pairs drawn uniformly.
inline CommutatorHistogram commutator_diagnostic(const std::vector<Matrix>& jacobians, std::size_t bins = 20,
                                                 std::size_t max_pairs = 100000, std::uint64_t seed = 0) {
  require(jacobians.size() >= 2, "commutator_diagnostic needs at least two Jacobians");
  require(bins >= 1, "commutator_diagnostic needs at least one bin");
  CommutatorHistogram h;
  h.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(static_cast<double>(b) / static_cast<double>(bins));
  auto add = [&](std::size_t i, std::size_t j) {
    const auto r = commutator_ratio(jacobians[i], jacobians[j]);
    if (!r) {
      ++h.skipped;
      return;
    }
    h.ratios.push_back(*r);
    const auto bin = std::min(bins - 1, static_cast<std::size_t>(*r * static_cast<double>(bins)));
    ++h.counts[bin];
  };
  const std::size_t n = jacobians.size();
  if (n * (n - 1) <= max_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) add(i, j);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t k = 0; k < max_pairs; ++k) {
      const std::size_t i = pick(rng);
      std::size_t j = pick(rng);
      while (j == i) j = pick(rng);
      add(i, j);
    }
  }
  return h;
}

struct JacobianSpectrumStats {
  double sigma_max_tilde = 0.0;
  double lambda_min_tilde = 0.0;
  double gamma_tilde = 0.0;
};

// Largest spectral norm and smallest eigenvalue modulus over a Jacobian set.
inline JacobianSpectrumStats spectrum_stats(const std::vector<Matrix>& jacobians) {
  require(!jacobians.empty(), "spectrum_stats needs at least one Jacobian");
  JacobianSpectrumStats s;
  s.lambda_min_tilde = std::numeric_limits<double>::infinity();
  for (const auto& J : jacobians) {
    s.sigma_max_tilde = std::max(s.sigma_max_tilde, linalg::singular_values(J)(0));
    Eigen::EigenSolver<Matrix> es(J, false);
    s.lambda_min_tilde = std::min(s.lambda_min_tilde, es.eigenvalues().cwiseAbs().minCoeff());
  }
  s.gamma_tilde = s.sigma_max_tilde > 0.0 ? s.lambda_min_tilde / s.sigma_max_tilde : 0.0;
  return s;
}

}  // namespace gtf

#endif  // GTF_FORCING_HPP
