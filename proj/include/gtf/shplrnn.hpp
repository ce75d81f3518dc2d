#ifndef GTF_SHPLRNN_HPP
#define GTF_SHPLRNN_HPP

#include <gtf/common.hpp>
#include <gtf/linalg.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gtf {

// z' = A z + W1 phi(W2 z + h2) + h1 with diagonal A and ReLU phi. The clipped
// variant subtracts phi(W2 z) inside the bracket, which bounds every orbit
// whenever max|A_i| < 1.
struct ShPLRNNParams {
  Vector A;   // diagonal of the M x M matrix A
  Matrix W1;  // M x L
  Matrix W2;  // L x M
  Vector h1;  // M
  Vector h2;  // L
  bool clipped = false;

  Index latent_dim() const noexcept { return A.size(); }
  Index hidden_dim() const noexcept { return h2.size(); }

  static ShPLRNNParams zeros(Index m, Index l, bool clipped = false) {
    return {Vector::Zero(m), Matrix::Zero(m, l), Matrix::Zero(l, m), Vector::Zero(m), Vector::Zero(l), clipped};
  }

  void validate() const {
    const Index m = A.size();
    const Index l = h2.size();
    require(m >= 1 && l >= 1, "shPLRNN needs M >= 1 and L >= 1");
    require(W1.rows() == m && W1.cols() == l, "W1 must be M x L");
    require(W2.rows() == l && W2.cols() == m, "W2 must be L x M");
    require(h1.size() == m, "h1 must have length M");
    if (!(A.allFinite() && W1.allFinite() && W2.allFinite() && h1.allFinite() && h2.allFinite())) {
      throw NumericError("shPLRNN parameters contain non-finite entries");
    }
  }

  // Orbit boundedness of the clipped map requires max|A_i| < 1.
  bool satisfies_clipping_bound() const { return A.cwiseAbs().maxCoeff() < 1.0; }

  Index parameter_count() const { return A.size() + W1.size() + W2.size() + h1.size() + h2.size(); }
};

// Initialization used by the trainer: A_i ~ U(0.5, 0.9), W1 ~ N(0, 1/sqrt(L)),
// W2 ~ N(0, 1/sqrt(M)) (standard deviations), zero biases.
inline ShPLRNNParams initialize_shplrnn(Index m, Index l, bool clipped, std::mt19937_64& rng) {
  ShPLRNNParams p = ShPLRNNParams::zeros(m, l, clipped);
  std::uniform_real_distribution<double> uni(0.5, 0.9);
  std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(static_cast<double>(l)));
  std::normal_distribution<double> n2(0.0, 1.0 / std::sqrt(static_cast<double>(m)));
  for (Index i = 0; i < m; ++i) p.A(i) = uni(rng);
  for (Index c = 0; c < l; ++c)
    for (Index r = 0; r < m; ++r) p.W1(r, c) = n1(rng);
  for (Index c = 0; c < m; ++c)
    for (Index r = 0; r < l; ++r) p.W2(r, c) = n2(rng);
  return p;
}

struct LatentState {
  Vector z;
  std::int64_t t = 0;
};

// Activation pattern of one linear subregion. `active[l]` is the indicator of
// (W2 z + h2)_l > 0; for the clipped model `clip_active[l]` is the indicator of
// (W2 z)_l > 0. The effective Jacobian diagonal is active - clip_active.
struct RegionSignature {
  std::vector<std::uint8_t> active;
  std::vector<std::uint8_t> clip_active;

  friend bool operator==(const RegionSignature&, const RegionSignature&) = default;
  friend auto operator<=>(const RegionSignature&, const RegionSignature&) = default;

  Vector effective_diagonal() const {
    Vector d(static_cast<Index>(active.size()));
    for (std::size_t l = 0; l < active.size(); ++l) {
      d(static_cast<Index>(l)) = static_cast<double>(active[l]) - (clip_active.empty() ? 0.0 : clip_active[l]);
    }
    return d;
  }
};

struct JacobianMatrix {
  Matrix J;
  RegionSignature signature;
};

// ReLU derivative at exactly zero is taken as 0: indicators use strict '>'.
inline RegionSignature region_of(const ShPLRNNParams& p, const Eigen::Ref<const Vector>& z) {
  const Vector pre = p.W2 * z;
  RegionSignature sig;
  sig.active.resize(static_cast<std::size_t>(p.hidden_dim()));
  for (Index l = 0; l < p.hidden_dim(); ++l) sig.active[static_cast<std::size_t>(l)] = (pre(l) + p.h2(l)) > 0.0;
  if (p.clipped) {
    sig.clip_active.resize(sig.active.size());
    for (Index l = 0; l < p.hidden_dim(); ++l) sig.clip_active[static_cast<std::size_t>(l)] = pre(l) > 0.0;
  }
  return sig;
}

// Allocation-free step for hot loops; `hidden` must have length L.
inline void step_into(const ShPLRNNParams& p, const Eigen::Ref<const Vector>& z, Eigen::Ref<Vector> out,
                      Eigen::Ref<Vector> hidden) {
  hidden.noalias() = p.W2 * z;
  if (p.clipped) {
    for (Index l = 0; l < hidden.size(); ++l) {
      const double pre = hidden(l);
      hidden(l) = std::max(0.0, pre + p.h2(l)) - std::max(0.0, pre);
    }
  } else {
    for (Index l = 0; l < hidden.size(); ++l) hidden(l) = std::max(0.0, hidden(l) + p.h2(l));
  }
  out = p.A.cwiseProduct(z) + p.h1;
  out.noalias() += p.W1 * hidden;
}

inline Vector step(const ShPLRNNParams& p, const Eigen::Ref<const Vector>& z) {
  require(z.size() == p.latent_dim(), "step: state has wrong dimension");
  Vector out(p.latent_dim());
  Vector hidden(p.hidden_dim());
  step_into(p, z, out, hidden);
  for (Index i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out(i))) throw NumericError("step produced a non-finite value in unit " + std::to_string(i));
  }
  return out;
}

inline LatentState step(const ShPLRNNParams& p, const LatentState& s) { return {step(p, s.z), s.t + 1}; }

inline Matrix reconstruct_jacobian(const ShPLRNNParams& p, const RegionSignature& sig) {
  Matrix J = p.W1 * sig.effective_diagonal().asDiagonal() * p.W2;
  J.diagonal() += p.A;
  return J;
}

inline void jacobian_into(const ShPLRNNParams& p, const Eigen::Ref<const Vector>& z, Eigen::Ref<Matrix> J,
                          Eigen::Ref<Vector> hidden) {
  hidden.noalias() = p.W2 * z;
  for (Index l = 0; l < hidden.size(); ++l) {
    const double pre = hidden(l);
    double d = (pre + p.h2(l)) > 0.0 ? 1.0 : 0.0;
    if (p.clipped && pre > 0.0) d -= 1.0;
    hidden(l) = d;
  }
  J.noalias() = p.W1 * hidden.asDiagonal() * p.W2;
  J.diagonal() += p.A;
}

inline JacobianMatrix jacobian(const ShPLRNNParams& p, const Eigen::Ref<const Vector>& z) {
  require(z.size() == p.latent_dim(), "jacobian: state has wrong dimension");
  JacobianMatrix out;
  out.signature = region_of(p, z);
  out.J = reconstruct_jacobian(p, out.signature);
  return out;
}

// Linear observation model x = B z with a cached pseudo-inverse for z = B+ x.
class ObservationModel {
 public:
  static constexpr double kMaxCondition = 1e8;

  static ObservationModel identity(Index n) {
    ObservationModel obs;
    obs.B_ = Matrix::Identity(n, n);
    obs.B_pinv_ = obs.B_;
    obs.identity_mode_ = true;
    obs.trainable_ = false;
    obs.condition_ = 1.0;
    return obs;
  }

  static ObservationModel from_matrix(Matrix b, bool trainable) {
    ObservationModel obs;
    obs.B_ = std::move(b);
    obs.trainable_ = trainable;
    obs.identity_mode_ = false;
    obs.refresh();
    return obs;
  }

  // N x M identity padded with zeros (first min(N, M) latent units observed).
  static ObservationModel padded_identity(Index n, Index m, bool trainable) {
    return from_matrix(Matrix::Identity(n, m), trainable);
  }

  const Matrix& B() const noexcept { return B_; }
  const Matrix& pinv() const noexcept { return B_pinv_; }
  bool trainable() const noexcept { return trainable_; }
  bool identity_mode() const noexcept { return identity_mode_; }
  double condition_number() const noexcept { return condition_; }
  Index obs_dim() const noexcept { return B_.rows(); }
  Index latent_dim() const noexcept { return B_.cols(); }

  // Must be called after every change to B.
  void set_B(Matrix b) {
    require(!identity_mode_, "identity observation model is fixed");
    require(b.rows() == B_.rows() && b.cols() == B_.cols(), "set_B: shape mismatch");
    B_ = std::move(b);
    refresh();
  }

  // Conditioning is checked lazily so that a trainable B may temporarily
  // become ill-conditioned; inversion then fails with ConditioningError.
  void refresh() {
    if (!B_.allFinite()) throw NumericError("observation matrix contains non-finite entries");
    condition_ = linalg::condition_number(B_);
    B_pinv_ = linalg::pseudo_inverse(B_);
  }

  void check_invertible() const {
    if (!(condition_ < kMaxCondition)) {
      throw ConditioningError("observation matrix is ill-conditioned", condition_);
    }
  }

 private:
  Matrix B_;
  Matrix B_pinv_;
  bool trainable_ = false;
  bool identity_mode_ = false;
  double condition_ = 1.0;
};

inline Vector observe(const ObservationModel& obs, const Eigen::Ref<const Vector>& z) {
  require(z.size() == obs.latent_dim(), "observe: latent state has wrong dimension");
  if (obs.identity_mode()) return z;
  return obs.B() * z;
}

inline Vector invert_observation(const ObservationModel& obs, const Eigen::Ref<const Vector>& x) {
  require(x.size() == obs.obs_dim(), "invert_observation: observation has wrong dimension");
  if (obs.identity_mode()) return x;
  obs.check_invertible();
  return obs.pinv() * x;
}

// Row-wise inversion of a T x N observation block into T x M latent states.
inline Matrix invert_observations(const ObservationModel& obs, const Eigen::Ref<const Matrix>& x) {
  require(x.cols() == obs.obs_dim(), "invert_observations: observation block has wrong width");
  if (obs.identity_mode()) return x;
  obs.check_invertible();
  return x * obs.pinv().transpose();
}

// Free-running orbit from z0: row 0 is observe(z0), row s is observe(F^s(z0)).
inline Matrix free_run_latent(const ShPLRNNParams& p, const Eigen::Ref<const Vector>& z0, Index steps) {
  require(steps >= 1, "free_run: steps must be positive");
  require(z0.size() == p.latent_dim(), "free_run: initial state has wrong dimension");
  Matrix out(steps, p.latent_dim());
  Vector z = z0;
  Vector next(p.latent_dim());
  Vector hidden(p.hidden_dim());
  out.row(0) = z.transpose();
  for (Index s = 1; s < steps; ++s) {
    step_into(p, z, next, hidden);
    const double norm = next.norm();
    if (!(norm <= 1e12)) throw DivergenceError("free run diverged", s);
    z.swap(next);
    out.row(s) = z.transpose();
  }
  return out;
}

inline Matrix free_run(const ShPLRNNParams& p, const ObservationModel& obs, const Eigen::Ref<const Vector>& z0,
                       Index steps) {
  Matrix latent = free_run_latent(p, z0, steps);
  if (obs.identity_mode()) return latent;
  return latent * obs.B().transpose();
}

// Supremum bound on the l2 norm of every clipped-model orbit (plus the
// initial-condition term ||A||^(t) ||z0|| <= ||z0||).
inline double clipped_orbit_bound(const ShPLRNNParams& p) {
  const double a = p.A.cwiseAbs().maxCoeff();
  const double hmax = p.h2.cwiseAbs().maxCoeff();
  const double w1 = linalg::spectral_norm(p.W1);
  return (std::sqrt(static_cast<double>(p.hidden_dim())) * hmax * w1 + p.h1.norm()) / (1.0 - a);
}

// ---------------------------------------------------------------------------
// dendPLRNN: z' = A z + W sum_b alpha_b phi(z - h_b) + h0.

struct DendBasis {
  double slope = 1.0;
  Vector threshold;
};

struct DendPLRNNParams {
  Vector A;
  Matrix W;  // zero diagonal
  Vector h0;
  std::vector<DendBasis> bases;

  Index latent_dim() const noexcept { return A.size(); }

  void validate() const {
    const Index m = A.size();
    require(m >= 1, "dendPLRNN needs M >= 1");
    require(W.rows() == m && W.cols() == m, "W must be M x M");
    require(W.diagonal().isZero(0.0), "dendPLRNN W must have zero diagonal");
    require(h0.size() == m, "h0 must have length M");
    require(!bases.empty(), "dendPLRNN needs at least one basis");
    for (const auto& b : bases) require(b.threshold.size() == m, "basis threshold must have length M");
  }
};

inline Vector dend_step(const DendPLRNNParams& d, const Eigen::Ref<const Vector>& z) {
  Vector act = Vector::Zero(d.latent_dim());
  for (const auto& b : d.bases) act += b.slope * (z - b.threshold).cwiseMax(0.0);
  return d.A.cwiseProduct(z) + d.W * act + d.h0;
}

// Exact rewrite as an unclipped shPLRNN with L = M * B.
inline ShPLRNNParams dend_to_shallow(const DendPLRNNParams& d) {
  d.validate();
  const Index m = d.latent_dim();
  const auto nb = static_cast<Index>(d.bases.size());
  ShPLRNNParams p = ShPLRNNParams::zeros(m, m * nb, false);
  p.A = d.A;
  p.h1 = d.h0;
  for (Index b = 0; b < nb; ++b) {
    const auto& basis = d.bases[static_cast<std::size_t>(b)];
    p.W1.middleCols(b * m, m) = d.W * basis.slope;
    p.W2.middleRows(b * m, m) = Matrix::Identity(m, m);
    p.h2.segment(b * m, m) = -basis.threshold;
  }
  return p;
}

// Within one region the map is affine: z' = W_region z + offset, where
// W_region = A + W1 D W2 and offset = W1 D_active h2 + h1.
struct RegionAffineMap {
  Matrix W;
  Vector offset;
};

inline RegionAffineMap shallow_to_dend_form(const ShPLRNNParams& p, const RegionSignature& sig) {
  require(static_cast<Index>(sig.active.size()) == p.hidden_dim(), "region signature has wrong length");
  require(!p.clipped || sig.clip_active.size() == sig.active.size(),
          "clipped model needs both activation patterns");
  RegionAffineMap out;
  out.W = reconstruct_jacobian(p, sig);
  Vector active(p.hidden_dim());
  for (Index l = 0; l < p.hidden_dim(); ++l) active(l) = sig.active[static_cast<std::size_t>(l)];
  out.offset = p.W1 * active.cwiseProduct(p.h2) + p.h1;
  return out;
}

}  // namespace gtf

#endif  // GTF_SHPLRNN_HPP
