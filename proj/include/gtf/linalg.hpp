#ifndef GTF_LINALG_HPP
#define GTF_LINALG_HPP

#include <gtf/common.hpp>

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace gtf::linalg {

struct PowerIterationOptions {
  int max_iterations = 200;
  double relative_tolerance = 1e-8;
};

namespace detail {

// Rayleigh-quotient power iteration on X^T X; returns sigma_max estimate.
inline double power_iterate(const Eigen::Ref<const Matrix>& x, Vector v,
                            const PowerIterationOptions& opts) {
  double sigma = 0.0;
  Vector xv(x.rows());
  for (int it = 0; it < opts.max_iterations; ++it) {
    xv.noalias() = x * v;
    const double next = xv.norm();
    if (next == 0.0) return 0.0;
    v.noalias() = x.transpose() * xv;
    const double vn = v.norm();
    if (vn == 0.0) return next;
    v /= vn;
    if (it > 0 && std::abs(next - sigma) <= opts.relative_tolerance * next) {
      sigma = next;
      break;
    }
    sigma = next;
  }
  return sigma;
}

}  // namespace detail

// Largest singular value by power iteration from the normalized all-ones
// vector. If that start vector lies in the null space of X^T X, the iteration
// is restarted from the unit vector of the largest column.
inline double spectral_norm(const Eigen::Ref<const Matrix>& x, const PowerIterationOptions& opts = {}) {
  if (x.size() == 0) return 0.0;
  const double fro = x.norm();
  if (fro == 0.0) return 0.0;
  Vector v = Vector::Ones(x.cols()) / std::sqrt(static_cast<double>(x.cols()));
  double sigma = detail::power_iterate(x, v, opts);
  if (sigma <= 1e-12 * fro) {
    Index col = 0;
    x.colwise().norm().maxCoeff(&col);
    v = Vector::Unit(x.cols(), col);
    sigma = detail::power_iterate(x, v, opts);
  }
  return sigma;
}

inline Vector singular_values(const Eigen::Ref<const Matrix>& x) {
  Eigen::JacobiSVD<Matrix> svd(x);
  return svd.singularValues();
}

inline double condition_number(const Eigen::Ref<const Matrix>& x) {
  const Vector s = singular_values(x);
  if (s.size() == 0) return std::numeric_limits<double>::infinity();
  const double smin = s(s.size() - 1);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

// Moore-Penrose pseudo-inverse via SVD with the usual rank cutoff.
inline Matrix pseudo_inverse(const Eigen::Ref<const Matrix>& x) {
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff = std::numeric_limits<double>::epsilon() *
                        static_cast<double>(std::max(x.rows(), x.cols())) * (s.size() ? s(0) : 0.0);
  Vector inv = Vector::Zero(s.size());
  for (Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

// log(exp(a) + exp(b) + ...) over a vector, stable for large magnitudes.
inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace gtf::linalg

#endif  // GTF_LINALG_HPP
