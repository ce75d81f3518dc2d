#ifndef GTF_SIGNAL_HPP
#define GTF_SIGNAL_HPP

#include <gtf/common.hpp>

#include <cmath>

namespace gtf {

// Normalized Gaussian kernel of length window (odd), centered.
inline Vector gaussian_kernel(double sigma, Index window) {
  require(sigma > 0.0, "gaussian_kernel: sigma must be positive");
  require(window >= 1 && window % 2 == 1, "gaussian_kernel: window must be odd");
  const Index r = window / 2;
  Vector k(window);
  for (Index i = -r; i <= r; ++i) k(i + r) = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  return k / k.sum();
}

// Default window 8 sigma + 1, rounded to the nearest odd integer.
inline Index default_gaussian_window(double sigma) {
  const auto r = static_cast<Index>(std::llround(4.0 * sigma));
  return 2 * r + 1;
}

// Convolution with boundary mode "reflect": (d c b a | a b c d | d c b a).
inline Vector gaussian_filter(const Eigen::Ref<const Vector>& x, double sigma, Index window) {
  const Index n = x.size();
  require(n >= 1, "gaussian_filter: empty series");
  const Index r = window / 2;
  require(window <= n, "gaussian_filter: window (" + std::to_string(window) + ") longer than the series (" +
                           std::to_string(n) + ")");
  const Vector k = gaussian_kernel(sigma, window);
  auto reflect = [n](Index i) {
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - i - 1;
    return i;
  };
  Vector y(n);
  for (Index t = 0; t < n; ++t) {
    double acc = 0.0;
    if (t >= r && t + r < n) {
      acc = k.dot(x.segment(t - r, window));
    } else {
      for (Index j = -r; j <= r; ++j) acc += k(j + r) * x(reflect(t + j));
    }
    y(t) = acc;
  }
  return y;
}

}  // namespace gtf

#endif  // GTF_SIGNAL_HPP
