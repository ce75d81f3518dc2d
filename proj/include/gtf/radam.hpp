#ifndef GTF_RADAM_HPP
#define GTF_RADAM_HPP

#include <gtf/common.hpp>

#include <cmath>
#include <cstdint>

namespace gtf {

struct RAdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Rectified Adam. While the variance of the adaptive learning rate is
// intractable (rho_t <= 4) the update is SGD with bias-corrected momentum;
// afterwards the adaptive step is scaled by the rectification term r_t.
class RAdam {
 public:
  explicit RAdam(Index size, RAdamConfig cfg = {})
      : cfg_(cfg), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

  const RAdamConfig& config() const noexcept { return cfg_; }
  std::int64_t step_count() const noexcept { return t_; }
  const Vector& first_moment() const noexcept { return m_; }
  const Vector& second_moment() const noexcept { return v_; }

  // Returns false (and leaves everything untouched) for non-finite gradients.
  bool step(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grad, double lr) {
    require(params.size() == m_.size() && grad.size() == m_.size(), "RAdam: size mismatch");
    if (!grad.allFinite()) return false;
    ++t_;
    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    m_ = b1 * m_ + (1.0 - b1) * grad;
    v_ = b2 * v_ + (1.0 - b2) * grad.cwiseAbs2();
    const double t = static_cast<double>(t_);
    const double b1t = std::pow(b1, t);
    const double b2t = std::pow(b2, t);
    const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    const double m_scale = 1.0 / (1.0 - b1t);
    if (rho_t > 4.0) {
      const double r = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
      const double v_scale = 1.0 / (1.0 - b2t);
      params.array() -= lr * r * (m_.array() * m_scale) / ((v_.array() * v_scale).sqrt() + cfg_.epsilon);
    } else {
      params -= lr * m_scale * m_;
    }
    return true;
  }

 private:
  RAdamConfig cfg_;
  Vector m_;
  Vector v_;
  std::int64_t t_ = 0;
};

// Exponential decay from lr_start at n = 0 to lr_end at n = total_steps.
inline double lr_schedule(std::int64_t n, std::int64_t total_steps, double lr_start, double lr_end) {
  require(lr_start > 0.0 && lr_end > 0.0 && lr_end <= lr_start, "lr_schedule: need 0 < lr_end <= lr_start");
  if (total_steps <= 0) return lr_start;
  return lr_start * std::pow(lr_end / lr_start, static_cast<double>(n) / static_cast<double>(total_steps));
}

}  // namespace gtf

#endif  // GTF_RADAM_HPP
