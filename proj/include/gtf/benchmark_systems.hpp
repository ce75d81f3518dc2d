#ifndef GTF_BENCHMARK_SYSTEMS_HPP
#define GTF_BENCHMARK_SYSTEMS_HPP

#include <gtf/common.hpp>
#include <gtf/dataset.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <variant>

namespace gtf::systems {

struct Lorenz63 {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
};

struct Lorenz96 {
  Index n = 20;
  double forcing = 16.0;
};

// Three-level Lorenz-96: K slow X, K*J intermediate Y, K*J*I fast Z.
// Y and Z each form one cyclic chain, so Y_{J+1,k} = Y_{1,k+1}.
struct MultiscaleLorenz96 {
  Index k = 8;
  Index j = 8;
  Index i = 8;
  double h = 1.0;
  double b = 10.0;
  double c = 10.0;
  double e = 10.0;
  double d = 10.0;
  double g_z = 10.0;
  double forcing = 20.0;
};

enum class SystemKind { Lorenz63, Lorenz96, MultiscaleLorenz96 };

class OdeSystemSpec {
 public:
  using Params = std::variant<Lorenz63, Lorenz96, MultiscaleLorenz96>;

  OdeSystemSpec(Params p) : params_(std::move(p)) { validate(); }  // NOLINT(google-explicit-constructor)
  template <class P>
    requires std::is_constructible_v<Params, P>
  OdeSystemSpec(P p) : OdeSystemSpec(Params(std::move(p))) {}  // NOLINT(google-explicit-constructor)

  const Params& params() const noexcept { return params_; }

  SystemKind kind() const noexcept { return static_cast<SystemKind>(params_.index()); }

  Index state_dim() const {
    return std::visit(
        [](const auto& p) -> Index {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, Lorenz63>) {
            return 3;
          } else if constexpr (std::is_same_v<T, Lorenz96>) {
            return p.n;
          } else {
            return p.k + p.k * p.j + p.k * p.j * p.i;
          }
        },
        params_);
  }

  std::string name() const {
    switch (kind()) {
      case SystemKind::Lorenz63: return "lorenz63";
      case SystemKind::Lorenz96: return "lorenz96";
      case SystemKind::MultiscaleLorenz96: return "multiscale_lorenz96";
    }
    return "unknown";
  }

 private:
  void validate() const {
    std::visit(
        [](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, Lorenz63>) {
            require(std::isfinite(p.sigma) && std::isfinite(p.rho) && std::isfinite(p.beta),
                    "Lorenz-63 parameters must be finite");
          } else if constexpr (std::is_same_v<T, Lorenz96>) {
            require(p.n >= 4, "Lorenz-96 needs at least 4 variables");
            require(std::isfinite(p.forcing), "Lorenz-96 forcing must be finite");
          } else {
            require(p.k >= 4 && p.j >= 4 && p.i >= 4, "multiscale Lorenz-96 needs K, J, I >= 4");
            for (double v : {p.h, p.b, p.c, p.e, p.d, p.g_z, p.forcing}) {
              require(std::isfinite(v), "multiscale Lorenz-96 parameters must be finite");
            }
            require(p.b != 0.0 && p.d != 0.0, "multiscale Lorenz-96 needs nonzero b and d");
          }
        },
        params_);
  }

  Params params_;
};

namespace detail {

inline Index wrap(Index idx, Index n) {
  idx %= n;
  return idx < 0 ? idx + n : idx;
}

inline void lorenz63_rhs(const Lorenz63& p, const Eigen::Ref<const Vector>& u, Eigen::Ref<Vector> du) {
  du(0) = p.sigma * (u(1) - u(0));
  du(1) = u(0) * (p.rho - u(2)) - u(1);
  du(2) = u(0) * u(1) - p.beta * u(2);
}

// dx_k = (x_{k+1} - x_{k-2}) x_{k-1} - x_k + F, cyclic.
template <class In, class Out>
void lorenz96_ring(const In& x, Index n, double forcing, Out& dx) {
  for (Index k = 0; k < n; ++k) {
    dx(k) = (x(wrap(k + 1, n)) - x(wrap(k - 2, n))) * x(wrap(k - 1, n)) - x(k) + forcing;
  }
}

inline void multiscale_rhs(const MultiscaleLorenz96& p, const Eigen::Ref<const Vector>& u,
                           Eigen::Ref<Vector> du) {
  const Index nk = p.k;
  const Index ny = p.k * p.j;
  const Index nz = ny * p.i;
  auto x = u.segment(0, nk);
  auto y = u.segment(nk, ny);
  auto z = u.segment(nk + ny, nz);
  auto dx = du.segment(0, nk);
  auto dy = du.segment(nk, ny);
  auto dz = du.segment(nk + ny, nz);

  const double hcb = p.h * p.c / p.b;
  const double hed = p.h * p.e / p.d;

  for (Index k = 0; k < nk; ++k) {
    double ysum = y.segment(k * p.j, p.j).sum();
    dx(k) = x(wrap(k - 1, nk)) * (x(wrap(k + 1, nk)) - x(wrap(k - 2, nk))) - x(k) + p.forcing - hcb * ysum;
  }
  for (Index q = 0; q < ny; ++q) {
    const Index k = q / p.j;
    double zsum = z.segment(q * p.i, p.i).sum();
    dy(q) = -p.c * p.b * y(wrap(q + 1, ny)) * (y(wrap(q + 2, ny)) - y(wrap(q - 1, ny))) - p.c * y(q) +
            hcb * x(k) - hed * zsum;
  }
  for (Index r = 0; r < nz; ++r) {
    const Index q = r / p.i;
    dz(r) = p.e * p.d * z(wrap(r - 1, nz)) * (z(wrap(r + 1, nz)) - z(wrap(r - 2, nz))) - p.g_z * p.e * z(r) +
            hed * y(q);
  }
}

}  // namespace detail

inline void vector_field_into(const OdeSystemSpec& spec, const Eigen::Ref<const Vector>& u, Eigen::Ref<Vector> du) {
  require(u.size() == spec.state_dim() && du.size() == spec.state_dim(),
          "vector_field: state has length " + std::to_string(u.size()) + ", system expects " +
              std::to_string(spec.state_dim()));
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Lorenz63>) {
          detail::lorenz63_rhs(p, u, du);
        } else if constexpr (std::is_same_v<T, Lorenz96>) {
          detail::lorenz96_ring(u, p.n, p.forcing, du);
        } else {
          detail::multiscale_rhs(p, u, du);
        }
      },
      spec.params());
}

inline Vector vector_field(const OdeSystemSpec& spec, const Eigen::Ref<const Vector>& u) {
  Vector du(spec.state_dim());
  vector_field_into(spec, u, du);
  return du;
}

struct IntegratorConfig {
  double dt = 0.01;
  double readout_interval = 0.01;
  Index transient_steps = 10000;  // integration steps discarded before sampling
  Index total_steps = 100000;     // number of returned samples
  std::uint64_t seed = 0;

  Index steps_per_readout() const {
    require(dt > 0.0 && std::isfinite(dt), "integrator dt must be positive");
    require(readout_interval >= dt, "readout interval must be >= dt");
    const double ratio = readout_interval / dt;
    const auto k = static_cast<Index>(std::llround(ratio));
    require(k >= 1 && std::abs(ratio - static_cast<double>(k)) <= 1e-9 * ratio,
            "readout interval must be an integer multiple of dt");
    return k;
  }
};

inline constexpr double kDivergenceNorm = 1e12;

// Classical fixed-step RK4 for any field f(u, du). Returns total_steps rows
// sampled every readout_interval, after transient_steps integration steps.
template <class Field>
Matrix integrate_field_rk4(Field&& field, const Eigen::Ref<const Vector>& u0, const IntegratorConfig& cfg) {
  require(u0.allFinite(), "integrate_rk4: initial condition must be finite");
  require(cfg.total_steps >= 1, "integrate_rk4: total_steps must be positive");
  require(cfg.transient_steps >= 0, "integrate_rk4: transient_steps must be nonnegative");
  const Index every = cfg.steps_per_readout();
  const Index n = u0.size();
  const double dt = cfg.dt;

  Vector u = u0;
  Vector k1(n), k2(n), k3(n), k4(n), tmp(n);
  std::int64_t step_index = 0;
  auto advance = [&]() {
    field(u, k1);
    tmp = u + 0.5 * dt * k1;
    field(tmp, k2);
    tmp = u + 0.5 * dt * k2;
    field(tmp, k3);
    tmp = u + dt * k3;
    field(tmp, k4);
    u += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    ++step_index;
    const double norm = u.norm();
    if (!(norm <= kDivergenceNorm)) throw DivergenceError("ODE integration diverged", step_index);
  };

  for (Index s = 0; s < cfg.transient_steps; ++s) advance();
  Matrix out(cfg.total_steps, n);
  out.row(0) = u.transpose();
  for (Index r = 1; r < cfg.total_steps; ++r) {
    for (Index s = 0; s < every; ++s) advance();
    out.row(r) = u.transpose();
  }
  return out;
}

inline Matrix integrate_rk4(const OdeSystemSpec& spec, const Eigen::Ref<const Vector>& u0,
                            const IntegratorConfig& cfg) {
  require(u0.size() == spec.state_dim(), "integrate_rk4: initial condition has wrong dimension");
  return integrate_field_rk4([&spec](const Vector& u, Vector& du) { vector_field_into(spec, u, du); }, u0, cfg);
}

// Adds i.i.d. Gaussian noise with per-column std = noise_frac * column std.
inline void add_observation_noise(Matrix& x, double noise_frac, std::mt19937_64& rng) {
  require(noise_frac >= 0.0, "noise fraction must be nonnegative");
  if (noise_frac == 0.0) return;
  const Vector sd = column_stds(x);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index t = 0; t < x.rows(); ++t) {
    for (Index j = 0; j < x.cols(); ++j) x(t, j) += noise_frac * sd(j) * normal(rng);
  }
}

struct DatasetOptions {
  double noise_frac = 0.0;
  bool standardize = true;
  // Keep only the first observed_dims state variables (0 keeps all). For the
  // multiscale system this exposes only the slow X variables.
  Index observed_dims = 0;
};

// Per-variable scale of the random initial condition. The multiscale system's
// Y and Z tiers live at amplitudes ~1/b and ~1/(b d); unit-variance starts
// there blow up within a few steps.
inline Vector initial_condition_scale(const OdeSystemSpec& spec) {
  Vector s = Vector::Ones(spec.state_dim());
  if (const auto* p = std::get_if<MultiscaleLorenz96>(&spec.params())) {
    const Index ny = p->k * p->j;
    s.segment(p->k, ny).setConstant(1.0 / std::abs(p->b));
    s.tail(ny * p->i).setConstant(1.0 / std::abs(p->b * p->d));
  }
  return s;
}

// Draws u0 ~ N(0, diag(scale^2)) (unit scale except for multiscale tiers), integrates, optionally restricts to the leading
// dimensions, adds observation noise, then optionally standardizes.
inline TrajectoryDataset make_dataset(const OdeSystemSpec& spec, const IntegratorConfig& cfg,
                                      const DatasetOptions& opts, std::uint64_t seed) {
  require(opts.noise_frac >= 0.0, "noise fraction must be nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector u0(spec.state_dim());
  const Vector scale = initial_condition_scale(spec);
  for (Index i = 0; i < u0.size(); ++i) u0(i) = scale(i) * normal(rng);

  Matrix raw = integrate_rk4(spec, u0, cfg);
  if (opts.observed_dims > 0) {
    require(opts.observed_dims <= raw.cols(), "observed_dims exceeds state dimension");
    raw = raw.leftCols(opts.observed_dims).eval();
  }
  add_observation_noise(raw, opts.noise_frac, rng);

  std::string source = spec.name() + " rk4 dt=" + std::to_string(cfg.dt) +
                       " readout=" + std::to_string(cfg.readout_interval) +
                       " transient=" + std::to_string(cfg.transient_steps) + " seed=" + std::to_string(seed) +
                       " noise=" + std::to_string(opts.noise_frac);
  TrajectoryDataset ds = make_trajectory(std::move(raw), cfg.readout_interval, std::move(source));
  if (opts.standardize) standardize(ds);
  return ds;
}

}  // namespace gtf::systems

#endif  // GTF_BENCHMARK_SYSTEMS_HPP
