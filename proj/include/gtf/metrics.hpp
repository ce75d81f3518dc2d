#ifndef GTF_METRICS_HPP
#define GTF_METRICS_HPP

#include <gtf/binary_io.hpp>
#include <gtf/common.hpp>
#include <gtf/dataset.hpp>
#include <gtf/linalg.hpp>
#include <gtf/shplrnn.hpp>
#include <gtf/signal.hpp>

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace gtf {

// ---------------------------------------------------------------------------
// State-space divergence, binning estimator

struct BinningResult {
  double kl = 0.0;
  Index occupied_truth_bins = 0;
  Index empty_generated_bins = 0;  // truth-occupied bins that received the pseudo-count
  Index generated_outside = 0;     // generated points clamped into edge bins
};

// Per-dimension [lo, hi] ranges spanning the truth orbit.
struct BinBounds {
  Vector lo;
  Vector hi;
};

inline BinBounds bounding_box(const Eigen::Ref<const Matrix>& x) {
  return {x.colwise().minCoeff().transpose(), x.colwise().maxCoeff().transpose()};
}

namespace detail {

inline std::uint64_t checked_bin_count(Index m, Index n) {
  std::uint64_t total = 1;
  for (Index j = 0; j < n; ++j) {
    if (total > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(m)) {
      throw ContractError("binning: " + std::to_string(m) + "^" + std::to_string(n) +
                          " bins exceed the addressable range; use the GMM estimator");
    }
    total *= static_cast<std::uint64_t>(m);
  }
  return total;
}

inline std::uint64_t bin_key(const Eigen::Ref<const Matrix>& x, Index t, const BinBounds& b, Index m, bool& clamped) {
  std::uint64_t key = 0;
  std::uint64_t stride = 1;
  for (Index j = 0; j < x.cols(); ++j) {
    const double width = b.hi(j) - b.lo(j);
    Index idx = 0;
    if (width > 0.0) {
      const double u = (x(t, j) - b.lo(j)) / width * static_cast<double>(m);
      if (u < 0.0 || u > static_cast<double>(m)) clamped = true;
      idx = static_cast<Index>(std::floor(u));
      idx = std::clamp<Index>(idx, 0, m - 1);
    } else if (x(t, j) != b.lo(j)) {
      clamped = true;
    }
    key += static_cast<std::uint64_t>(idx) * stride;
    stride *= static_cast<std::uint64_t>(m);
  }
  return key;
}

}  // namespace detail

// KL(p || q) between occupation histograms with m bins per dimension over the
// given box. Generated points outside the box are clamped into edge bins.
// Truth-occupied bins without generated points get the pseudo-count
// 1/(T_gen + K); q is then renormalized over all bins it occupies.
inline BinningResult d_stsp_binning_detail(const Eigen::Ref<const Matrix>& truth,
                                           const Eigen::Ref<const Matrix>& generated, Index m,
                                           const BinBounds& bounds) {
  require(truth.rows() > 0 && generated.rows() > 0, "d_stsp_binning: empty input");
  require(truth.cols() == generated.cols(), "d_stsp_binning: dimension mismatch");
  require(m >= 2, "d_stsp_binning: need at least two bins per dimension");
  require(bounds.lo.size() == truth.cols() && bounds.hi.size() == truth.cols(), "d_stsp_binning: bad bounds");
  detail::checked_bin_count(m, truth.cols());

  std::unordered_map<std::uint64_t, std::pair<double, double>> hist;
  hist.reserve(static_cast<std::size_t>(std::min<Index>(truth.rows(), 1 << 20)));
  BinningResult res;
  for (Index t = 0; t < truth.rows(); ++t) {
    bool clamped = false;
    hist[detail::bin_key(truth, t, bounds, m, clamped)].first += 1.0;
  }
  for (Index t = 0; t < generated.rows(); ++t) {
    bool clamped = false;
    hist[detail::bin_key(generated, t, bounds, m, clamped)].second += 1.0;
    if (clamped) ++res.generated_outside;
  }
  const double Tp = static_cast<double>(truth.rows());
  const double Tq = static_cast<double>(generated.rows());
  for (const auto& [key, c] : hist) {
    if (c.first > 0.0) ++res.occupied_truth_bins;
    if (c.first > 0.0 && c.second == 0.0) ++res.empty_generated_bins;
  }
  const double eps = 1.0 / (Tq + static_cast<double>(res.occupied_truth_bins));
  const double z = 1.0 + static_cast<double>(res.empty_generated_bins) * eps;
  // sum in key order so the result does not depend on hash-table layout
  std::vector<std::pair<std::uint64_t, std::pair<double, double>>> cells(hist.begin(), hist.end());
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double kl = 0.0;
  for (const auto& [key, c] : cells) {
    if (c.first == 0.0) continue;
    const double p = c.first / Tp;
    const double q = (c.second > 0.0 ? c.second / Tq : eps) / z;
    kl += p * std::log(p / q);
  }
  res.kl = std::max(0.0, kl);
  return res;
}

inline double d_stsp_binning(const Eigen::Ref<const Matrix>& truth, const Eigen::Ref<const Matrix>& generated,
                             Index m = 30) {
  require(truth.rows() > 0, "d_stsp_binning: empty input");
  return d_stsp_binning_detail(truth, generated, m, bounding_box(truth)).kl;
}

inline double d_stsp_binning(const Eigen::Ref<const Matrix>& truth, const Eigen::Ref<const Matrix>& generated,
                             Index m, const BinBounds& bounds) {
  return d_stsp_binning_detail(truth, generated, m, bounds).kl;
}

// ---------------------------------------------------------------------------
// State-space divergence, Gaussian-mixture Monte Carlo estimator

struct GmmConfig {
  double sigma2 = 1.0;
  Index n_samples = 2000;
  Index max_centers = 10000;
  std::uint64_t seed = 0;
};

struct GmmResult {
  double kl = 0.0;
  double standard_error = 0.0;
  Index centers_truth = 0;
  Index centers_generated = 0;
};

namespace detail {

// One center per equal-length time stratum; the within-stratum position is
// a shared fraction so equal-length orbits select the same time indices.
inline std::vector<Index> stratified_indices(Index T, const std::vector<double>& offsets) {
  const auto K = static_cast<Index>(offsets.size());
  std::vector<Index> idx(offsets.size());
  for (Index i = 0; i < K; ++i) {
    const Index lo = (i * T) / K;
    const Index hi = ((i + 1) * T) / K;
    const Index len = std::max<Index>(1, hi - lo);
    idx[static_cast<std::size_t>(i)] =
        std::min(T - 1, lo + static_cast<Index>(std::floor(offsets[static_cast<std::size_t>(i)] * static_cast<double>(len))));
  }
  return idx;
}

inline Matrix gather_rows(const Eigen::Ref<const Matrix>& x, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = x.row(idx[i]);
  return out;
}

// log of (1/K) sum_k N(x; c_k, sigma2 I)
inline double gmm_log_density(const Eigen::Ref<const Matrix>& centers, const Eigen::Ref<const Vector>& x,
                              double sigma2, Vector& work) {
  const Index K = centers.rows();
  for (Index k = 0; k < K; ++k) work(k) = -(centers.row(k).transpose() - x).squaredNorm() / (2.0 * sigma2);
  const double d = static_cast<double>(x.size());
  return linalg::log_sum_exp(work.head(K)) - std::log(static_cast<double>(K)) -
         0.5 * d * std::log(2.0 * M_PI * sigma2);
}

}  // namespace detail

inline GmmResult d_stsp_gmm(const Eigen::Ref<const Matrix>& truth, const Eigen::Ref<const Matrix>& generated,
                            const GmmConfig& cfg = {}) {
  require(truth.rows() > 0 && generated.rows() > 0, "d_stsp_gmm: empty input");
  require(truth.cols() == generated.cols(), "d_stsp_gmm: dimension mismatch");
  require(cfg.sigma2 > 0.0, "d_stsp_gmm: sigma2 must be positive");
  require(cfg.n_samples >= 100, "d_stsp_gmm: need at least 100 Monte Carlo samples");
  require(cfg.max_centers >= 1, "d_stsp_gmm: max_centers must be positive");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index K = std::min<Index>(cfg.max_centers, std::max(truth.rows(), generated.rows()));
  std::vector<double> offsets(static_cast<std::size_t>(K));
  for (auto& o : offsets) o = unit(rng);
  auto centers_for = [&](const Eigen::Ref<const Matrix>& x) -> Matrix {
    if (x.rows() <= K) return x;
    return detail::gather_rows(x, detail::stratified_indices(x.rows(), offsets));
  };
  const Matrix cp = centers_for(truth);
  const Matrix cq = centers_for(generated);

  const Index d = truth.cols();
  const double sigma = std::sqrt(cfg.sigma2);
  std::uniform_int_distribution<Index> pick(0, cp.rows() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector work(std::max(cp.rows(), cq.rows()));
  Vector x(d);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (Index s = 0; s < cfg.n_samples; ++s) {
    const Index c = pick(rng);
    for (Index j = 0; j < d; ++j) x(j) = cp(c, j) + sigma * normal(rng);
    const double v = detail::gmm_log_density(cp, x, cfg.sigma2, work) - detail::gmm_log_density(cq, x, cfg.sigma2, work);
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(cfg.n_samples);
  GmmResult r;
  r.kl = sum / n;
  const double var = std::max(0.0, (sum_sq - n * r.kl * r.kl) / (n - 1.0));
  r.standard_error = std::sqrt(var / n);
  r.centers_truth = cp.rows();
  r.centers_generated = cq.rows();
  return r;
}

// ---------------------------------------------------------------------------
// Power-spectrum Hellinger distance

struct SpectrumConfig {
  double smoothing_sigma = 20.0;
  Index window = 0;  // 0 selects 8 sigma + 1
  bool detrend = false;

  Index effective_window() const {
    const Index w = window > 0 ? window : default_gaussian_window(smoothing_sigma);
    require(w % 2 == 1, "spectrum smoothing window must be odd");
    return w;
  }
};

// One-sided power spectrum of the mean-removed (optionally detrended)
// series, Gaussian-smoothed and normalized to unit sum. A constant series
// yields an all-zero vector.
inline Vector power_spectrum(const Eigen::Ref<const Vector>& series, const SpectrumConfig& cfg = {}) {
  const Index T = series.size();
  const Index window = cfg.effective_window();
  require(T >= 2 * window, "power_spectrum: series needs at least 2 * window samples");
  std::vector<double> x(series.data(), series.data() + T);
  const double mean = series.mean();
  for (auto& v : x) v -= mean;
  const double spread = series.maxCoeff() - series.minCoeff();
  if (!(spread > 1e-12 * std::max(1.0, std::abs(mean)))) return Vector::Zero(T / 2 + 1);
  if (cfg.detrend) {
    const double tc = 0.5 * static_cast<double>(T - 1);
    double num = 0.0;
    double den = 0.0;
    for (Index t = 0; t < T; ++t) {
      num += (static_cast<double>(t) - tc) * x[static_cast<std::size_t>(t)];
      den += (static_cast<double>(t) - tc) * (static_cast<double>(t) - tc);
    }
    const double slope = num / den;
    for (Index t = 0; t < T; ++t) x[static_cast<std::size_t>(t)] -= slope * (static_cast<double>(t) - tc);
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> X;
  fft.fwd(X, x);
  const Index half = T / 2 + 1;
  Vector p(half);
  for (Index k = 0; k < half; ++k) p(k) = std::norm(X[static_cast<std::size_t>(k)]);
  const double scale = p.maxCoeff();
  if (!(scale > 0.0)) return Vector::Zero(half);
  p /= scale;
  Vector smooth = gaussian_filter(p, cfg.smoothing_sigma, window);
  const double total = smooth.sum();
  if (!(total > 0.0)) return Vector::Zero(half);
  return smooth / total;
}

// (1/sqrt 2) || sqrt f - sqrt g ||; 1 against an empty spectrum, 0 if both empty.
inline double hellinger_distance(const Eigen::Ref<const Vector>& f, const Eigen::Ref<const Vector>& g) {
  require(f.size() == g.size(), "hellinger_distance: length mismatch");
  const bool fz = f.sum() == 0.0;
  const bool gz = g.sum() == 0.0;
  if (fz && gz) return 0.0;
  if (fz || gz) return 1.0;
  const double h = (f.cwiseMax(0.0).cwiseSqrt() - g.cwiseMax(0.0).cwiseSqrt()).norm() / std::sqrt(2.0);
  return std::clamp(h, 0.0, 1.0);
}

struct SpectralDistanceResult {
  double d_h = 0.0;
  std::vector<double> per_dimension;
  Index constant_dimensions = 0;  // dimensions where either series was constant
};

inline SpectralDistanceResult d_h_detail(const Eigen::Ref<const Matrix>& truth, const Eigen::Ref<const Matrix>& generated,
                                         const SpectrumConfig& cfg = {}) {
  require(truth.cols() == generated.cols() && truth.cols() > 0, "d_h: dimension mismatch");
  require(truth.rows() == generated.rows(), "d_h: series lengths differ");
  SpectralDistanceResult r;
  double sum = 0.0;
  for (Index j = 0; j < truth.cols(); ++j) {
    const Vector f = power_spectrum(truth.col(j), cfg);
    const Vector g = power_spectrum(generated.col(j), cfg);
    if (f.sum() == 0.0 || g.sum() == 0.0) ++r.constant_dimensions;
    const double h = hellinger_distance(f, g);
    r.per_dimension.push_back(h);
    sum += h;
  }
  r.d_h = sum / static_cast<double>(truth.cols());
  return r;
}

inline double d_h(const Eigen::Ref<const Matrix>& truth, const Eigen::Ref<const Matrix>& generated,
                  const SpectrumConfig& cfg = {}) {
  return d_h_detail(truth, generated, cfg).d_h;
}

// ---------------------------------------------------------------------------
// n-step prediction error

inline constexpr double kPredictionErrorCap = 1e12;

struct PredictionErrorResult {
  double pe = 0.0;
  Index capped = 0;  // rollouts whose error was replaced by the cap
};

inline PredictionErrorResult prediction_error_detail(const ShPLRNNParams& p, const ObservationModel& obs,
                                                     const Eigen::Ref<const Matrix>& test, Index n) {
  require(n >= 0, "prediction_error: n must be nonnegative");
  require(test.rows() > n, "prediction_error: test set must be longer than n");
  require(test.cols() == obs.obs_dim(), "prediction_error: test width does not match the observation model");
  const Matrix latent = invert_observations(obs, test);
  const Index M = p.latent_dim();
  const Index starts = test.rows() - n;
  Vector z(M);
  Vector next(M);
  Vector hidden(p.hidden_dim());
  Vector xhat(obs.obs_dim());
  PredictionErrorResult r;
  double sum = 0.0;
  for (Index t = 0; t < starts; ++t) {
    z = latent.row(t).transpose();
    bool diverged = false;
    for (Index s = 0; s < n; ++s) {
      step_into(p, z, next, hidden);
      z.swap(next);
      if (!(z.norm() <= kPredictionErrorCap)) {
        diverged = true;
        break;
      }
    }
    double err = kPredictionErrorCap;
    if (!diverged) {
      if (obs.identity_mode()) {
        err = (test.row(t + n).transpose() - z).squaredNorm();
      } else {
        xhat.noalias() = obs.B() * z;
        err = (test.row(t + n).transpose() - xhat).squaredNorm();
      }
    }
    if (!(err <= kPredictionErrorCap)) {
      err = kPredictionErrorCap;
      diverged = true;
    }
    if (diverged) ++r.capped;
    sum += err;
  }
  r.pe = sum / (static_cast<double>(obs.obs_dim()) * static_cast<double>(starts));
  return r;
}

inline double prediction_error(const ShPLRNNParams& p, const ObservationModel& obs,
                               const Eigen::Ref<const Matrix>& test, Index n) {
  return prediction_error_detail(p, obs, test, n).pe;
}

// ---------------------------------------------------------------------------
// Maximum Lyapunov exponent

// Per-step exponent (1/steps) log ||prod J_t v|| along the free run from z0.
// During `transient` steps both state and tangent vector are propagated and
// renormalized without accumulating, so v aligns with the leading direction.
inline double lyapunov_max(const ShPLRNNParams& p, const Eigen::Ref<const Vector>& z0, Index steps,
                           Index renorm_interval = 1, Index transient = 0) {
  require(steps >= 1, "lyapunov_max: steps must be positive");
  require(renorm_interval >= 1, "lyapunov_max: renorm_interval must be positive");
  require(transient >= 0, "lyapunov_max: transient must be nonnegative");
  require(z0.size() == p.latent_dim(), "lyapunov_max: initial state has wrong dimension");
  const Index M = p.latent_dim();
  Vector z = z0;
  Vector next(M);
  Vector hidden(p.hidden_dim());
  Matrix J(M, M);
  Vector v = Vector::Ones(M) / std::sqrt(static_cast<double>(M));
  Vector w(M);
  auto advance = [&](Index s) {
    jacobian_into(p, z, J, hidden);
    w.noalias() = J * v;
    v.swap(w);
    step_into(p, z, next, hidden);
    z.swap(next);
    if (!(z.norm() <= 1e12)) throw DivergenceError("orbit diverged during Lyapunov estimation", s);
  };
  for (Index s = 0; s < transient; ++s) {
    advance(s);
    const double nv = v.norm();
    if (nv == 0.0 || !std::isfinite(nv)) throw NumericError("tangent vector collapsed during the transient");
    v /= nv;
  }
  double acc = 0.0;
  for (Index s = 0; s < steps; ++s) {
    advance(transient + s);
    if ((s + 1) % renorm_interval == 0 || s + 1 == steps) {
      const double nv = v.norm();
      if (nv == 0.0) return -std::numeric_limits<double>::infinity();
      if (!std::isfinite(nv)) throw NumericError("tangent vector overflowed; lower renorm_interval");
      acc += std::log(nv);
      v /= nv;
    }
  }
  return acc / static_cast<double>(steps);
}

// ---------------------------------------------------------------------------
// Full evaluation

struct EvaluationConfig {
  Index bins = 30;
  Index binning_max_dim = 5;  // binning for N <= this, GMM above
  GmmConfig gmm;
  SpectrumConfig spectrum;
  std::vector<Index> pe_steps{20};
  Index lyap_steps = 10000;
  Index lyap_renorm = 1;
};

struct MetricsReport {
  std::string status = "ok";  // "ok" or "diverging"
  std::string message;
  std::string dstsp_method;
  double d_stsp = std::numeric_limits<double>::quiet_NaN();
  double d_stsp_se = std::numeric_limits<double>::quiet_NaN();
  Index empty_generated_bins = 0;
  double d_h = std::numeric_limits<double>::quiet_NaN();
  std::map<Index, double> pe;
  Index pe_capped = 0;
  double lyap_max = std::numeric_limits<double>::quiet_NaN();           // per step
  double lyap_max_per_time = std::numeric_limits<double>::quiet_NaN();  // divided by dt
  Index generated_steps = 0;
  Index transient_discarded = 0;

  bool diverging() const { return status == "diverging"; }
};

// Free-runs 1.25 T steps from the inferred first test state, discards the
// first floor(0.25 T), and compares the remaining T steps with the test set.
inline MetricsReport evaluate(const ShPLRNNParams& p, const ObservationModel& obs, const TrajectoryDataset& test,
                              const EvaluationConfig& cfg = {}) {
  test.validate();
  require(test.dim() == obs.obs_dim(), "evaluate: test width does not match the observation model");
  const Index T = test.length();
  MetricsReport r;
  r.transient_discarded = T / 4;
  r.generated_steps = T + r.transient_discarded;
  Matrix generated;
  Vector z_end;
  try {
    const Matrix latent = free_run_latent(p, invert_observation(obs, test.data.row(0).transpose()), r.generated_steps);
    const Matrix kept = latent.bottomRows(T);
    generated = obs.identity_mode() ? kept : Matrix(kept * obs.B().transpose());
    z_end = latent.row(latent.rows() - 1).transpose();
  } catch (const DivergenceError& e) {
    r.status = "diverging";
    r.message = std::string(e.what()) + " at step " + std::to_string(e.step());
    return r;
  }
  if (!generated.allFinite()) {
    r.status = "diverging";
    r.message = "free run produced non-finite values";
    return r;
  }
  if (test.dim() <= cfg.binning_max_dim) {
    const auto b = d_stsp_binning_detail(test.data, generated, cfg.bins, bounding_box(test.data));
    r.dstsp_method = "binning";
    r.d_stsp = b.kl;
    r.empty_generated_bins = b.empty_generated_bins;
  } else {
    const auto g = d_stsp_gmm(test.data, generated, cfg.gmm);
    r.dstsp_method = "gmm";
    r.d_stsp = g.kl;
    r.d_stsp_se = g.standard_error;
  }
  r.d_h = d_h(test.data, generated, cfg.spectrum);
  for (Index n : cfg.pe_steps) {
    const auto pe = prediction_error_detail(p, obs, test.data, n);
    r.pe[n] = pe.pe;
    r.pe_capped += pe.capped;
  }
  try {
    r.lyap_max = lyapunov_max(p, z_end, cfg.lyap_steps, cfg.lyap_renorm);
    r.lyap_max_per_time = r.lyap_max / test.dt;
  } catch (const NumericError& e) {
    r.status = "diverging";
    r.message = e.what();
  }
  return r;
}

inline std::string format_metrics(const MetricsReport& r) {
  std::ostringstream os;
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : io::format_double(v); };
  os << "status=" << r.status << '\n';
  if (!r.message.empty()) os << "message=" << r.message << '\n';
  os << "dstsp_method=" << r.dstsp_method << '\n'
     << "d_stsp=" << num(r.d_stsp) << '\n'
     << "d_stsp_se=" << num(r.d_stsp_se) << '\n'
     << "empty_generated_bins=" << r.empty_generated_bins << '\n'
     << "d_h=" << num(r.d_h) << '\n';
  for (const auto& [n, v] : r.pe) os << "pe_" << n << '=' << num(v) << '\n';
  os << "pe_capped=" << r.pe_capped << '\n'
     << "lyap_max=" << num(r.lyap_max) << '\n'
     << "lyap_max_per_time=" << num(r.lyap_max_per_time) << '\n'
     << "generated_steps=" << r.generated_steps << '\n'
     << "transient_discarded=" << r.transient_discarded << '\n';
  return os.str();
}

inline std::string metrics_csv_header(const MetricsReport& r) {
  std::string h = "run,status,d_stsp,d_h";
  for (const auto& [n, v] : r.pe) h += ",pe_" + std::to_string(n);
  h += ",lyap_max_per_time";
  return h;
}

inline std::string metrics_csv_row(const std::string& run, const MetricsReport& r) {
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : io::format_double(v); };
  std::string row = run + "," + r.status + "," + num(r.d_stsp) + "," + num(r.d_h);
  for (const auto& [n, v] : r.pe) row += "," + num(v);
  row += "," + num(r.lyap_max_per_time);
  return row;
}

}  // namespace gtf

#endif  // GTF_METRICS_HPP
