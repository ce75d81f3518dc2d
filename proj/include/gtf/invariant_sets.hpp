#ifndef GTF_INVARIANT_SETS_HPP
#define GTF_INVARIANT_SETS_HPP

#include <gtf/shplrnn.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <vector>

namespace gtf {

enum class Stability { Stable, Unstable, Saddle, Marginal };

inline const char* to_string(Stability s) {
  switch (s) {
    case Stability::Stable: return "stable";
    case Stability::Unstable: return "unstable";
    case Stability::Saddle: return "saddle";
    case Stability::Marginal: return "marginal";
  }
  return "unknown";
}

inline Stability classify(const Eigen::VectorXcd& eig, double tol = 1e-12) {
  bool any_in = false, any_out = false, any_on = false;
  for (Index i = 0; i < eig.size(); ++i) {
    const double r = std::abs(eig(i));
    if (r < 1.0 - tol) {
      any_in = true;
    } else if (r > 1.0 + tol) {
      any_out = true;
    } else {
      any_on = true;
    }
  }
  if (any_out && any_in) return Stability::Saddle;
  if (any_out) return Stability::Unstable;
  if (any_on) return Stability::Marginal;
  return Stability::Stable;
}

struct SearchBudget {
  // Exhaustive enumeration when the number of feasible regions is at most
  // this; otherwise regions are sampled.
  std::uint64_t exhaustive_limit = std::uint64_t{1} << 20;
  // Number of region candidates (or region sequences) tried when sampling.
  std::uint64_t samples = 20000;
  // Length of each free-run orbit used to harvest visited regions.
  Index orbit_length = 2000;
  std::uint64_t seed = 0;
};

struct PeriodicOrbit {
  std::vector<Vector> states;                // z*, F(z*), ..., F^{n-1}(z*)
  std::vector<RegionSignature> signatures;  // region of each state
  Eigen::VectorXcd multipliers;              // eigenvalues of the n-fold product
  Stability stability = Stability::Stable;
  bool on_continuum = false;                 // I - product singular; representative of a family
  double closure_error = 0.0;                // ||F^n(z*) - z*||
};

struct FixedPointResult {
  std::vector<PeriodicOrbit> orbits;
  std::uint64_t regions_searched = 0;
  std::uint64_t degenerate_regions = 0;
  bool exhaustive = false;
};

namespace detail {

inline Vector step_or_nan(const ShPLRNNParams& p, const Eigen::Ref<const Vector>& z) {
  Vector out(p.latent_dim());
  Vector hidden(p.hidden_dim());
  step_into(p, z, out, hidden);
  return out;
}

// Feasible per-unit states: unclipped (0|1); clipped (active, clip_active)
// excludes the combination contradicting the sign of h2.
inline std::vector<std::vector<std::pair<std::uint8_t, std::uint8_t>>> unit_options(const ShPLRNNParams& p) {
  std::vector<std::vector<std::pair<std::uint8_t, std::uint8_t>>> opts(static_cast<std::size_t>(p.hidden_dim()));
  for (Index l = 0; l < p.hidden_dim(); ++l) {
    auto& o = opts[static_cast<std::size_t>(l)];
    if (!p.clipped) {
      o = {{0, 0}, {1, 0}};
    } else if (p.h2(l) > 0.0) {
      o = {{0, 0}, {1, 0}, {1, 1}};  // W2z > 0 implies W2z + h2 > 0
    } else if (p.h2(l) < 0.0) {
      o = {{0, 0}, {0, 1}, {1, 1}};
    } else {
      o = {{0, 0}, {1, 1}};
    }
  }
  return opts;
}

inline double feasible_region_count(const ShPLRNNParams& p) {
  double count = 1.0;
  for (const auto& o : unit_options(p)) count *= static_cast<double>(o.size());
  return count;
}

inline void enumerate_regions(const ShPLRNNParams& p, std::vector<RegionSignature>& out) {
  const auto opts = unit_options(p);
  const std::size_t l = opts.size();
  std::vector<std::size_t> digit(l, 0);
  RegionSignature sig;
  sig.active.assign(l, 0);
  if (p.clipped) sig.clip_active.assign(l, 0);
  while (true) {
    for (std::size_t u = 0; u < l; ++u) {
      sig.active[u] = opts[u][digit[u]].first;
      if (p.clipped) sig.clip_active[u] = opts[u][digit[u]].second;
    }
    out.push_back(sig);
    std::size_t u = 0;
    while (u < l && ++digit[u] == opts[u].size()) digit[u++] = 0;
    if (u == l) break;
  }
}

// Regions visited by free-running orbits and random probes.
inline std::vector<RegionSignature> sample_regions(const ShPLRNNParams& p, const SearchBudget& budget) {
  std::set<RegionSignature> found;
  std::mt19937_64 rng(budget.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(p.latent_dim());
  Vector next(p.latent_dim());
  Vector hidden(p.hidden_dim());
  const std::uint64_t orbits = std::max<std::uint64_t>(1, budget.samples / 4 / std::max<Index>(1, budget.orbit_length));
  for (std::uint64_t o = 0; o < orbits && found.size() < budget.samples; ++o) {
    for (Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    for (Index s = 0; s < budget.orbit_length && found.size() < budget.samples; ++s) {
      found.insert(region_of(p, z));
      step_into(p, z, next, hidden);
      if (!(next.norm() <= 1e12)) break;
      z.swap(next);
    }
  }
  // probes at increasing scales cover regions away from the attractor
  for (std::uint64_t k = 0; found.size() < budget.samples && k < 4 * budget.samples; ++k) {
    const double scale = std::pow(10.0, static_cast<double>(k % 4) - 1.0);
    for (Index i = 0; i < z.size(); ++i) z(i) = scale * normal(rng);
    found.insert(region_of(p, z));
  }
  return {found.begin(), found.end()};
}

// Solves (I - W) z = c. Returns nullopt when singular and inconsistent. For a
// singular but consistent system, returns the minimum-norm solution and the
// null-space basis.
struct AffineSolution {
  Vector z;
  Matrix null_space;
  bool singular = false;
};

inline std::optional<AffineSolution> solve_affine_fixed(const Matrix& W, const Vector& c) {
  const Index m = W.rows();
  const Matrix I_W = Matrix::Identity(m, m) - W;
  Eigen::JacobiSVD<Matrix> svd(I_W, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  const double tol = 1e-10 * std::max(1.0, s(0));
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i) rank += s(i) > tol;
  AffineSolution sol;
  if (rank == m) {
    sol.z = svd.solve(c);
    return sol;
  }
  Vector inv = Vector::Zero(m);
  for (Index i = 0; i < rank; ++i) inv(i) = 1.0 / s(i);
  sol.z = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * c;
  if ((I_W * sol.z - c).norm() > 1e-9 * std::max(1.0, c.norm())) return std::nullopt;
  sol.null_space = svd.matrixV().rightCols(m - rank);
  sol.singular = true;
  return sol;
}

// Runs the candidate orbit and checks that state k lies in region seq[k].
inline bool orbit_matches(const ShPLRNNParams& p, const Vector& z0, const std::vector<RegionSignature>& seq,
                          std::vector<Vector>& states) {
  states.clear();
  Vector z = z0;
  for (const auto& sig : seq) {
    if (!z.allFinite()) return false;
    if (region_of(p, z) != sig) return false;
    states.push_back(z);
    z = step_or_nan(p, z);
  }
  return true;
}

inline bool has_lower_period(const std::vector<Vector>& states, double tol) {
  const std::size_t n = states.size();
  for (std::size_t d = 1; d < n; ++d) {
    if (n % d != 0) continue;
    if ((states[d] - states[0]).norm() <= tol * std::max(1.0, states[0].norm())) return true;
  }
  return false;
}

inline double closure_error(const ShPLRNNParams& p, const std::vector<Vector>& states) {
  Vector z = states.front();
  for (std::size_t k = 0; k < states.size(); ++k) z = step_or_nan(p, z);
  return (z - states.front()).norm();
}

// Canonical rotation (lexicographically smallest state first) for deduplication.
inline std::size_t canonical_start(const std::vector<Vector>& states) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < states.size(); ++k) {
    const auto& a = states[k];
    const auto& b = states[best];
    for (Index i = 0; i < a.size(); ++i) {
      if (a(i) < b(i) - 1e-9) {
        best = k;
        break;
      }
      if (a(i) > b(i) + 1e-9) break;
    }
  }
  return best;
}

inline bool same_orbit(const PeriodicOrbit& a, const PeriodicOrbit& b, double tol) {
  if (a.states.size() != b.states.size()) return false;
  for (std::size_t k = 0; k < a.states.size(); ++k) {
    if ((a.states[k] - b.states[k]).norm() > tol * std::max(1.0, a.states[k].norm())) return false;
  }
  return true;
}

// Attempts one candidate region sequence; appends accepted orbits.
inline void try_sequence(const ShPLRNNParams& p, const std::vector<RegionSignature>& seq,
                         std::vector<PeriodicOrbit>& out, std::uint64_t& degenerate) {
  const Index m = p.latent_dim();
  // composite affine map over the sequence: z_n = P z_0 + q
  Matrix P = Matrix::Identity(m, m);
  Vector q = Vector::Zero(m);
  for (const auto& sig : seq) {
    const RegionAffineMap f = shallow_to_dend_form(p, sig);
    q = f.W * q + f.offset;
    P = f.W * P;
  }
  const auto sol = solve_affine_fixed(P, q);
  if (!sol) return;
  std::vector<Vector> candidates{sol->z};
  if (sol->singular) {
    ++degenerate;
    if (seq.size() == 1) return;  // fixed-point continua are reported only as degenerate regions
    for (Index c = 0; c < sol->null_space.cols(); ++c) {
      candidates.push_back(sol->z + sol->null_space.col(c));
      candidates.push_back(sol->z - sol->null_space.col(c));
    }
  }
  Eigen::EigenSolver<Matrix> es(P, false);
  std::vector<Vector> states;
  for (const auto& z0 : candidates) {
    if (!orbit_matches(p, z0, seq, states)) continue;
    if (has_lower_period(states, 1e-9)) continue;
    PeriodicOrbit orbit;
    const std::size_t start = canonical_start(states);
    std::rotate(states.begin(), states.begin() + static_cast<std::ptrdiff_t>(start), states.end());
    orbit.states = states;
    for (const auto& s : orbit.states) orbit.signatures.push_back(region_of(p, s));
    orbit.multipliers = es.eigenvalues();
    orbit.stability = classify(orbit.multipliers);
    orbit.on_continuum = sol->singular;
    orbit.closure_error = closure_error(p, orbit.states);
    bool dup = false;
    for (const auto& o : out) dup = dup || same_orbit(o, orbit, 1e-8);
    if (!dup) out.push_back(std::move(orbit));
    if (sol->singular) break;  // one representative per continuum
  }
}

}  // namespace detail

// Fixed points z* = W_region z* + offset over candidate regions; accepted only
// when z* induces the candidate region and I - W_region is nonsingular.
inline FixedPointResult find_fixed_points(const ShPLRNNParams& p, const SearchBudget& budget = {}) {
  p.validate();
  FixedPointResult result;
  std::vector<RegionSignature> regions;
  if (detail::feasible_region_count(p) <= static_cast<double>(budget.exhaustive_limit)) {
    detail::enumerate_regions(p, regions);
    result.exhaustive = true;
  } else {
    regions = detail::sample_regions(p, budget);
  }
  for (const auto& sig : regions) {
    detail::try_sequence(p, {sig}, result.orbits, result.degenerate_regions);
    ++result.regions_searched;
  }
  return result;
}

// n-cycles from the composed affine map over region sequences. Exhaustive over
// all sequences of feasible regions when (regions)^n fits the exhaustive
// limit; otherwise sequences are harvested from orbits and random sampling.
inline FixedPointResult find_cycles(const ShPLRNNParams& p, int period, const SearchBudget& budget = {}) {
  require(period >= 1, "find_cycles: period must be >= 1");
  if (period == 1) return find_fixed_points(p, budget);
  p.validate();
  FixedPointResult result;
  const auto n = static_cast<std::size_t>(period);
  const double total = std::pow(detail::feasible_region_count(p), static_cast<double>(period));

  if (total <= static_cast<double>(budget.exhaustive_limit)) {
    result.exhaustive = true;
    std::vector<RegionSignature> regions;
    detail::enumerate_regions(p, regions);
    std::vector<std::size_t> digit(n, 0);
    std::vector<RegionSignature> seq(n);
    while (true) {
      for (std::size_t k = 0; k < n; ++k) seq[k] = regions[digit[k]];
      detail::try_sequence(p, seq, result.orbits, result.degenerate_regions);
      ++result.regions_searched;
      std::size_t k = 0;
      while (k < n && ++digit[k] == regions.size()) digit[k++] = 0;
      if (k == n) break;
    }
    return result;
  }

  // sampled sequences: consecutive regions along free-run orbits, plus random
  // combinations of visited regions
  std::set<std::vector<RegionSignature>> tried;
  std::mt19937_64 rng(budget.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(p.latent_dim());
  std::vector<RegionSignature> along;
  const auto orbit_count = std::max<std::uint64_t>(1, budget.samples / std::max<Index>(1, budget.orbit_length));
  for (std::uint64_t o = 0; o < orbit_count && tried.size() < budget.samples; ++o) {
    for (Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    along.clear();
    for (Index s = 0; s < budget.orbit_length; ++s) {
      along.push_back(region_of(p, z));
      z = detail::step_or_nan(p, z);
      if (!z.allFinite()) break;
    }
    for (std::size_t s = 0; s + n <= along.size() && tried.size() < budget.samples; ++s) {
      std::vector<RegionSignature> seq(along.begin() + static_cast<std::ptrdiff_t>(s),
                                       along.begin() + static_cast<std::ptrdiff_t>(s + n));
      if (tried.insert(seq).second) {
        detail::try_sequence(p, seq, result.orbits, result.degenerate_regions);
        ++result.regions_searched;
      }
    }
  }
  const auto regions = detail::sample_regions(p, budget);
  std::uniform_int_distribution<std::size_t> pick(0, regions.size() - 1);
  for (std::uint64_t k = 0; tried.size() < budget.samples && k < 2 * budget.samples; ++k) {
    std::vector<RegionSignature> seq(n);
    for (auto& s : seq) s = regions[pick(rng)];
    if (tried.insert(seq).second) {
      detail::try_sequence(p, seq, result.orbits, result.degenerate_regions);
      ++result.regions_searched;
    }
  }
  return result;
}

}  // namespace gtf

#endif  // GTF_INVARIANT_SETS_HPP
