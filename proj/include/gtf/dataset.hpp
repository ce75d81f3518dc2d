#ifndef GTF_DATASET_HPP
#define GTF_DATASET_HPP

#include <gtf/common.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace gtf {

// T x N observations; row t is the observation at time t * dt.
struct TrajectoryDataset {
  Matrix data;
  double dt = 1.0;
  // Per-dimension statistics removed by standardize(); zeros/ones otherwise.
  Vector mean;
  Vector std;
  std::string source;
  std::vector<std::string> names;

  Index length() const noexcept { return data.rows(); }
  Index dim() const noexcept { return data.cols(); }

  void validate() const {
    if (!data.allFinite()) throw NumericError("dataset contains non-finite entries");
    require(mean.size() == data.cols() && std.size() == data.cols(),
            "dataset statistics must have one entry per dimension");
    require(dt > 0.0, "dataset dt must be positive");
  }
};

inline std::vector<std::string> default_dimension_names(Index n) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) names.push_back("x" + std::to_string(i));
  return names;
}

inline TrajectoryDataset make_trajectory(Matrix data, double dt, std::string source) {
  TrajectoryDataset ds;
  const Index n = data.cols();
  ds.data = std::move(data);
  ds.dt = dt;
  ds.mean = Vector::Zero(n);
  ds.std = Vector::Ones(n);
  ds.source = std::move(source);
  ds.names = default_dimension_names(n);
  return ds;
}

inline Vector column_means(const Eigen::Ref<const Matrix>& x) { return x.colwise().mean().transpose(); }

// Sample standard deviation (n - 1 denominator).
inline Vector column_stds(const Eigen::Ref<const Matrix>& x) {
  require(x.rows() >= 2, "standard deviation needs at least two rows");
  const Vector mu = column_means(x);
  Vector s(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    s(j) = std::sqrt((x.col(j).array() - mu(j)).square().sum() / static_cast<double>(x.rows() - 1));
  }
  return s;
}

// Zero mean and unit sample variance per column. Statistics are composed with
// any already recorded so that data * std + mean recovers the raw units.
inline void standardize(TrajectoryDataset& ds) {
  const Vector mu = column_means(ds.data);
  const Vector sd = column_stds(ds.data);
  for (Index j = 0; j < ds.dim(); ++j) {
    if (sd(j) == 0.0) throw NumericError("cannot standardize constant dimension " + std::to_string(j));
    ds.data.col(j) = (ds.data.col(j).array() - mu(j)) / sd(j);
  }
  // second pass removes the residual rounding error of the first
  const Vector mu2 = column_means(ds.data);
  const Vector sd2 = column_stds(ds.data);
  for (Index j = 0; j < ds.dim(); ++j) ds.data.col(j) = (ds.data.col(j).array() - mu2(j)) / sd2(j);

  if (ds.mean.size() != ds.dim()) ds.mean = Vector::Zero(ds.dim());
  if (ds.std.size() != ds.dim()) ds.std = Vector::Ones(ds.dim());
  for (Index j = 0; j < ds.dim(); ++j) {
    const double s = sd(j) * sd2(j);
    ds.mean(j) = ds.mean(j) + ds.std(j) * (mu(j) + sd(j) * mu2(j));
    ds.std(j) = ds.std(j) * s;
  }
}

}  // namespace gtf

#endif  // GTF_DATASET_HPP
