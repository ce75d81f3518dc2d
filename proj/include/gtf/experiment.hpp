#ifndef GTF_EXPERIMENT_HPP
#define GTF_EXPERIMENT_HPP

#include <gtf/binary_io.hpp>
#include <gtf/checkpoint.hpp>
#include <gtf/config.hpp>
#include <gtf/data_io.hpp>
#include <gtf/forcing.hpp>
#include <gtf/metrics.hpp>
#include <gtf/trainer.hpp>

#include <ctime>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace gtf {

struct ExperimentData {
  TrajectoryDataset train;
  TrajectoryDataset test;
};

// Seeds of the two generated trajectories. They differ so the test orbit is
// an independent draw from the attractor.
inline std::uint64_t train_data_seed(const ExperimentConfig& c) { return 2 * c.data_seed; }
inline std::uint64_t test_data_seed(const ExperimentConfig& c) { return 2 * c.data_seed + 1; }

inline ExperimentData generate_data(const ExperimentConfig& c) {
  const auto spec = system_spec(c);
  ExperimentData d;
  systems::DatasetOptions train_opts{c.noise_frac, true, c.observed_dims};
  systems::DatasetOptions test_opts{0.0, true, c.observed_dims};
  d.train = systems::make_dataset(spec, integrator_config(c, c.train_steps, train_data_seed(c)), train_opts,
                                  train_data_seed(c));
  d.test = systems::make_dataset(spec, integrator_config(c, c.test_steps, test_data_seed(c)), test_opts,
                                 test_data_seed(c));
  return d;
}

inline TrajectoryDataset load_any_dataset(const std::string& path, double dt) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".csv" || ext == ".txt") return load_csv(path, dt);
  return load_dataset(path);
}

// Uses train_data / test_data when given, generates otherwise.
inline ExperimentData experiment_data(const ExperimentConfig& c) {
  if (c.train_data.empty() && c.test_data.empty()) return generate_data(c);
  if (c.train_data.empty()) throw ConfigError("test_data given without train_data");
  ExperimentData d;
  d.train = load_any_dataset(c.train_data, c.effective_dt());
  d.test = c.test_data.empty() ? d.train : load_any_dataset(c.test_data, c.effective_dt());
  if (d.train.dim() != d.test.dim()) throw ConfigError("train and test datasets have different widths");
  return d;
}

inline std::string dataset_manifest(const ExperimentConfig& c, const std::string& which, std::uint64_t seed,
                                    const TrajectoryDataset& ds) {
  std::ostringstream os;
  os << "split=" << which << '\n'
     << "system=" << c.system << '\n'
     << "seed=" << seed << '\n'
     << "rows=" << ds.length() << '\n'
     << "dims=" << ds.dim() << '\n'
     << "dt=" << io::format_double(ds.dt) << '\n'
     << "noise_frac=" << io::format_double(which == "train" ? c.noise_frac : 0.0) << '\n'
     << "transient_steps=" << c.transient_steps << '\n'
     << "config_hash=" << config_hash(c) << '\n';
  return os.str();
}

struct ModelInit {
  ShPLRNNParams params;
  ObservationModel obs;
};

inline ModelInit initial_model(const ExperimentConfig& c, Index obs_dim, std::uint64_t seed) {
  const Index M = c.latent_dim > 0 ? c.latent_dim : obs_dim;
  if (M < obs_dim) throw ConfigError("latent_dim must be >= the data dimension for an invertible observation model");
  ModelInit m;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  m.params = initialize_shplrnn(M, c.hidden_dim, c.clipped, rng);
  switch (c.observation) {
    case ObservationMode::Identity:
      if (M != obs_dim) {
        throw ConfigError("identity observation needs latent_dim == data dimension (" + std::to_string(obs_dim) +
                          "), got " + std::to_string(M));
      }
      m.obs = ObservationModel::identity(M);
      break;
    case ObservationMode::Fixed:
      m.obs = ObservationModel::padded_identity(obs_dim, M, false);
      break;
    case ObservationMode::Trainable:
      m.obs = ObservationModel::padded_identity(obs_dim, M, true);
      break;
  }
  return m;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

inline std::string training_log_csv(const TrainResult& r, const TrainingConfig& cfg) {
  std::ostringstream os;
  os << "# optimizer=radam beta1=" << io::format_double(cfg.optimizer.beta1)
     << " beta2=" << io::format_double(cfg.optimizer.beta2)
     << " epsilon=" << io::format_double(cfg.optimizer.epsilon) << " weight_decay=0\n";
  os << "# forcing=" << to_string(cfg.gtf.mode) << " status=" << to_string(r.status)
     << " skipped_updates=" << r.skipped_updates << '\n';
  os << "update,epoch,lr,alpha,mse,L_reg,L_cn,grad_norm,wall_ms\n";
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : io::format_double(v); };
  for (const auto& row : r.log) {
    os << row.update << ',' << row.epoch << ',' << num(row.lr) << ',' << num(row.alpha) << ',' << num(row.mse) << ','
       << num(row.l_reg) << ',' << num(row.l_cn) << ',' << num(row.grad_norm) << ','
       << io::format_double(std::round(row.wall_ms * 1000.0) / 1000.0) << '\n';
  }
  return os.str();
}

inline std::string diagnostics_csv(const TrainResult& r) {
  std::ostringstream os;
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : io::format_double(v); };
  os << "step,alpha,kappa_max,sigma_hat_max\n";
  for (const auto& d : r.diagnostics)
    os << d.step << ',' << num(d.alpha) << ',' << num(d.kappa_max) << ',' << num(d.sigma_hat_max) << '\n';
  return os.str();
}

// Training-time forcing estimate for a frozen model: the geometric-mean
// estimator of adaptive GTF over `sequences` random windows of the data.
inline double estimate_forcing(const ShPLRNNParams& p, const ObservationModel& obs, const TrajectoryDataset& data,
                               Index sequences, Index seq_len, GeomeanMethod method, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Batch b = sample_batch(data, sequences, seq_len, rng);
  std::vector<Matrix> teacher;
  teacher.reserve(b.targets.size());
  for (const auto& x : b.targets) teacher.push_back(invert_observations(obs, x));
  return alpha_from_geomean(data_jacobians(p, teacher), method);
}

// Directory of one run: <output_dir>/<hash>[/run_<k>].
inline std::filesystem::path run_directory(const ExperimentConfig& c, int run) {
  std::filesystem::path p = std::filesystem::path(c.output_dir) / config_hash(c);
  if (c.runs > 1) p /= "run_" + std::to_string(run);
  return p;
}

inline std::uint64_t run_seed(const ExperimentConfig& c, int run) { return c.training.seed + static_cast<std::uint64_t>(run); }

inline void ensure_directory(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

// Trains one run and writes checkpoint, manifest, log, diagnostics and the
// resolved config into `dir`.
inline TrainResult train_run(const ExperimentConfig& c, const ExperimentData& data, int run,
                             const std::filesystem::path& dir) {
  ensure_directory(dir);
  TrainingConfig tc = c.training;
  tc.seed = run_seed(c, run);
  ModelInit init = initial_model(c, data.train.dim(), tc.seed);
  const std::string hash = config_hash(c);
  TrainCallbacks cb;
  if (c.checkpoint_every > 0) {
    cb.on_epoch_end = [&](std::int64_t epoch, const ShPLRNNParams& p, const ObservationModel& obs, const GtfState& g) {
      if ((epoch + 1) % c.checkpoint_every != 0) return;
      const auto path = dir / ("model_epoch" + std::to_string(epoch + 1) + ".shpl");
      save_checkpoint(path.string(), p, obs, {hash, epoch + 1, g.alpha, c.observation, utc_timestamp()});
    };
  }
  TrainResult r = train(data.train, std::move(init.params), std::move(init.obs), tc, cb);
  io::write_text_file((dir / "config.txt").string(), format_config(c));
  io::write_text_file((dir / "training_log.csv").string(), training_log_csv(r, tc));
  if (tc.gtf.mode == ForcingMode::Adaptive) io::write_text_file((dir / "diagnostics.csv").string(), diagnostics_csv(r));
  const std::int64_t epochs_done = r.log.empty() ? 0 : r.log.back().epoch + 1;
  save_checkpoint((dir / "model.shpl").string(), r.params, r.obs,
                  {hash, epochs_done, r.gtf.alpha, c.observation, utc_timestamp()});
  std::ostringstream st;
  st << "status=" << to_string(r.status) << '\n'
     << "updates=" << r.log.size() << '\n'
     << "optimizer_steps=" << r.optimizer_steps << '\n'
     << "skipped_updates=" << r.skipped_updates << '\n';
  if (!r.message.empty()) st << "message=" << r.message << '\n';
  io::write_text_file((dir / "train_status.txt").string(), st.str());
  return r;
}

inline void write_metrics(const std::filesystem::path& dir, const std::string& run_name, const MetricsReport& m) {
  ensure_directory(dir);
  io::write_text_file((dir / "metrics.txt").string(), format_metrics(m));
  io::write_text_file((dir / "metrics.csv").string(), metrics_csv_header(m) + "\n" + metrics_csv_row(run_name, m) + "\n");
}

}  // namespace gtf

#endif  // GTF_EXPERIMENT_HPP
