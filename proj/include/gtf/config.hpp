#ifndef GTF_CONFIG_HPP
#define GTF_CONFIG_HPP

#include <gtf/benchmark_systems.hpp>
#include <gtf/binary_io.hpp>
#include <gtf/checkpoint.hpp>
#include <gtf/metrics.hpp>
#include <gtf/trainer.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace gtf {

// Everything one experiment needs, flattened to key=value pairs. Keys are
// listed by config_keys(); anything else is rejected.
struct ExperimentConfig {
  std::string profile = "paper";

  // data
  std::string system = "lorenz63";
  systems::Lorenz63 lorenz63;
  systems::Lorenz96 lorenz96;
  systems::MultiscaleLorenz96 multiscale;
  double dt = 0.01;  // 0.005 is substituted for the multiscale system unless set explicitly
  bool dt_explicit = false;
  Index transient_steps = 10000;
  Index train_steps = 100000;
  Index test_steps = 100000;
  double noise_frac = 0.05;
  Index observed_dims = 0;
  std::uint64_t data_seed = 0;
  std::string train_data;
  std::string test_data;

  // model
  Index latent_dim = 0;  // 0 = observation dimension
  Index hidden_dim = 50;
  bool clipped = true;
  ObservationMode observation = ObservationMode::Identity;

  TrainingConfig training;
  std::int64_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint

  EvaluationConfig evaluation;

  int runs = 1;
  std::string output_dir = "runs";

  double effective_dt() const {
    if (!dt_explicit && system == "multiscale_lorenz96") return 0.005;
    return dt;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto s = trim(v);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  const auto s = trim(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<Index> parse_index_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_number<Index>(key, item));
  }
  return out;
}

inline std::string format_index_list(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool hashed = true;
};

template <class T, class Access>
Field number(Access access) {
  return {[access](ExperimentConfig& c, const std::string& v) { access(c) = parse_number<T>("", v); },
          [access](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return io::format_double(access(c));
            } else {
              return std::to_string(access(c));
            }
          }};
}

template <class Access>
Field boolean(Access access) {
  return {[access](ExperimentConfig& c, const std::string& v) { access(c) = parse_bool("", v); },
          [access](const ExperimentConfig& c) {
            return std::string(access(c) ? "true" : "false");
          }};
}

template <class Access>
Field text(Access access, bool hashed = true) {
  return {[access](ExperimentConfig& c, const std::string& v) { access(c) = trim(v); },
          [access](const ExperimentConfig& c) { return access(c); }, hashed};
}

inline ForcingMode parse_forcing(const std::string& v) {
  if (v == "fixed" || v == "gtf") return ForcingMode::Fixed;
  if (v == "adaptive" || v == "agtf") return ForcingMode::Adaptive;
  if (v == "sparse" || v == "stf") return ForcingMode::SparseTF;
  throw ConfigError("forcing must be fixed, adaptive or sparse, got '" + v + "'");
}

inline GeomeanMethod parse_geomean(const std::string& v) {
  if (v == "explog") return GeomeanMethod::ExpLog;
  if (v == "arithmetic") return GeomeanMethod::ArithmeticMean;
  if (v == "upper_bound") return GeomeanMethod::NormUpperBound;
  throw ConfigError("geomean must be explog, arithmetic or upper_bound, got '" + v + "'");
}

// The profile key is applied before every other key, so it is excluded here.
inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    using C = ExperimentConfig;
    m["system"] = text([](auto& c) -> auto& { return c.system; });
    m["l63_sigma"] = number<double>([](auto& c) -> auto& { return c.lorenz63.sigma; });
    m["l63_rho"] = number<double>([](auto& c) -> auto& { return c.lorenz63.rho; });
    m["l63_beta"] = number<double>([](auto& c) -> auto& { return c.lorenz63.beta; });
    m["l96_n"] = number<Index>([](auto& c) -> auto& { return c.lorenz96.n; });
    m["l96_forcing"] = number<double>([](auto& c) -> auto& { return c.lorenz96.forcing; });
    m["ms_k"] = number<Index>([](auto& c) -> auto& { return c.multiscale.k; });
    m["ms_j"] = number<Index>([](auto& c) -> auto& { return c.multiscale.j; });
    m["ms_i"] = number<Index>([](auto& c) -> auto& { return c.multiscale.i; });
    m["ms_h"] = number<double>([](auto& c) -> auto& { return c.multiscale.h; });
    m["ms_b"] = number<double>([](auto& c) -> auto& { return c.multiscale.b; });
    m["ms_c"] = number<double>([](auto& c) -> auto& { return c.multiscale.c; });
    m["ms_d"] = number<double>([](auto& c) -> auto& { return c.multiscale.d; });
    m["ms_e"] = number<double>([](auto& c) -> auto& { return c.multiscale.e; });
    m["ms_g_z"] = number<double>([](auto& c) -> auto& { return c.multiscale.g_z; });
    m["ms_forcing"] = number<double>([](auto& c) -> auto& { return c.multiscale.forcing; });
    m["dt"] = {[](C& c, const std::string& v) {
                 c.dt = parse_number<double>("dt", v);
                 c.dt_explicit = true;
               },
               [](const C& c) { return io::format_double(c.effective_dt()); }};
    m["transient_steps"] = number<Index>([](auto& c) -> auto& { return c.transient_steps; });
    m["train_steps"] = number<Index>([](auto& c) -> auto& { return c.train_steps; });
    m["test_steps"] = number<Index>([](auto& c) -> auto& { return c.test_steps; });
    m["noise_frac"] = number<double>([](auto& c) -> auto& { return c.noise_frac; });
    m["observed_dims"] = number<Index>([](auto& c) -> auto& { return c.observed_dims; });
    m["data_seed"] = number<std::uint64_t>([](auto& c) -> auto& { return c.data_seed; });
    m["train_data"] = text([](auto& c) -> auto& { return c.train_data; });
    m["test_data"] = text([](auto& c) -> auto& { return c.test_data; });

    m["latent_dim"] = number<Index>([](auto& c) -> auto& { return c.latent_dim; });
    m["hidden_dim"] = number<Index>([](auto& c) -> auto& { return c.hidden_dim; });
    m["clipped"] = boolean([](auto& c) -> auto& { return c.clipped; });
    m["observation"] = {[](C& c, const std::string& v) { c.observation = observation_mode_from_string(trim(v)); },
                        [](const C& c) { return std::string(to_string(c.observation)); }};

    m["epochs"] = number<std::int64_t>([](auto& c) -> auto& { return c.training.epochs; });
    m["batches_per_epoch"] = number<std::int64_t>([](auto& c) -> auto& { return c.training.batches_per_epoch; });
    m["batch_size"] = number<Index>([](auto& c) -> auto& { return c.training.batch_size; });
    m["seq_len"] = number<Index>([](auto& c) -> auto& { return c.training.seq_len; });
    m["lr_start"] = number<double>([](auto& c) -> auto& { return c.training.lr_start; });
    m["lr_end"] = number<double>([](auto& c) -> auto& { return c.training.lr_end; });
    m["seed"] = number<std::uint64_t>([](auto& c) -> auto& { return c.training.seed; });
    m["forcing"] = {[](C& c, const std::string& v) { c.training.gtf.mode = parse_forcing(trim(v)); },
                    [](const C& c) { return std::string(to_string(c.training.gtf.mode)); }};
    m["alpha"] = number<double>([](auto& c) -> auto& { return c.training.gtf.alpha; });
    m["sparse_tau"] = number<std::int64_t>([](auto& c) -> auto& { return c.training.gtf.tau; });
    m["anneal_alpha0"] = number<double>([](auto& c) -> auto& { return c.training.gtf.anneal.alpha0; });
    m["anneal_gamma"] = number<double>([](auto& c) -> auto& { return c.training.gtf.anneal.gamma; });
    m["anneal_interval"] =
        number<std::int64_t>([](auto& c) -> auto& { return c.training.gtf.anneal.update_interval; });
    m["geomean"] = {[](C& c, const std::string& v) { c.training.gtf.method = parse_geomean(trim(v)); },
                    [](const C& c) { return std::string(to_string(c.training.gtf.method)); }};
    m["lambda_reg"] = number<double>([](auto& c) -> auto& { return c.training.reg.lambda_reg; });
    m["lambda_cn"] = number<double>([](auto& c) -> auto& { return c.training.reg.lambda_cn; });
    m["cn_epsilon"] = number<double>([](auto& c) -> auto& { return c.training.reg.epsilon; });
    m["differentiate_pinv"] = boolean([](auto& c) -> auto& { return c.training.differentiate_pinv; });
    m["grad_norm_limit"] = number<double>([](auto& c) -> auto& { return c.training.grad_norm_limit; });
    m["max_consecutive_nonfinite"] = number<int>([](auto& c) -> auto& { return c.training.max_consecutive_nonfinite; });
    m["beta1"] = number<double>([](auto& c) -> auto& { return c.training.optimizer.beta1; });
    m["beta2"] = number<double>([](auto& c) -> auto& { return c.training.optimizer.beta2; });
    m["adam_epsilon"] = number<double>([](auto& c) -> auto& { return c.training.optimizer.epsilon; });
    m["checkpoint_every"] = number<std::int64_t>([](auto& c) -> auto& { return c.checkpoint_every; });

    m["bins"] = number<Index>([](auto& c) -> auto& { return c.evaluation.bins; });
    m["binning_max_dim"] = number<Index>([](auto& c) -> auto& { return c.evaluation.binning_max_dim; });
    m["gmm_sigma2"] = number<double>([](auto& c) -> auto& { return c.evaluation.gmm.sigma2; });
    m["gmm_samples"] = number<Index>([](auto& c) -> auto& { return c.evaluation.gmm.n_samples; });
    m["gmm_max_centers"] = number<Index>([](auto& c) -> auto& { return c.evaluation.gmm.max_centers; });
    m["eval_seed"] = number<std::uint64_t>([](auto& c) -> auto& { return c.evaluation.gmm.seed; });
    m["spectrum_sigma"] = number<double>([](auto& c) -> auto& { return c.evaluation.spectrum.smoothing_sigma; });
    m["spectrum_window"] = number<Index>([](auto& c) -> auto& { return c.evaluation.spectrum.window; });
    m["detrend"] = boolean([](auto& c) -> auto& { return c.evaluation.spectrum.detrend; });
    m["pe_steps"] = {[](C& c, const std::string& v) { c.evaluation.pe_steps = parse_index_list("pe_steps", v); },
                     [](const C& c) { return format_index_list(c.evaluation.pe_steps); }};
    m["lyap_steps"] = number<Index>([](auto& c) -> auto& { return c.evaluation.lyap_steps; });
    m["lyap_renorm"] = number<Index>([](auto& c) -> auto& { return c.evaluation.lyap_renorm; });

    m["runs"] = number<int>([](auto& c) -> auto& { return c.runs; });
    m["output_dir"] = text([](auto& c) -> auto& { return c.output_dir; }, false);
    return m;
  }();
  return f;
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys{"profile"};
  for (const auto& [k, f] : config_detail::fields()) keys.push_back(k);
  return keys;
}

// desk: 500 epochs x 20 batches, lr 5e-3 -> 1e-4; paper: 5000 x 50, lr 1e-3 -> 1e-6.
inline void apply_profile(ExperimentConfig& c, const std::string& profile) {
  if (profile == "desk") {
    c.training.epochs = 500;
    c.training.batches_per_epoch = 20;
    c.training.lr_start = 5e-3;
    c.training.lr_end = 1e-4;
  } else if (profile == "paper") {
    c.training.epochs = 5000;
    c.training.batches_per_epoch = 50;
    c.training.lr_start = 1e-3;
    c.training.lr_end = 1e-6;
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
  }
  c.profile = profile;
}

inline ExperimentConfig default_config(const std::string& profile = "paper") {
  ExperimentConfig c;
  apply_profile(c, profile);
  return c;
}

using ConfigOverrides = std::map<std::string, std::string>;

inline ConfigOverrides parse_config_text(const std::string& text, const std::string& what) {
  try {
    return parse_key_values(text, what);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
}

inline void validate(const ExperimentConfig& c) {
  if (c.system != "lorenz63" && c.system != "lorenz96" && c.system != "multiscale_lorenz96") {
    throw ConfigError("unknown system '" + c.system + "' (expected lorenz63, lorenz96 or multiscale_lorenz96)");
  }
  if (!(c.dt > 0.0)) throw ConfigError("dt must be positive");
  if (c.transient_steps < 0 || c.train_steps < 2 || c.test_steps < 2) throw ConfigError("invalid step counts");
  if (c.noise_frac < 0.0) throw ConfigError("noise_frac must be >= 0");
  if (c.hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
  if (c.latent_dim < 0) throw ConfigError("latent_dim must be >= 0");
  if (c.runs < 1) throw ConfigError("runs must be >= 1");
  if (c.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (c.evaluation.bins < 2) throw ConfigError("bins must be >= 2");
  if (c.evaluation.gmm.sigma2 <= 0.0) throw ConfigError("gmm_sigma2 must be positive");
  if (c.evaluation.gmm.n_samples < 100) throw ConfigError("gmm_samples must be >= 100");
  if (c.evaluation.lyap_steps < 1) throw ConfigError("lyap_steps must be positive");
  for (Index n : c.evaluation.pe_steps)
    if (n < 0) throw ConfigError("pe_steps entries must be >= 0");
  c.training.validate();
}

// Applies `overrides` onto the profile defaults. Later maps win, so pass
// file keys first and command-line flags last.
inline ExperimentConfig build_config(const std::vector<ConfigOverrides>& layers) {
  ConfigOverrides merged;
  for (const auto& layer : layers)
    for (const auto& [k, v] : layer) merged[k] = v;
  ExperimentConfig c;
  const auto p = merged.find("profile");
  apply_profile(c, p == merged.end() ? std::string("paper") : config_detail::trim(p->second));
  const auto& f = config_detail::fields();
  for (const auto& [k, v] : merged) {
    if (k == "profile") continue;
    const auto it = f.find(k);
    if (it == f.end()) throw ConfigError("unknown config key '" + k + "'");
    try {
      it->second.set(c, v);
    } catch (const ConfigError&) {
      throw ConfigError("config key '" + k + "': invalid value '" + v + "'");
    }
  }
  if (c.training.gtf.mode == ForcingMode::Adaptive) c.training.gtf.alpha = c.training.gtf.anneal.alpha0;
  validate(c);
  return c;
}

inline ExperimentConfig load_config_file(const std::string& path, const ConfigOverrides& flags = {}) {
  return build_config({parse_config_text(io::read_text_file(path), path), flags});
}

// Sorted key=value lines, one per key, profile first.
inline std::string format_config(const ExperimentConfig& c, bool include_unhashed = true) {
  std::ostringstream os;
  os << "profile=" << c.profile << '\n';
  for (const auto& [k, f] : config_detail::fields()) {
    if (!include_unhashed && !f.hashed) continue;
    os << k << '=' << f.get(c) << '\n';
  }
  return os.str();
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Content hash of everything that influences results (output_dir excluded).
inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(format_config(c, false))));
  return buf;
}

inline systems::OdeSystemSpec system_spec(const ExperimentConfig& c) {
  if (c.system == "lorenz63") return c.lorenz63;
  if (c.system == "lorenz96") return c.lorenz96;
  if (c.system == "multiscale_lorenz96") return c.multiscale;
  throw ConfigError("unknown system '" + c.system + "'");
}

inline systems::IntegratorConfig integrator_config(const ExperimentConfig& c, Index steps, std::uint64_t seed) {
  systems::IntegratorConfig ic;
  ic.dt = c.effective_dt();
  ic.readout_interval = c.effective_dt();
  ic.transient_steps = c.transient_steps;
  ic.total_steps = steps;
  ic.seed = seed;
  return ic;
}

}  // namespace gtf

#endif  // GTF_CONFIG_HPP
