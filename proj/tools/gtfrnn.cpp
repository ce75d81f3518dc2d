#include <gtf/gtfrnn.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gtf;

namespace {

struct ConfigSource {
  std::string file;
  ConfigOverrides flags;

  ExperimentConfig resolve() const {
    std::vector<ConfigOverrides> layers;
    if (!file.empty()) layers.push_back(parse_config_text(io::read_text_file(file), file));
    layers.push_back(flags);
    return build_config(layers);
  }
};

void add_config_options(CLI::App* sub, ConfigSource& src) {
  sub->add_option("--config", src.file, "key=value config file; flags override its values");
  for (const auto& key : config_keys()) {
    sub->add_option_function<std::string>(
           "--" + key, [&src, key](const std::string& v) { src.flags[key] = v; }, "config key " + key)
        ->group("Config keys");
  }
}

std::vector<double> parse_alpha_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const double a = std::stod(item, &used);
      if (used != item.size() || !(a >= 0.0 && a <= 1.0)) throw std::invalid_argument(item);
      out.push_back(a);
    } catch (const std::exception&) {
      throw ConfigError("alpha values must be numbers in [0, 1], got '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty alpha list");
  return out;
}

std::string default_alpha_grid() {
  std::string s;
  for (int k = 0; k <= 20; ++k) s += (k ? "," : "") + io::format_double(k / 20.0);
  return s;
}

std::string num(double v) { return std::isnan(v) ? std::string("nan") : io::format_double(v); }

int cmd_generate(const ConfigSource& src, const std::string& out_arg, bool csv) {
  const ExperimentConfig c = src.resolve();
  const fs::path out = out_arg.empty() ? fs::path(c.output_dir) / ("data_" + config_hash(c)) : fs::path(out_arg);
  ensure_directory(out);
  const ExperimentData d = generate_data(c);
  save_dataset((out / "train.dsds").string(), d.train);
  save_dataset((out / "test.dsds").string(), d.test);
  if (csv) {
    save_csv((out / "train.csv").string(), d.train);
    save_csv((out / "test.csv").string(), d.test);
  }
  std::string manifest = dataset_manifest(c, "train", train_data_seed(c), d.train) + "\n" +
                         dataset_manifest(c, "test", test_data_seed(c), d.test) + "\ngenerated_at=" + utc_timestamp() +
                         "\n";
  io::write_text_file((out / "dataset.manifest").string(), manifest);
  std::cout << "train " << (out / "train.dsds").string() << " rows=" << d.train.length() << " dims=" << d.train.dim()
            << "\ntest " << (out / "test.dsds").string() << " rows=" << d.test.length() << '\n';
  return 0;
}

MetricsReport evaluate_into(const ShPLRNNParams& p, const ObservationModel& obs, const TrajectoryDataset& test,
                            const ExperimentConfig& c, const fs::path& dir, const std::string& run_name) {
  MetricsReport m = evaluate(p, obs, test, c.evaluation);
  write_metrics(dir, run_name, m);
  return m;
}

int cmd_train(const ConfigSource& src, bool also_evaluate) {
  const ExperimentConfig c = src.resolve();
  const ExperimentData data = experiment_data(c);
  bool aborted = false;
  bool diverged = false;
  for (int run = 0; run < c.runs; ++run) {
    const fs::path dir = run_directory(c, run);
    const TrainResult r = train_run(c, data, run, dir);
    const double mse = r.log.empty() ? std::nan("") : r.log.back().mse;
    std::cout << "run " << run << " dir=" << dir.string() << " status=" << to_string(r.status)
              << " updates=" << r.log.size() << " final_mse=" << num(mse) << '\n';
    if (r.status != TrainStatus::Completed) {
      std::cerr << "training aborted: " << r.message << '\n';
      aborted = true;
      continue;
    }
    if (also_evaluate) {
      const MetricsReport m = evaluate_into(r.params, r.obs, data.test, c, dir, "run_" + std::to_string(run));
      std::cout << "  " << m.status << " d_stsp=" << num(m.d_stsp) << " d_h=" << num(m.d_h) << '\n';
      diverged = diverged || m.status != "ok";
    }
  }
  return aborted || diverged ? static_cast<int>(ExitCode::Divergence) : 0;
}

int cmd_evaluate(const ConfigSource& src, const std::string& checkpoint, const std::string& test_path,
                 const std::string& out_arg, const std::string& run_name) {
  const ExperimentConfig c = src.resolve();
  const Checkpoint ck = load_checkpoint(checkpoint);
  const TrajectoryDataset test = test_path.empty() ? experiment_data(c).test : load_any_dataset(test_path, c.effective_dt());
  const fs::path dir = out_arg.empty() ? fs::path(checkpoint).parent_path() : fs::path(out_arg);
  const MetricsReport m = evaluate_into(ck.params, ck.obs, test, c, dir.empty() ? fs::path(".") : dir, run_name);
  std::cout << format_metrics(m);
  if (m.status != "ok") {
    std::cerr << "free run diverged: " << m.message << '\n';
    return static_cast<int>(ExitCode::Divergence);
  }
  return 0;
}

int cmd_linesearch(const ConfigSource& src, const std::string& alphas_arg, const std::string& out_arg) {
  const ExperimentConfig base = src.resolve();
  const std::vector<double> alphas = parse_alpha_list(alphas_arg.empty() ? default_alpha_grid() : alphas_arg);
  const ExperimentData data = experiment_data(base);
  const fs::path out = out_arg.empty() ? fs::path(base.output_dir) / ("linesearch_" + config_hash(base) + ".csv")
                                       : fs::path(out_arg);
  std::ostringstream csv;
  csv << "# median and median absolute deviation over non-diverging runs\n";
  std::string header = "alpha,runs,diverging,d_stsp_median,d_stsp_mad,d_h_median,d_h_mad";
  for (Index n : base.evaluation.pe_steps) {
    header += ",pe_" + std::to_string(n) + "_median,pe_" + std::to_string(n) + "_mad";
  }
  csv << header << '\n';
  for (double a : alphas) {
    ExperimentConfig c = base;
    c.training.gtf = GtfState::fixed(a);
    std::vector<RunRecord> records;
    for (int run = 0; run < c.runs; ++run) {
      const fs::path dir = run_directory(c, run);
      const TrainResult r = train_run(c, data, run, dir);
      RunRecord rec;
      rec.run = dir.string();
      if (r.status != TrainStatus::Completed) {
        rec.status = "diverging";
      } else {
        const MetricsReport m = evaluate_into(r.params, r.obs, data.test, c, dir, "run_" + std::to_string(run));
        rec.status = m.status;
        rec.values["d_stsp"] = m.d_stsp;
        rec.values["d_h"] = m.d_h;
        for (const auto& [n, v] : m.pe) rec.values["pe_" + std::to_string(n)] = v;
      }
      records.push_back(rec);
    }
    const ReportTable t = aggregate(records);
    auto find = [&](const std::string& name) {
      for (const auto& m : t.metrics)
        if (m.name == name) return m;
      return MetricSummary{name};
    };
    csv << io::format_double(a) << ',' << t.runs_total << ',' << t.diverging_runs.size();
    std::vector<std::string> names{"d_stsp", "d_h"};
    for (Index n : base.evaluation.pe_steps) names.push_back("pe_" + std::to_string(n));
    for (const auto& name : names) {
      const auto s = find(name);
      csv << ',' << num(s.median) << ',' << num(s.mad);
    }
    csv << '\n';
    std::cout << "alpha=" << io::format_double(a) << " d_stsp=" << num(find("d_stsp").median)
              << " d_h=" << num(find("d_h").median) << " diverging=" << t.diverging_runs.size() << '\n';
  }
  if (out.has_parent_path()) ensure_directory(out.parent_path());
  io::write_text_file(out.string(), csv.str());
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int cmd_gradnorms(const ConfigSource& src, const std::string& checkpoint, const std::string& data_path,
                  const std::string& alphas_arg, Index t_max, Index start, bool with_estimate, Index est_sequences,
                  const std::string& out_arg) {
  const ExperimentConfig c = src.resolve();
  const Checkpoint ck = load_checkpoint(checkpoint);
  const TrajectoryDataset data =
      data_path.empty() ? experiment_data(c).train : load_any_dataset(data_path, c.effective_dt());
  if (data.dim() != ck.obs.obs_dim()) throw ConfigError("dataset width does not match the checkpoint");
  struct Row {
    double alpha;
    std::string label;
  };
  std::vector<Row> rows;
  for (double a : parse_alpha_list(alphas_arg)) rows.push_back({a, "grid"});
  double estimate = std::nan("");
  if (with_estimate) {
    estimate = estimate_forcing(ck.params, ck.obs, data, est_sequences, c.training.seq_len, c.training.gtf.method,
                                c.training.seed);
    rows.push_back({estimate, "estimate"});
  }
  std::ostringstream csv;
  if (with_estimate) csv << "# estimated_alpha=" << num(estimate) << " method=" << to_string(c.training.gtf.method) << '\n';
  csv << "alpha,label,t,log10_norm\n";
  for (const auto& r : rows) {
    const auto series = jacobian_product_norm_series(ck.params, ck.obs, data, r.alpha, t_max, start);
    for (std::size_t t = 0; t < series.size(); ++t) {
      csv << io::format_double(r.alpha) << ',' << r.label << ',' << (t + 1) << ',' << num(series[t]) << '\n';
    }
    std::cout << r.label << " alpha=" << io::format_double(r.alpha) << " log10_norm(t_max)=" << num(series.back())
              << '\n';
  }
  const fs::path out = out_arg.empty() ? fs::path(checkpoint).parent_path() / "gradnorms.csv" : fs::path(out_arg);
  if (out.has_parent_path()) ensure_directory(out.parent_path());
  io::write_text_file(out.string(), csv.str());
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int cmd_report(const std::string& dir, const std::string& out_arg) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: '" + dir + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "metrics.csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no metrics.csv files under '" + dir + "'");
  std::vector<RunRecord> records;
  for (const auto& f : files) {
    auto rows = parse_metrics_csv(io::read_text_file(f.string()), f.string());
    for (auto& r : rows) {
      r.run = fs::relative(f.parent_path(), dir).string();
      if (r.run.empty() || r.run == ".") r.run = f.parent_path().filename().string();
      records.push_back(std::move(r));
    }
  }
  const std::string text = format_report(aggregate(records));
  const fs::path out = out_arg.empty() ? fs::path(dir) / "report.csv" : fs::path(out_arg);
  io::write_text_file(out.string(), text);
  std::cout << text;
  return 0;
}

struct IngestOptions {
  std::string csv;
  std::string out;
  Index column = 0;
  double dt = 1.0;
  double sigma = 6.0;
  Index max_lag = 100;
  Index dimension = 5;
  Index delay = 0;
  double train_fraction = 0.5;
};

int cmd_ingest(const IngestOptions& o) {
  const TrajectoryDataset raw = load_csv(o.csv, o.dt);
  if (o.column < 0 || o.column >= raw.dim()) {
    throw ConfigError("column " + std::to_string(o.column) + " out of range (file has " + std::to_string(raw.dim()) +
                      " columns)");
  }
  if (!(o.train_fraction > 0.0 && o.train_fraction < 1.0)) throw ConfigError("train_fraction must be in (0, 1)");
  Vector x = raw.data.col(o.column);
  if (o.sigma > 0.0) x = gaussian_smooth(x, o.sigma);
  TrajectoryDataset scalar = make_trajectory(Matrix(x), o.dt, o.csv);
  standardize(scalar);
  Index tau = o.delay;
  if (tau == 0) {
    const DelayEstimate est = mutual_information_delay(scalar.data.col(0), o.max_lag);
    tau = est.tau;
    if (!est.interior_minimum) {
      std::cerr << "warning: mutual information has no clear minimum up to lag " << o.max_lag << ", using " << tau
                << '\n';
    }
  }
  TrajectoryDataset emb = delay_embed(scalar.data.col(0), {o.dimension, tau}, o.dt);
  const Index n_train = static_cast<Index>(std::floor(o.train_fraction * static_cast<double>(emb.length())));
  if (n_train < 2 || emb.length() - n_train < 2) throw ConfigError("series too short to split");
  TrajectoryDataset train = make_trajectory(emb.data.topRows(n_train), o.dt, o.csv + ":train");
  TrajectoryDataset test = make_trajectory(emb.data.bottomRows(emb.length() - n_train), o.dt, o.csv + ":test");
  standardize(train);
  standardize(test);
  const fs::path out(o.out);
  ensure_directory(out);
  save_dataset((out / "train.dsds").string(), train);
  save_dataset((out / "test.dsds").string(), test);
  std::ostringstream m;
  m << "source=" << o.csv << "\ncolumn=" << o.column << "\nsmoothing_sigma=" << io::format_double(o.sigma)
    << "\ndelay=" << tau << "\ndimension=" << o.dimension << "\ntrain_rows=" << train.length()
    << "\ntest_rows=" << test.length() << "\ngenerated_at=" << utc_timestamp() << '\n';
  io::write_text_file((out / "dataset.manifest").string(), m.str());
  std::cout << "delay=" << tau << " dimension=" << o.dimension << " train_rows=" << train.length()
            << " test_rows=" << test.length() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized teacher forcing for shallow PLRNNs"};
  app.require_subcommand(1);

  ConfigSource gen_src, train_src, eval_src, ls_src, gn_src, cfg_src;

  auto* gen = app.add_subcommand("generate", "simulate a benchmark system into train/test datasets");
  add_config_options(gen, gen_src);
  std::string gen_out;
  bool gen_csv = false;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_flag("--csv", gen_csv, "also write CSV copies");

  auto* tr = app.add_subcommand("train", "train shPLRNNs with the configured forcing");
  add_config_options(tr, train_src);
  bool tr_eval = false;
  tr->add_flag("--evaluate", tr_eval, "evaluate every run on the test set after training");

  auto* ev = app.add_subcommand("evaluate", "compute metrics of a checkpoint against a test set");
  add_config_options(ev, eval_src);
  std::string ev_ckpt, ev_test, ev_out, ev_name = "run";
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--test", ev_test, "test dataset (DSDS or CSV); generated from the config if omitted");
  ev->add_option("--out", ev_out, "output directory (default: checkpoint directory)");
  ev->add_option("--run-name", ev_name, "run label in metrics.csv");

  auto* ls = app.add_subcommand("linesearch", "train and evaluate over a grid of fixed forcing values");
  add_config_options(ls, ls_src);
  std::string ls_alphas, ls_out;
  ls->add_option("--alphas", ls_alphas, "comma-separated forcing values (default 0,0.05,...,1)");
  ls->add_option("--out", ls_out, "summary CSV path");

  auto* gn = app.add_subcommand("gradnorms", "Jacobian product norm series of a checkpoint");
  add_config_options(gn, gn_src);
  std::string gn_ckpt, gn_data, gn_alphas = "0,0.05,0.1,0.15,0.2,0.3,0.5", gn_out;
  Index gn_tmax = 500, gn_start = 0, gn_seqs = 500;
  bool gn_no_estimate = false;
  gn->add_option("--checkpoint", gn_ckpt, "checkpoint file")->required();
  gn->add_option("--data", gn_data, "dataset providing the forcing signal (default: generated train set)");
  gn->add_option("--alphas", gn_alphas, "comma-separated forcing values");
  gn->add_option("--t-max", gn_tmax, "series length");
  gn->add_option("--start", gn_start, "first data row");
  gn->add_option("--estimate-sequences", gn_seqs, "windows used for the forcing estimate");
  gn->add_flag("--no-estimate", gn_no_estimate, "skip the estimated forcing value");
  gn->add_option("--out", gn_out, "output CSV (default: <checkpoint dir>/gradnorms.csv)");

  auto* rp = app.add_subcommand("report", "aggregate metrics.csv files into median and MAD");
  std::string rp_dir, rp_out;
  rp->add_option("--dir", rp_dir, "run directory")->required();
  rp->add_option("--out", rp_out, "output CSV (default: <dir>/report.csv)");

  auto* in = app.add_subcommand("ingest", "smooth, delay-embed and split a scalar CSV series");
  IngestOptions io_opts;
  in->add_option("--csv", io_opts.csv, "input CSV")->required();
  in->add_option("--out", io_opts.out, "output directory")->required();
  in->add_option("--column", io_opts.column, "column to embed");
  in->add_option("--dt", io_opts.dt, "sampling interval");
  in->add_option("--sigma", io_opts.sigma, "Gaussian smoothing width in samples (0 disables)");
  in->add_option("--max-lag", io_opts.max_lag, "largest lag searched for the delay");
  in->add_option("--dim", io_opts.dimension, "embedding dimension");
  in->add_option("--delay", io_opts.delay, "fixed delay (0 selects the mutual information minimum)");
  in->add_option("--train-fraction", io_opts.train_fraction, "leading fraction used for training");

  auto* cf = app.add_subcommand("config", "print the resolved configuration and its hash");
  add_config_options(cf, cfg_src);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::Config);
  }

  try {
    if (*gen) return cmd_generate(gen_src, gen_out, gen_csv);
    if (*tr) return cmd_train(train_src, tr_eval);
    if (*ev) return cmd_evaluate(eval_src, ev_ckpt, ev_test, ev_out, ev_name);
    if (*ls) return cmd_linesearch(ls_src, ls_alphas, ls_out);
    if (*gn) {
      return cmd_gradnorms(gn_src, gn_ckpt, gn_data, gn_alphas, gn_tmax, gn_start, !gn_no_estimate, gn_seqs, gn_out);
    }
    if (*rp) return cmd_report(rp_dir, rp_out);
    if (*in) return cmd_ingest(io_opts);
    if (*cf) {
      const ExperimentConfig c = cfg_src.resolve();
      std::cout << format_config(c) << "config_hash=" << config_hash(c) << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::Io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
