// Command-line front end: data generation, training, inference, evaluation
// and replicate experiments driven by an INI config.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "pns/checkpoint.hpp"
#include "pns/config.hpp"
#include "pns/error.hpp"
#include "pns/eval.hpp"
#include "pns/harness.hpp"

namespace fs = std::filesystem;
using namespace pns;

namespace {

struct ConfigOptions {
  std::string path;
  std::map<std::string, std::string> overrides;
};

// --config plus one --section.key flag per config key.
void add_config_options(CLI::App* app, ConfigOptions& opts) {
  app->add_option("-c,--config", opts.path, "INI config file (defaults apply when omitted)");
  for (const std::string& key : config_keys()) {
    app->add_option_function<std::string>(
           "--" + key, [&opts, key](const std::string& v) { opts.overrides[key] = v; }, "override " + key)
        ->group("Config overrides");
  }
}

ExperimentConfig resolve_config(const ConfigOptions& opts) {
  ExperimentConfig cfg = opts.path.empty() ? ExperimentConfig{} : load_config(opts.path);
  for (const auto& [key, value] : opts.overrides) set_config_value(cfg, key, value);
  cfg.validate();
  return cfg;
}

void print_error(const std::string& command, const std::string& code, const std::string& message,
                 const std::string& field = "") {
  nlohmann::ordered_json j;
  j["error"]["command"] = command;
  j["error"]["code"] = code;
  j["error"]["message"] = message;
  if (!field.empty()) j["error"]["field"] = field;
  std::cerr << j.dump() << std::endl;
}

Dataset read_split(const fs::path& dir, const std::string& name, Regime regime) {
  return read_dataset_csv(dir / (name + ".csv"), regime);
}

void write_json_file(const nlohmann::ordered_json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << std::endl;
    return;
  }
  std::ofstream out(path);
  if (!out) throw PnsError("io", "cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bounds on the probability of necessity and sufficiency from combined data"};
  app.require_subcommand(1);

  // generate
  ConfigOptions gen_cfg;
  std::string gen_out;
  std::size_t gen_rep = 0;
  auto* gen = app.add_subcommand("generate", "Sample one replicate's observational, experimental and test data");
  add_config_options(gen, gen_cfg);
  gen->add_option("-o,--out", gen_out, "Output directory")->required();
  gen->add_option("-r,--replicate", gen_rep, "Replicate index (seed = experiment.seed + r)");

  // train
  ConfigOptions train_cfg;
  std::string train_data, train_out, train_method_name;
  std::size_t train_rep = 0;
  auto* train = app.add_subcommand("train", "Fit one method on generated data");
  add_config_options(train, train_cfg);
  train->add_option("-d,--data", train_data, "Directory written by generate")->required();
  train->add_option("-m,--method", train_method_name, "s_learner, t_learner, anchored, enn, mb_last_layer, mb_full")
      ->required();
  train->add_option("-o,--out", train_out, "Checkpoint path")->required();
  train->add_option("-r,--replicate", train_rep, "Replicate index used for seeds");

  // infer
  ConfigOptions infer_cfg;
  std::string infer_data, infer_ckpt, infer_out;
  std::size_t infer_rep = 0;
  auto* infer = app.add_subcommand("infer", "Intervals at the test rows of a data directory");
  add_config_options(infer, infer_cfg);
  infer->add_option("-k,--checkpoint", infer_ckpt, "Checkpoint from train")->required();
  infer->add_option("-d,--data", infer_data, "Directory written by generate")->required();
  infer->add_option("-o,--out", infer_out, "Interval CSV")->required();
  infer->add_option("-r,--replicate", infer_rep, "Replicate index used for seeds");

  // evaluate
  std::string eval_intervals, eval_oracle, eval_out, eval_csv;
  double eval_alpha = 0.05;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Metrics of an interval CSV against an oracle CSV");
  evaluate_cmd->add_option("-i,--intervals", eval_intervals, "Interval CSV from infer")->required();
  evaluate_cmd->add_option("--oracle", eval_oracle, "oracle.csv from generate")->required();
  evaluate_cmd->add_option("--alpha", eval_alpha, "Interval score level");
  evaluate_cmd->add_option("-o,--out", eval_out, "Metrics JSON (stdout when omitted)");
  evaluate_cmd->add_option("--csv", eval_csv, "Also write a one-row CSV");

  // run and sweep
  ConfigOptions run_cfg;
  std::string run_out;
  std::optional<std::size_t> run_stop;
  bool run_quiet = false;
  auto* run = app.add_subcommand("run", "Replicate experiment over the configured (n_obs, n_exp) grid");
  add_config_options(run, run_cfg);
  run->add_option("-o,--out", run_out, "Results directory")->required();
  run->add_option("--stop-after", run_stop, "Stop after this many new replicates (resume later)");
  run->add_flag("-q,--quiet", run_quiet, "No progress lines");

  ConfigOptions sweep_cfg;
  std::string sweep_out, sweep_n_exp, sweep_n_obs;
  bool sweep_quiet = false;
  auto* sweep = app.add_subcommand("sweep", "Run over sample-size grids (same as run with sweep lists)");
  add_config_options(sweep, sweep_cfg);
  sweep->add_option("-o,--out", sweep_out, "Results directory")->required();
  sweep->add_option("--n-exp", sweep_n_exp, "Comma list of experimental sample sizes");
  sweep->add_option("--n-obs", sweep_n_obs, "Comma list of observational sample sizes");
  sweep->add_flag("-q,--quiet", sweep_quiet, "No progress lines");

  std::string plot_dir;
  auto* plot = app.add_subcommand("plot-data", "Rewrite plot_data.csv from aggregate.json");
  plot->add_option("-r,--results", plot_dir, "Results directory")->required();

  // oracle-dump
  ConfigOptions oracle_cfg;
  std::string oracle_z, oracle_out;
  std::size_t oracle_random = 10;
  std::uint64_t oracle_seed = 0;
  auto* oracle = app.add_subcommand("oracle-dump", "Exact atoms, bounds and PNS at covariate rows");
  add_config_options(oracle, oracle_cfg);
  oracle->add_option("-z,--z-file", oracle_z, "CSV of observed covariate rows (header required)");
  oracle->add_option("-n,--random", oracle_random, "Rows sampled from the covariate distribution without --z-file");
  oracle->add_option("--seed", oracle_seed, "Seed for sampled rows");
  oracle->add_option("-o,--out", oracle_out, "Output CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const std::string command = app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name();
    print_error(command, "usage", e.what());
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (*gen) {
      const ExperimentConfig cfg = resolve_config(gen_cfg);
      const DataSource source = DataSource::from_config(cfg);
      const ReplicateData d = replicate_data(source, cfg.experiment.n_obs, cfg.experiment.n_exp, cfg.experiment.n_test,
                                             replicate_seed(cfg, gen_rep));
      fs::create_directories(gen_out);
      write_dataset_csv(d.obs, fs::path(gen_out) / "obs.csv");
      write_dataset_csv(d.exp, fs::path(gen_out) / "exp.csv");
      write_dataset_csv(d.test, fs::path(gen_out) / "test.csv");
      write_oracle_csv(d.oracle, fs::path(gen_out) / "oracle.csv");
      std::ofstream(fs::path(gen_out) / "config.ini") << to_ini(cfg);
    } else if (*train) {
      const ExperimentConfig cfg = resolve_config(train_cfg);
      const Method method = parse_method(train_method_name);
      const Dataset obs = read_split(train_data, "obs", Regime::observational);
      const Dataset exp = read_split(train_data, "exp", Regime::experimental);
      Checkpoint ckpt = train_method(cfg, method, obs, exp, replicate_seed(cfg, train_rep));
      ckpt.meta["config"] = to_json(cfg);
      ckpt.meta["replicate"] = train_rep;
      save_checkpoint(ckpt, train_out);
    } else if (*infer) {
      const ExperimentConfig cfg = resolve_config(infer_cfg);
      const Checkpoint ckpt = load_checkpoint(infer_ckpt);
      const Dataset test = read_split(infer_data, "test", Regime::observational);
      std::optional<Dataset> obs, exp;
      if (ckpt.method == Method::mb_last_layer || ckpt.method == Method::mb_full) {
        obs = read_split(infer_data, "obs", Regime::observational);
        exp = read_split(infer_data, "exp", Regime::experimental);
      }
      const MethodOutput out = infer_method(cfg, ckpt, test.z, obs ? &*obs : nullptr, exp ? &*exp : nullptr,
                                            replicate_seed(cfg, infer_rep));
      write_intervals_csv(out, infer_out);
    } else if (*evaluate_cmd) {
      const MethodOutput out = read_intervals_csv(eval_intervals);
      const OracleTable oracle_table = read_oracle_csv(eval_oracle);
      const MetricsReport rep = evaluate(out.intervals, oracle_table.pns, oracle_table.bounds, out.valid, eval_alpha);
      nlohmann::ordered_json j;
      j["method"] = method_name(out.method);
      j["metrics"] = to_json(rep);
      write_json_file(j, eval_out);
      if (!eval_csv.empty()) {
        std::ofstream csv(eval_csv);
        csv << "method," << csv_header() << '\n' << method_name(out.method) << ',' << to_csv_row(rep) << '\n';
      }
    } else if (*run || *sweep) {
      ConfigOptions& opts = *run ? run_cfg : sweep_cfg;
      if (*sweep) {
        if (!sweep_n_exp.empty()) opts.overrides["experiment.sweep_n_exp"] = sweep_n_exp;
        if (!sweep_n_obs.empty()) opts.overrides["experiment.sweep_n_obs"] = sweep_n_obs;
      }
      const ExperimentConfig cfg = resolve_config(opts);
      RunHooks hooks;
      if (!(*run ? run_quiet : sweep_quiet)) hooks.log = [](const std::string& s) { std::cerr << s << std::endl; };
      if (*run) hooks.stop_after = run_stop;
      run_experiment(cfg, *run ? run_out : sweep_out, hooks);
    } else if (*plot) {
      emit_plot_data(plot_dir);
    } else if (*oracle) {
      const ExperimentConfig cfg = resolve_config(oracle_cfg);
      const DataSource source = DataSource::from_config(cfg);
      Eigen::MatrixXd rows;
      if (!oracle_z.empty()) {
        // Reuse the dataset reader by appending placeholder x,y columns.
        std::ifstream in(oracle_z);
        if (!in) throw PnsError("io", "cannot read " + oracle_z);
        std::string line;
        std::vector<std::vector<double>> values;
        std::getline(in, line);
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          std::vector<double> r;
          std::stringstream ss(line);
          std::string cell;
          while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
          values.push_back(std::move(r));
        }
        rows.resize(static_cast<Eigen::Index>(values.size()),
                    values.empty() ? 0 : static_cast<Eigen::Index>(values.front().size()));
        for (std::size_t i = 0; i < values.size(); ++i) {
          if (static_cast<Eigen::Index>(values[i].size()) != rows.cols()) {
            throw PnsError("format", oracle_z + ": ragged rows");
          }
          for (std::size_t j = 0; j < values[i].size(); ++j) {
            rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i][j];
          }
        }
      } else {
        rows = source.sample(oracle_random, Regime::observational, oracle_seed).z;
      }
      if (oracle_out.empty()) {
        oracle_dump(source, rows, std::cout);
      } else {
        std::ofstream out(oracle_out);
        if (!out) throw PnsError("io", "cannot write " + oracle_out);
        oracle_dump(source, rows, out);
      }
    }
  } catch (const ConfigError& e) {
    print_error(command, e.code(), e.what(), e.field());
    return 3;
  } catch (const PnsError& e) {
    print_error(command, e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(command, "internal", e.what());
    return 1;
  }
  return 0;
}
