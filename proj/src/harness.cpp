#include "pns/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>


#include "pns/bootstrap.hpp"
#include "pns/error.hpp"

namespace pns {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

namespace {

// Seed streams below a replicate seed.
constexpr std::uint64_t kObsStream = 1;
constexpr std::uint64_t kExpStream = 2;
constexpr std::uint64_t kTestStream = 3;
constexpr std::uint64_t kPlugInInit = 10;
constexpr std::uint64_t kPlugInTrain = 11;
constexpr std::uint64_t kAnchoredInit = 20;
constexpr std::uint64_t kAnchoredTrain = 21;
constexpr std::uint64_t kMbLastLayer = 30;
constexpr std::uint64_t kMbFull = 31;
constexpr std::uint64_t kEnnInit = 40;
constexpr std::uint64_t kEnnTrain = 41;
constexpr std::uint64_t kEnnInfer = 42;


void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw PnsError("io", "cannot write " + tmp.string());
    out << text;
    if (!out) throw PnsError("io", "failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PnsError("io", "cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const fs::path& path, std::size_t lineno) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw PnsError("format", path.string() + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
  }
  return v;
}

// Reads a headered numeric CSV; returns the header and rows.
std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PnsError("io", "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw PnsError("format", path.string() + ": empty file");
  const std::vector<std::string> header = split_csv_line(line);
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw PnsError("format", path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    }
    rows.push_back(std::move(cells));
  }
  return {header, rows};
}

std::size_t column(const std::vector<std::string>& header, const std::string& name, const fs::path& path) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw PnsError("format", path.string() + ": missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::string cell_name(std::size_t n_obs, std::size_t n_exp) {
  return "obs" + std::to_string(n_obs) + "_exp" + std::to_string(n_exp);
}

std::string shard_name(std::size_t r) {
  std::ostringstream s;
  s << "rep_" << std::setw(5) << std::setfill('0') << r;
  return s.str();
}

MethodOutput plug_in_output(Method method, const std::vector<AtomVector>& atoms) {
  MethodOutput out;
  out.method = method;
  for (const AtomVector& a : atoms) {
    const PlugInPrediction p = plug_in_predict(a, method);
    out.intervals.push_back(p.interval);
    out.uncorrected.push_back(p.interval);
    out.atoms.push_back(a);
    out.valid.push_back(!p.violation);
  }
  return out;
}

std::string points_csv(const ReplicateOutcome& rep, const OracleTable& oracle) {
  std::ostringstream s;
  s << "point,method,lower,upper,crossed,kappa_lower,kappa_upper,uncorrected_lower,uncorrected_upper,valid,"
       "oracle_lower,oracle_upper,oracle_pns\n";
  for (const MethodOutput& m : rep.outputs) {
    for (std::size_t i = 0; i < m.intervals.size(); ++i) {
      const PnsInterval& v = m.intervals[i];
      s << i << ',' << method_name(m.method) << ',' << format_double(v.lower) << ',' << format_double(v.upper) << ','
        << int(v.crossed) << ',' << format_double(v.kappa_lower) << ',' << format_double(v.kappa_upper) << ','
        << format_double(m.uncorrected[i].lower) << ',' << format_double(m.uncorrected[i].upper) << ','
        << int(m.valid[i]) << ',' << format_double(oracle.bounds[i].lower) << ','
        << format_double(oracle.bounds[i].upper) << ',' << format_double(oracle.pns[i]) << '\n';
    }
  }
  return s.str();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------

DataSource DataSource::from_config(const ExperimentConfig& cfg) {
  DataSource s;
  s.dgp_ = cfg.experiment.dgp;
  if (s.dgp_ == Dgp::lowdim) {
    s.low_ = cfg.lowdim_scm();
    return s;
  }
  const HighDimSettings& h = cfg.highdim;
  if (h.k > kMaxLatent) throw PnsError("budget", "latent enumeration over 2^" + std::to_string(h.k) + " states");
  if (h.covariates.empty()) {
    s.covariates_ = synthetic_covariates(h.synthetic_rows, h.d_obs, h.scm_seed);
  } else {
    s.covariates_ = load_covariates(h.covariates);
    if (s.covariates_.dim() != h.d_obs) {
      throw ConfigError("highdim.d_obs", "covariate file has " + std::to_string(s.covariates_.dim()) + " columns");
    }
  }
  HighDimDefaults d;
  d.k = h.k;
  d.gamma = h.gamma;
  d.eps_clip = h.eps_clip;
  d.propensity_support = h.propensity_support;
  s.high_ = default_highdim_scm(h.d_obs, h.scm_seed, d);
  return s;
}

std::size_t DataSource::input_dim() const { return dgp_ == Dgp::lowdim ? low_.observed_dim() : high_.d_obs; }

Dataset DataSource::sample(std::size_t n, Regime regime, std::uint64_t seed) const {
  if (dgp_ == Dgp::lowdim) return sample_dataset(low_, n, regime, seed);
  return sample_highdim(high_, covariates_, n, regime, seed);
}

OracleTable DataSource::oracle(const Eigen::MatrixXd& rows) const {
  if (static_cast<std::size_t>(rows.cols()) != input_dim()) {
    throw DimensionError("oracle: expected " + std::to_string(input_dim()) + " covariate columns");
  }
  OracleTable t;
  std::vector<double> row(static_cast<std::size_t>(rows.cols()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) row[static_cast<std::size_t>(j)] = rows(i, j);
    AtomVector a;
    double pns = 0.0;
    if (dgp_ == Dgp::lowdim) {
      const BinaryVector z = to_binary(row);
      a = marginal_atoms(low_, z);
      pns = marginal_pns(low_, z);
    } else {
      a = marginal_atoms(high_, row);
      pns = true_pns_obs(high_, row);
    }
    t.atoms.push_back(a);
    t.bounds.push_back(plug_in_interval(a));
    t.pns.push_back(pns);
  }
  return t;
}

double DataSource::weight_total() const {
  double total = 0.0;
  if (dgp_ == Dgp::lowdim) {
    for (double w : hidden_weights(low_)) total += w;
    return total;
  }
  std::vector<std::uint8_t> h(high_.k);
  for (std::size_t s = 0; s < (std::size_t{1} << high_.k); ++s) {
    for (std::size_t j = 0; j < high_.k; ++j) h[j] = static_cast<std::uint8_t>((s >> j) & 1U);
    total += latent_weight(high_, h);
  }
  return total;
}

ReplicateData replicate_data(const DataSource& source, std::size_t n_obs, std::size_t n_exp, std::size_t n_test,
                             std::uint64_t seed) {
  ReplicateData d;
  d.obs = source.sample(n_obs, Regime::observational, derive_seed(seed, kObsStream));
  d.exp = source.sample(n_exp, Regime::experimental, derive_seed(seed, kExpStream));
  d.test = source.sample(n_test, Regime::observational, derive_seed(seed, kTestStream));
  d.oracle = source.oracle(d.test.z);
  return d;
}

// ---------------------------------------------------------------------------

Checkpoint train_method(const ExperimentConfig& cfg, Method method, const Dataset& obs, const Dataset& exp,
                        std::uint64_t seed, FitCache* cache, bool /*parallel*/) {
  FitCache local;
  FitCache& fc = cache ? *cache : local;
  Checkpoint ckpt;
  ckpt.method = method;
  ckpt.meta["seed"] = seed;
  ckpt.meta["n_obs"] = obs.size();
  ckpt.meta["n_exp"] = exp.size();
  ArchSpec arch = cfg.arch;
  arch.input_dim = obs.dim();

  switch (method) {
    case Method::s_learner:
    case Method::t_learner: {
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(seed, kPlugInTrain);
      const std::uint64_t init = derive_seed(seed, kPlugInInit);
      if (!fc.joint) fc.joint = fit_joint_model(arch, init, obs, exp, tc);
      ckpt.plug_in = method == Method::s_learner ? fit_s_learner(arch, init, obs, exp, tc, &*fc.joint)
                                                 : fit_t_learner(arch, init, obs, exp, tc, &*fc.joint);
      break;
    }
    case Method::anchored:
    case Method::mb_last_layer:
    case Method::mb_full: {
      if (!fc.anchored) {
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(seed, kAnchoredTrain);
        fc.anchored = train_anchored(arch, derive_seed(seed, kAnchoredInit), obs, exp, tc);
      }
      ckpt.anchored = *fc.anchored;
      break;
    }
    case Method::enn: {
      EnnTrainConfig ec = cfg.enn.train;
      ec.base.seed = derive_seed(seed, kEnnTrain);
      ckpt.enn = train_enn(arch, cfg.enn.hyper, derive_seed(seed, kEnnInit), obs, exp, ec);
      break;
    }
    case Method::plug_in:
      throw std::invalid_argument("plug_in is not a trainable method");
  }
  return ckpt;
}

MethodOutput infer_method(const ExperimentConfig& cfg, const Checkpoint& model, const Eigen::MatrixXd& test_rows,
                          const Dataset* obs, const Dataset* exp, std::uint64_t seed, bool parallel) {
  const Method method = model.method;
  switch (method) {
    case Method::s_learner:
    case Method::t_learner:
      if (!model.plug_in) throw PnsError("input", "checkpoint holds no plug-in model");
      return plug_in_output(method, model.plug_in->predict_atoms(test_rows));
    case Method::anchored:
      if (!model.anchored) throw PnsError("input", "checkpoint holds no anchored model");
      return plug_in_output(method, model.anchored->predict_atoms(test_rows));
    case Method::mb_last_layer:
    case Method::mb_full: {
      if (!model.anchored) throw PnsError("input", "checkpoint holds no anchored model");
      if (!obs || !exp) throw PnsError("input", "bootstrap inference needs the training data");
      InfluenceConfig ic = cfg.bootstrap.influence;
      ic.mode = method == Method::mb_full ? InfluenceMode::full_network : InfluenceMode::last_layer;
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(seed, kAnchoredTrain);
      const InfluenceModel im = InfluenceModel::from_training(*model.anchored, *obs, *exp, tc, ic);
      const Eigen::MatrixXd z = model.anchored->standardizer.to_columns(test_rows);
      const std::vector<MbResult> res =
          mb_intervals(im, z, cfg.bootstrap.replicates, cfg.bootstrap.alpha,
                       derive_seed(seed, method == Method::mb_full ? kMbFull : kMbLastLayer), parallel);
      MethodOutput out = plug_in_output(method, model.anchored->predict_atoms(test_rows));
      for (std::size_t i = 0; i < res.size(); ++i) {
        out.intervals[i] = res[i].interval;
        out.intervals[i].method = method;
        out.uncorrected[i] = plug_in_interval(res[i].terms);
        out.uncorrected[i].method = method;
      }
      return out;
    }
    case Method::enn: {
      if (!model.enn) throw PnsError("input", "checkpoint holds no ENN model");
      const std::vector<EnnInference> res = infer_intervals(*model.enn, test_rows, cfg.enn.draws, cfg.enn.quantile,
                                                            derive_seed(seed, kEnnInfer), parallel);
      MethodOutput out;
      out.method = method;
      for (const EnnInference& e : res) {
        out.intervals.push_back(e.interval);
        PnsInterval u = plug_in_interval(e.means);
        u.method = method;
        out.uncorrected.push_back(u);
        out.atoms.push_back(e.mean_atoms);
        out.valid.push_back(check_feasibility(e.mean_atoms, kAuditTolerance));
      }
      return out;
    }
    case Method::plug_in:
      break;
  }
  throw std::invalid_argument("plug_in is not a trainable method");
}

ReplicateOutcome run_replicate(const ExperimentConfig& cfg, const DataSource& source, std::size_t n_obs,
                               std::size_t n_exp, std::size_t replicate, bool parallel) {
  ReplicateOutcome rep;
  rep.replicate = replicate;
  rep.seed = replicate_seed(cfg, replicate);
  rep.n_obs = n_obs;
  rep.n_exp = n_exp;
  const ReplicateData data = replicate_data(source, n_obs, n_exp, cfg.experiment.n_test, rep.seed);
  FitCache cache;
  for (Method m : cfg.experiment.methods) {
    const Checkpoint ckpt = train_method(cfg, m, data.obs, data.exp, rep.seed, &cache, parallel);
    MethodOutput out = infer_method(cfg, ckpt, data.test.z, &data.obs, &data.exp, rep.seed, parallel);
    rep.reports.push_back(evaluate(out.intervals, data.oracle.pns, data.oracle.bounds, out.valid, cfg.eval_alpha));
    rep.outputs.push_back(std::move(out));
  }
  rep.oracle = data.oracle;
  return rep;
}

// ---------------------------------------------------------------------------

std::string shard_fingerprint(const ExperimentConfig& cfg) {
  // Keys that do not change a replicate's results.
  static const std::vector<std::string> skip{"experiment.name",        "experiment.replicates", "experiment.workers",
                                             "experiment.n_obs",       "experiment.n_exp",      "experiment.sweep_n_obs",
                                             "experiment.sweep_n_exp", "experiment.dump_points"};
  std::string text;
  for (const std::string& key : config_keys()) {
    if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
    text += key + "=" + get_config_value(cfg, key) + "\n";
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << fnv1a(text);
  return s.str();
}

namespace {

Json shard_json(const ExperimentConfig& cfg, const ReplicateOutcome& rep) {
  Json j;
  j["fingerprint"] = shard_fingerprint(cfg);
  j["replicate"] = rep.replicate;
  j["seed"] = rep.seed;
  j["n_obs"] = rep.n_obs;
  j["n_exp"] = rep.n_exp;
  Json reports = Json::object();
  for (std::size_t m = 0; m < rep.outputs.size(); ++m) {
    reports[std::string(method_name(rep.outputs[m].method))] = to_json(rep.reports[m]);
  }
  j["reports"] = reports;
  return j;
}

// Reports of a valid shard in method order, or nothing.
std::optional<std::vector<MetricsReport>> load_shard(const ExperimentConfig& cfg, const fs::path& path,
                                                     bool need_points) {
  if (!fs::exists(path)) return std::nullopt;
  if (need_points && !fs::exists(fs::path(path).replace_extension("").string() + "_points.csv")) return std::nullopt;
  try {
    const nlohmann::json j = nlohmann::json::parse(read_file(path));
    if (j.at("fingerprint").get<std::string>() != shard_fingerprint(cfg)) return std::nullopt;
    std::vector<MetricsReport> out;
    for (Method m : cfg.experiment.methods) {
      const std::string name(method_name(m));
      if (!j.at("reports").contains(name)) return std::nullopt;
      out.push_back(report_from_json(j.at("reports").at(name)));
    }
    return out;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

MetricsReport aggregate_or_single(const std::vector<MetricsReport>& reports) {
  if (reports.size() >= 2) return aggregate_replicates(reports);
  return reports.front();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, const RunHooks& hooks) {
  cfg.validate();
  const DataSource source = DataSource::from_config(cfg);
  fs::create_directories(out_dir);
  write_atomically(out_dir / "config.ini", to_ini(cfg));
  auto log = [&](const std::string& s) {
    if (hooks.log) hooks.log(s);
  };

  struct Job {
    std::size_t cell;
    std::size_t n_obs, n_exp, replicate;
    fs::path shard;
  };
  ExperimentResult result;
  std::vector<Job> pending;
  const std::size_t k = cfg.experiment.replicates;
  const std::size_t n_methods = cfg.experiment.methods.size();
  for (std::size_t n_obs : cfg.n_obs_grid()) {
    for (std::size_t n_exp : cfg.n_exp_grid()) {
      CellResult cell;
      cell.n_obs = n_obs;
      cell.n_exp = n_exp;
      cell.methods = cfg.experiment.methods;
      cell.reports.assign(n_methods, std::vector<MetricsReport>(k));
      const fs::path dir = out_dir / "shards" / cell_name(n_obs, n_exp);
      fs::create_directories(dir);
      for (std::size_t r = 0; r < k; ++r) {
        const fs::path shard = dir / (shard_name(r) + ".json");
        if (auto done = load_shard(cfg, shard, cfg.experiment.dump_points)) {
          for (std::size_t m = 0; m < n_methods; ++m) cell.reports[m][r] = (*done)[m];
        } else {
          pending.push_back({result.cells.size(), n_obs, n_exp, r, shard});
        }
      }
      result.cells.push_back(std::move(cell));
    }
  }
  log(std::to_string(pending.size()) + " replicate(s) to run");

  const std::size_t budget = hooks.stop_after ? std::min(*hooks.stop_after, pending.size()) : pending.size();
  const int workers = static_cast<int>(std::min<std::size_t>(cfg.experiment.workers, std::max<std::size_t>(budget, 1)));
  const bool inner_parallel = workers == 1;
  std::exception_ptr failure;
#pragma omp parallel for num_threads(workers) schedule(dynamic, 1)
  for (std::ptrdiff_t jdx = 0; jdx < static_cast<std::ptrdiff_t>(budget); ++jdx) {
    bool skip = false;
#pragma omp critical(pns_failure)
    skip = static_cast<bool>(failure);
    if (skip) continue;
    const Job& job = pending[static_cast<std::size_t>(jdx)];
    try {
      const ReplicateOutcome rep = run_replicate(cfg, source, job.n_obs, job.n_exp, job.replicate, inner_parallel);
      if (cfg.experiment.dump_points) {
        write_atomically(fs::path(job.shard).replace_extension("").string() + "_points.csv",
                         points_csv(rep, rep.oracle));
      }
      write_atomically(job.shard, shard_json(cfg, rep).dump(2) + "\n");
#pragma omp critical(pns_results)
      {
        CellResult& cell = result.cells[job.cell];
        for (std::size_t m = 0; m < n_methods; ++m) cell.reports[m][job.replicate] = rep.reports[m];
        if (hooks.on_replicate) hooks.on_replicate(rep);
        log("done " + cell_name(job.n_obs, job.n_exp) + " replicate " + std::to_string(job.replicate));
      }
    } catch (...) {
#pragma omp critical(pns_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  if (budget < pending.size()) {
    throw PnsError("interrupted", "stopped after " + std::to_string(budget) + " replicate(s); rerun to resume");
  }

  for (CellResult& cell : result.cells) {
    for (std::size_t m = 0; m < n_methods; ++m) cell.aggregated.push_back(aggregate_or_single(cell.reports[m]));
  }

  std::ostringstream csv;
  csv << "n_obs,n_exp,replicate,method," << csv_header() << '\n';
  for (const CellResult& cell : result.cells) {
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t m = 0; m < n_methods; ++m) {
        csv << cell.n_obs << ',' << cell.n_exp << ',' << r << ',' << method_name(cell.methods[m]) << ','
            << to_csv_row(cell.reports[m][r]) << '\n';
      }
    }
  }
  write_atomically(out_dir / "replicates.csv", csv.str());
  write_atomically(out_dir / "aggregate.json", aggregate_json(cfg, result).dump(2) + "\n");
  emit_plot_data(out_dir);
  return result;
}

Json aggregate_json(const ExperimentConfig& cfg, const ExperimentResult& result) {
  Json j;
  j["experiment"] = cfg.experiment.name;
  j["dgp"] = dgp_name(cfg.experiment.dgp);
  j["seed"] = cfg.experiment.seed;
  j["replicates"] = cfg.experiment.replicates;
  j["n_test"] = cfg.experiment.n_test;
  Json cells = Json::array();
  for (const CellResult& cell : result.cells) {
    Json c;
    c["n_obs"] = cell.n_obs;
    c["n_exp"] = cell.n_exp;
    Json methods = Json::object();
    for (std::size_t m = 0; m < cell.methods.size(); ++m) {
      methods[std::string(method_name(cell.methods[m]))] = to_json(cell.aggregated[m]);
    }
    c["methods"] = methods;
    cells.push_back(c);
  }
  j["cells"] = cells;
  return j;
}

void emit_plot_data(const fs::path& results_dir) {
  const fs::path agg = results_dir / "aggregate.json";
  if (!fs::exists(agg)) throw PnsError("missing", "no aggregate.json in " + results_dir.string());
  const Json j = Json::parse(read_file(agg));
  std::ostringstream s;
  s << "method,n_obs,n_exp,metric,value,ci_lo,ci_hi\n";
  for (const auto& cell : j.at("cells")) {
    for (const auto& [method, report] : cell.at("methods").items()) {
      for (const std::string& metric : metric_names()) {
        s << method << ',' << cell.at("n_obs").get<std::size_t>() << ',' << cell.at("n_exp").get<std::size_t>() << ','
          << metric << ',' << format_double(report.at(metric).get<double>()) << ','
          << format_double(report.at(metric + "_ci_lo").get<double>()) << ','
          << format_double(report.at(metric + "_ci_hi").get<double>()) << '\n';
      }
    }
  }
  write_atomically(results_dir / "plot_data.csv", s.str());
}

// ---------------------------------------------------------------------------

void oracle_dump(const DataSource& source, const Eigen::MatrixXd& rows, std::ostream& out) {
  const OracleTable t = source.oracle(rows);
  out << "point";
  for (Eigen::Index j = 0; j < rows.cols(); ++j) out << ",z" << j;
  out << ",mu1,mu0,p11,p10,p01,p00,lower,upper,pns\n";
  double simplex_err = 0.0;
  std::size_t infeasible = 0, outside = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const AtomVector& a = t.atoms[i];
    out << i;
    for (Eigen::Index j = 0; j < rows.cols(); ++j) out << ',' << format_double(rows(static_cast<Eigen::Index>(i), j));
    for (double v : {a.mu1, a.mu0, a.p11, a.p10, a.p01, a.p00, t.bounds[i].lower, t.bounds[i].upper, t.pns[i]}) {
      out << ',' << format_double(v);
    }
    out << '\n';
    simplex_err = std::max(simplex_err, std::abs(a.p00 + a.p01 + a.p10 + a.p11 - 1.0));
    infeasible += !check_feasibility(a, kOracleTolerance);
    outside += t.pns[i] < t.bounds[i].lower - kOracleTolerance || t.pns[i] > t.bounds[i].upper + kOracleTolerance;
  }
  const double weight_err = std::abs(source.weight_total() - 1.0);
  out << "# audit weights_sum_error=" << format_double(weight_err) << " " << (weight_err <= 1e-12 ? "PASS" : "FAIL")
      << '\n';
  out << "# audit simplex_max_error=" << format_double(simplex_err) << " " << (simplex_err <= 1e-12 ? "PASS" : "FAIL")
      << '\n';
  out << "# audit feasibility_failures=" << infeasible << " " << (infeasible == 0 ? "PASS" : "FAIL") << '\n';
  out << "# audit pns_outside_bounds=" << outside << " " << (outside == 0 ? "PASS" : "FAIL") << '\n';
}

void write_oracle_csv(const OracleTable& table, const fs::path& path) {
  std::ostringstream s;
  s << "point,mu1,mu0,p11,p10,p01,p00,lower,upper,pns\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    const AtomVector& a = table.atoms[i];
    s << i;
    for (double v : {a.mu1, a.mu0, a.p11, a.p10, a.p01, a.p00, table.bounds[i].lower, table.bounds[i].upper,
                     table.pns[i]}) {
      s << ',' << format_double(v);
    }
    s << '\n';
  }
  write_atomically(path, s.str());
}

OracleTable read_oracle_csv(const fs::path& path) {
  const auto [header, rows] = read_table(path);
  std::vector<std::size_t> col;
  for (const char* name : {"mu1", "mu0", "p11", "p10", "p01", "p00", "lower", "upper", "pns"}) {
    col.push_back(column(header, name, path));
  }
  OracleTable t;
  std::size_t lineno = 1;
  for (const auto& r : rows) {
    ++lineno;
    double v[9];
    for (std::size_t k = 0; k < 9; ++k) v[k] = to_double(r[col[k]], path, lineno);
    t.atoms.push_back(AtomVector{v[0], v[1], v[2], v[3], v[4], v[5]});
    PnsInterval b;
    b.lower = v[6];
    b.upper = v[7];
    t.bounds.push_back(b);
    t.pns.push_back(v[8]);
  }
  return t;
}

void write_intervals_csv(const MethodOutput& out, const fs::path& path) {
  std::ostringstream s;
  s << "point,method,lower,upper,crossed,kappa_lower,kappa_upper,uncorrected_lower,uncorrected_upper,valid\n";
  for (std::size_t i = 0; i < out.intervals.size(); ++i) {
    const PnsInterval& v = out.intervals[i];
    s << i << ',' << method_name(out.method) << ',' << format_double(v.lower) << ',' << format_double(v.upper) << ','
      << int(v.crossed) << ',' << format_double(v.kappa_lower) << ',' << format_double(v.kappa_upper) << ','
      << format_double(out.uncorrected[i].lower) << ',' << format_double(out.uncorrected[i].upper) << ','
      << int(out.valid[i]) << '\n';
  }
  write_atomically(path, s.str());
}

MethodOutput read_intervals_csv(const fs::path& path) {
  const auto [header, rows] = read_table(path);
  const std::size_t cm = column(header, "method", path), cl = column(header, "lower", path),
                    cu = column(header, "upper", path), cc = column(header, "crossed", path),
                    ckl = column(header, "kappa_lower", path), cku = column(header, "kappa_upper", path),
                    cul = column(header, "uncorrected_lower", path), cuu = column(header, "uncorrected_upper", path),
                    cv = column(header, "valid", path);
  MethodOutput out;
  if (rows.empty()) throw PnsError("format", path.string() + ": no intervals");
  out.method = parse_method(rows.front()[cm]);
  std::size_t lineno = 1;
  for (const auto& r : rows) {
    ++lineno;
    if (parse_method(r[cm]) != out.method) throw PnsError("format", path.string() + ": mixed methods");
    PnsInterval v;
    v.method = out.method;
    v.lower = to_double(r[cl], path, lineno);
    v.upper = to_double(r[cu], path, lineno);
    v.crossed = r[cc] == "1";
    v.kappa_lower = to_double(r[ckl], path, lineno);
    v.kappa_upper = to_double(r[cku], path, lineno);
    PnsInterval u;
    u.method = out.method;
    u.lower = to_double(r[cul], path, lineno);
    u.upper = to_double(r[cuu], path, lineno);
    u.crossed = u.lower > u.upper;
    out.intervals.push_back(v);
    out.uncorrected.push_back(u);
    out.valid.push_back(r[cv] == "1");
  }
  return out;
}

}  // namespace pns
