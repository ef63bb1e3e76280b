#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "pns/config.hpp"
#include "pns/harness.hpp"
#include "pns/random.hpp"
#include "pns/scm_highdim.hpp"

using namespace pns;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.experiment.name = "harness";
  cfg.experiment.seed = 31;
  cfg.experiment.replicates = 3;
  cfg.experiment.n_obs = 800;
  cfg.experiment.n_exp = 400;
  cfg.experiment.n_test = 20;
  cfg.arch.hidden = 6;
  cfg.arch.depth = 2;
  cfg.train.epochs = 2;
  cfg.enn.hyper.generator_hidden = {8};
  cfg.enn.hyper.prior_hidden = {4};
  cfg.enn.hyper.index_dim = 3;
  cfg.enn.train.base.epochs = 2;
  cfg.enn.train.base.batch_size = 256;
  cfg.enn.draws = 50;
  cfg.bootstrap.replicates = 100;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pns_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("replicate data shares draws across sample sizes") {
  const ExperimentConfig cfg = small_config();
  const DataSource source = DataSource::from_config(cfg);
  const ReplicateData small = replicate_data(source, 300, 200, 25, 9);
  const ReplicateData large = replicate_data(source, 700, 500, 25, 9);
  CHECK(large.obs.z.topRows(300) == small.obs.z);
  CHECK(std::equal(small.obs.x.begin(), small.obs.x.end(), large.obs.x.begin()));
  CHECK(std::equal(small.obs.y.begin(), small.obs.y.end(), large.obs.y.begin()));
  CHECK(large.exp.z.topRows(200) == small.exp.z);
  CHECK(std::equal(small.exp.y.begin(), small.exp.y.end(), large.exp.y.begin()));
  CHECK(large.test.z == small.test.z);
  CHECK(large.oracle.pns == small.oracle.pns);
  // Distinct seeds give distinct data.
  CHECK_FALSE(replicate_data(source, 300, 200, 25, 10).obs.z == small.obs.z);
}

TEST_CASE("experiment outputs are deterministic and resumable") {
  const ExperimentConfig cfg = small_config();
  const fs::path a = fresh_dir("a");
  const fs::path b = fresh_dir("b");
  const fs::path c = fresh_dir("c");
  run_experiment(cfg, a);
  run_experiment(cfg, b);
  for (const char* file : {"aggregate.json", "replicates.csv", "plot_data.csv", "config.ini"}) {
    CAPTURE(file);
    CHECK(slurp(a / file) == slurp(b / file));
  }
  CHECK(slurp(a / "shards/obs800_exp400/rep_00001_points.csv") == slurp(b / "shards/obs800_exp400/rep_00001_points.csv"));

  // Interrupted after one replicate, then resumed.
  RunHooks stop;
  stop.stop_after = 1;
  try {
    run_experiment(cfg, c, stop);
    FAIL("expected an interruption");
  } catch (const PnsError& e) {
    CHECK(e.code() == "interrupted");
  }
  CHECK_FALSE(fs::exists(c / "aggregate.json"));
  std::size_t fresh = 0;
  RunHooks count;
  count.on_replicate = [&](const ReplicateOutcome&) { ++fresh; };
  run_experiment(cfg, c, count);
  CHECK(fresh == 2);
  CHECK(slurp(a / "aggregate.json") == slurp(c / "aggregate.json"));
  CHECK(slurp(a / "replicates.csv") == slurp(c / "replicates.csv"));

  // A complete directory is reused as is.
  fresh = 0;
  run_experiment(cfg, c, count);
  CHECK(fresh == 0);
  CHECK(slurp(a / "aggregate.json") == slurp(c / "aggregate.json"));

  // A damaged shard is recomputed.
  std::ofstream(c / "shards/obs800_exp400/rep_00002.json") << "{\"fingerprint\":";
  run_experiment(cfg, c, count);
  CHECK(fresh == 1);
  CHECK(slurp(a / "aggregate.json") == slurp(c / "aggregate.json"));

  // Changed settings invalidate shards.
  ExperimentConfig other = cfg;
  other.train.epochs = 3;
  CHECK(shard_fingerprint(other) != shard_fingerprint(cfg));
  ExperimentConfig renamed = cfg;
  renamed.experiment.name = "renamed";
  renamed.experiment.workers = 4;
  CHECK(shard_fingerprint(renamed) == shard_fingerprint(cfg));
}

TEST_CASE("parallel workers match a serial run") {
  ExperimentConfig cfg = small_config();
  cfg.experiment.methods = {Method::s_learner, Method::anchored, Method::enn, Method::mb_last_layer};
  const fs::path serial = fresh_dir("serial");
  const fs::path parallel = fresh_dir("parallel");
  run_experiment(cfg, serial);
  cfg.experiment.workers = 3;
  run_experiment(cfg, parallel);
  CHECK(slurp(serial / "aggregate.json") == slurp(parallel / "aggregate.json"));
  CHECK(slurp(serial / "replicates.csv") == slurp(parallel / "replicates.csv"));
}

TEST_CASE("plot data mirrors the aggregate") {
  ExperimentConfig cfg = small_config();
  cfg.experiment.methods = {Method::anchored, Method::t_learner};
  cfg.experiment.sweep_n_exp = {200, 400};
  cfg.experiment.replicates = 2;
  cfg.experiment.dump_points = false;
  const fs::path dir = fresh_dir("plot");
  const ExperimentResult result = run_experiment(cfg, dir);
  REQUIRE(result.cells.size() == 2);
  CHECK(result.cells[0].n_exp == 200);
  CHECK(result.cells[1].n_exp == 400);
  CHECK_FALSE(fs::exists(dir / "shards/obs800_exp200/rep_00000_points.csv"));

  const nlohmann::json agg = nlohmann::json::parse(slurp(dir / "aggregate.json"));
  std::istringstream csv(slurp(dir / "plot_data.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "method,n_obs,n_exp,metric,value,ci_lo,ci_hi");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 7);
    const std::size_t n_exp = std::stoul(cells[2]);
    const auto& report = agg["cells"][n_exp == 200 ? 0 : 1]["methods"][cells[0]];
    CHECK(std::stod(cells[4]) == report[cells[3]].get<double>());
    CHECK(std::stod(cells[5]) == report[cells[3] + "_ci_lo"].get<double>());
    CHECK(std::stod(cells[6]) == report[cells[3] + "_ci_hi"].get<double>());
    ++rows;
  }
  CHECK(rows == 2 * 2 * metric_names().size());

  // Regenerating gives the same bytes.
  const std::string before = slurp(dir / "plot_data.csv");
  emit_plot_data(dir);
  CHECK(slurp(dir / "plot_data.csv") == before);
  CHECK_THROWS_AS(emit_plot_data(fresh_dir("empty")), PnsError);
}

TEST_CASE("oracle dump") {
  const ExperimentConfig cfg = small_config();
  const DataSource source = DataSource::from_config(cfg);
  const Eigen::MatrixXd rows = source.sample(10, Regime::observational, 123).z;
  std::ostringstream first, second;
  oracle_dump(source, rows, first);
  oracle_dump(source, rows, second);
  CHECK(first.str() == second.str());
  const std::string text = first.str();
  CHECK(text.find("# audit weights_sum_error=") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);
  std::size_t audits = 0, data_rows = 0;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.rfind("# audit", 0) == 0) {
      ++audits;
      CHECK(line.size() > 5);
      CHECK(line.substr(line.size() - 4) == "PASS");
    } else {
      ++data_rows;
    }
  }
  CHECK(audits == 4);
  CHECK(data_rows == 10);

  Eigen::MatrixXd wrong(1, 3);
  wrong.setZero();
  CHECK_THROWS_AS(oracle_dump(source, wrong, first), DimensionError);
}

TEST_CASE("high-dimensional oracle without latents is the direct formula") {
  ExperimentConfig cfg = small_config();
  cfg.experiment.dgp = Dgp::highdim;
  cfg.highdim.d_obs = 6;
  cfg.highdim.k = 0;
  cfg.highdim.synthetic_rows = 200;
  const DataSource source = DataSource::from_config(cfg);
  HighDimDefaults d;
  d.k = 0;
  d.gamma = cfg.highdim.gamma;
  d.eps_clip = cfg.highdim.eps_clip;
  d.propensity_support = cfg.highdim.propensity_support;
  const HighDimScm scm = default_highdim_scm(6, cfg.highdim.scm_seed, d);
  const Eigen::MatrixXd rows = source.sample(15, Regime::observational, 4).z;
  const OracleTable t = source.oracle(rows);
  const std::vector<std::uint8_t> none;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    std::vector<double> row(6);
    for (int j = 0; j < 6; ++j) row[static_cast<std::size_t>(j)] = rows(i, j);
    const double e = propensity(scm, row, none);
    const double q1 = outcome_prob(scm, 1, row, none);
    const double q0 = outcome_prob(scm, 0, row, none);
    const AtomVector& a = t.atoms[static_cast<std::size_t>(i)];
    CHECK(a.mu1 == doctest::Approx(q1).epsilon(1e-12));
    CHECK(a.mu0 == doctest::Approx(q0).epsilon(1e-12));
    CHECK(a.p11 == doctest::Approx(e * q1).epsilon(1e-12));
    CHECK(a.p10 == doctest::Approx(e * (1 - q1)).epsilon(1e-12));
    CHECK(a.p01 == doctest::Approx((1 - e) * q0).epsilon(1e-12));
    CHECK(a.p00 == doctest::Approx((1 - e) * (1 - q0)).epsilon(1e-12));
    CHECK(t.pns[static_cast<std::size_t>(i)] == doctest::Approx(std::max(0.0, q1 - q0)).epsilon(1e-12));
  }
  CHECK(source.weight_total() == 1.0);
}

TEST_CASE("interval and oracle files round trip") {
  const ExperimentConfig cfg = small_config();
  const DataSource source = DataSource::from_config(cfg);
  const ReplicateData data = replicate_data(source, 600, 400, 12, 3);
  const fs::path dir = fresh_dir("files");
  fs::create_directories(dir);

  write_oracle_csv(data.oracle, dir / "oracle.csv");
  const OracleTable back = read_oracle_csv(dir / "oracle.csv");
  CHECK(back.pns == data.oracle.pns);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back.atoms[i] == data.oracle.atoms[i]);
    CHECK(back.bounds[i].lower == data.oracle.bounds[i].lower);
    CHECK(back.bounds[i].upper == data.oracle.bounds[i].upper);
  }

  const Checkpoint ckpt = train_method(cfg, Method::enn, data.obs, data.exp, 3);
  const MethodOutput out = infer_method(cfg, ckpt, data.test.z, nullptr, nullptr, 3);
  write_intervals_csv(out, dir / "enn.csv");
  const MethodOutput read = read_intervals_csv(dir / "enn.csv");
  CHECK(read.method == Method::enn);
  CHECK(read.valid == out.valid);
  REQUIRE(read.intervals.size() == out.intervals.size());
  for (std::size_t i = 0; i < out.intervals.size(); ++i) {
    CHECK(read.intervals[i].lower == out.intervals[i].lower);
    CHECK(read.intervals[i].upper == out.intervals[i].upper);
    CHECK(read.intervals[i].crossed == out.intervals[i].crossed);
    CHECK(read.uncorrected[i].lower == out.uncorrected[i].lower);
  }
  CHECK_THROWS_AS(read_oracle_csv(dir / "enn.csv"), PnsError);
}

TEST_CASE("format_double is shortest round trip") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 0.0, -2.5, 123456789.125}) {
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
}
