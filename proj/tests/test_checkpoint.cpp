#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "pns/checkpoint.hpp"
#include "pns/config.hpp"
#include "pns/harness.hpp"

using namespace pns;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
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

struct Fixture {
  ExperimentConfig cfg = tiny_config();
  ReplicateData data;
  fs::path dir;

  Fixture() {
    const DataSource source = DataSource::from_config(cfg);
    data = replicate_data(source, 600, 400, 20, 5);
    dir = fs::temp_directory_path() / "pns_test_checkpoint";
    fs::create_directories(dir);
  }
};

bool same_bits(const ParamVector& a, const ParamVector& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void check_same_intervals(const MethodOutput& a, const MethodOutput& b) {
  REQUIRE(a.intervals.size() == b.intervals.size());
  for (std::size_t i = 0; i < a.intervals.size(); ++i) {
    CHECK(a.intervals[i].lower == b.intervals[i].lower);
    CHECK(a.intervals[i].upper == b.intervals[i].upper);
  }
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("anchored checkpoint round trip") {
  Fixture f;
  Checkpoint ckpt = train_method(f.cfg, Method::anchored, f.data.obs, f.data.exp, 11);
  ckpt.meta["note"] = "kept";
  const fs::path p = f.dir / "anchored.ckpt";
  save_checkpoint(ckpt, p);
  const Checkpoint back = load_checkpoint(p);
  REQUIRE(back.anchored.has_value());
  CHECK(back.method == Method::anchored);
  CHECK(same_bits(back.anchored->params.values, ckpt.anchored->params.values));
  CHECK(back.anchored->standardizer.mean == ckpt.anchored->standardizer.mean);
  CHECK(back.anchored->log.epoch_loss == ckpt.anchored->log.epoch_loss);
  CHECK(back.meta["note"] == "kept");
  check_same_intervals(infer_method(f.cfg, ckpt, f.data.test.z, nullptr, nullptr, 11),
                       infer_method(f.cfg, back, f.data.test.z, nullptr, nullptr, 11));
  // Saving the loaded copy reproduces the file.
  save_checkpoint(back, f.dir / "anchored2.ckpt");
  CHECK(read_bytes(p) == read_bytes(f.dir / "anchored2.ckpt"));
}

TEST_CASE("bootstrap checkpoint needs the training data") {
  Fixture f;
  const Checkpoint ckpt = train_method(f.cfg, Method::mb_last_layer, f.data.obs, f.data.exp, 11);
  save_checkpoint(ckpt, f.dir / "mb.ckpt");
  const Checkpoint back = load_checkpoint(f.dir / "mb.ckpt");
  CHECK(back.method == Method::mb_last_layer);
  check_same_intervals(infer_method(f.cfg, ckpt, f.data.test.z, &f.data.obs, &f.data.exp, 11),
                       infer_method(f.cfg, back, f.data.test.z, &f.data.obs, &f.data.exp, 11));
  CHECK_THROWS(infer_method(f.cfg, back, f.data.test.z, nullptr, nullptr, 11));
}

TEST_CASE("enn checkpoint round trip") {
  Fixture f;
  const Checkpoint ckpt = train_method(f.cfg, Method::enn, f.data.obs, f.data.exp, 11);
  save_checkpoint(ckpt, f.dir / "enn.ckpt");
  const Checkpoint back = load_checkpoint(f.dir / "enn.ckpt");
  REQUIRE(back.enn.has_value());
  const HyperModel& a = ckpt.enn->hyper;
  const HyperModel& b = back.enn->hyper;
  CHECK(same_bits(a.base, b.base));
  CHECK(same_bits(a.scales, b.scales));
  CHECK(same_bits(a.generator, b.generator));
  CHECK(same_bits(a.prior, b.prior));
  CHECK(a.index_dim == b.index_dim);
  CHECK(a.prior_scale == b.prior_scale);
  check_same_intervals(infer_method(f.cfg, ckpt, f.data.test.z, nullptr, nullptr, 11),
                       infer_method(f.cfg, back, f.data.test.z, nullptr, nullptr, 11));
}

TEST_CASE("plug-in checkpoint round trip") {
  Fixture f;
  for (Method m : {Method::s_learner, Method::t_learner}) {
    CAPTURE(method_name(m));
    const Checkpoint ckpt = train_method(f.cfg, m, f.data.obs, f.data.exp, 11);
    save_checkpoint(ckpt, f.dir / "plugin.ckpt");
    const Checkpoint back = load_checkpoint(f.dir / "plugin.ckpt");
    REQUIRE(back.plug_in.has_value());
    CHECK(back.plug_in->method == m);
    CHECK(same_bits(back.plug_in->joint.params, ckpt.plug_in->joint.params));
    CHECK(same_bits(back.plug_in->outcome.params, ckpt.plug_in->outcome.params));
    if (m == Method::t_learner) {
      CHECK(same_bits(back.plug_in->outcome_treated.params, ckpt.plug_in->outcome_treated.params));
    }
    check_same_intervals(infer_method(f.cfg, ckpt, f.data.test.z, nullptr, nullptr, 11),
                         infer_method(f.cfg, back, f.data.test.z, nullptr, nullptr, 11));
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  Fixture f;
  const fs::path p = f.dir / "good.ckpt";
  save_checkpoint(train_method(f.cfg, Method::anchored, f.data.obs, f.data.exp, 11), p);
  const std::string good = read_bytes(p);
  const fs::path bad = f.dir / "bad.ckpt";

  auto expect_format_error = [&](const std::string& bytes) {
    write_bytes(bad, bytes);
    try {
      load_checkpoint(bad);
      FAIL("loaded a corrupt checkpoint");
    } catch (const PnsError& e) {
      CHECK(e.code() == "format");
    }
  };

  std::string s = good;
  s[0] = 'X';
  expect_format_error(s);  // magic
  s = good;
  s[8] = 9;
  expect_format_error(s);  // version
  expect_format_error(good.substr(0, 14));  // header length cut
  expect_format_error(good.substr(0, 40));  // header cut
  expect_format_error(good.substr(0, good.size() - 8));  // last blob cut
  CHECK_THROWS_AS(load_checkpoint(f.dir / "missing.ckpt"), PnsError);

  Checkpoint empty;
  CHECK_THROWS_AS(save_checkpoint(empty, f.dir / "empty.ckpt"), std::invalid_argument);
}
