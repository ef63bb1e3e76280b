#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pns/bootstrap.hpp"
#include "pns/bounds.hpp"
#include "pns/enn.hpp"
#include "pns/error.hpp"
#include "pns/neural.hpp"
#include "pns/scm_lowdim.hpp"

namespace pns {

/// Bad config value or unknown key. `field()` is the dotted path.
class ConfigError : public PnsError {
 public:
  ConfigError(std::string field, const std::string& message)
      : PnsError("config", field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

enum class Dgp { lowdim, highdim };

struct ExperimentSettings {
  std::string name = "experiment";
  Dgp dgp = Dgp::lowdim;
  std::uint64_t seed = 0;
  std::size_t replicates = 1000;
  std::size_t n_obs = 100000;
  std::size_t n_exp = 50000;
  std::size_t n_test = 3000;
  /// Replicates trained concurrently.
  std::size_t workers = 1;
  std::vector<Method> methods{Method::s_learner, Method::t_learner, Method::anchored,
                              Method::enn,       Method::mb_last_layer, Method::mb_full};
  /// Empty lists mean the single value above.
  std::vector<std::size_t> sweep_n_obs;
  std::vector<std::size_t> sweep_n_exp;
  /// Write per-point interval files.
  bool dump_points = true;
};

/// Low-dimensional SCM fields that replace the preset's values when set.
struct LowDimOverrides {
  std::optional<std::vector<double>> pi_z;
  std::optional<double> pi_x;
  std::optional<double> pi_y;
  std::optional<std::vector<double>> alpha;
  std::optional<std::vector<double>> beta;
  std::optional<double> c_effect;
  std::optional<std::size_t> n_hidden;
};

struct HighDimSettings {
  std::size_t d_obs = 200;
  std::size_t k = 5;
  double gamma = 1.0;
  double eps_clip = 0.05;
  std::size_t propensity_support = 10;
  std::uint64_t scm_seed = 7;
  /// Covariate CSV; empty selects seeded synthetic covariates.
  std::string covariates;
  std::size_t synthetic_rows = 100000;
};

struct EnnSettings {
  HyperSpec hyper;
  EnnTrainConfig train;
  std::size_t draws = 8000;
  double quantile = 0.975;
};

struct BootstrapSettings {
  InfluenceConfig influence;  // mode comes from the method
  std::size_t replicates = 1000;
  double alpha = 0.05;
};

/// Every tunable of a run. Defaults are the published low-dimensional
/// settings.
struct ExperimentConfig {
  ExperimentSettings experiment;
  std::string scm_preset = "li-model-1";
  LowDimOverrides scm_overrides;
  HighDimSettings highdim;
  ArchSpec arch;
  /// Anchored base network (also the bootstrap fit) and the plug-in learners.
  TrainConfig train;
  EnnSettings enn;
  BootstrapSettings bootstrap;
  double eval_alpha = 0.05;

  ExperimentConfig();
  /// Cross-field checks; throws ConfigError.
  void validate() const;
  std::vector<std::size_t> n_obs_grid() const;
  std::vector<std::size_t> n_exp_grid() const;
  /// The preset with `scm_overrides` applied.
  LowDimScm lowdim_scm() const;
};

std::string_view dgp_name(Dgp d);

/// Dotted keys ("section.key") in file order.
const std::vector<std::string>& config_keys();
/// Throws ConfigError on an unknown key or unparsable value.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);

/// INI text with [section] headers and key = value lines. Unknown
/// sections or keys are errors; missing keys keep their defaults.
ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
std::string to_ini(const ExperimentConfig& cfg);
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

}  // namespace pns
