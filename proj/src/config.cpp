#include "pns/config.hpp"

#include <cmath>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "pns/scm_highdim.hpp"

namespace pns {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(key, "expected a finite number, got '" + text + "'");
  }
  return v;
}

bool parse_flag(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(text)) out.push_back(parse_u64(key, item));
  return out;
}

std::vector<double> parse_reals(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const std::string& item : split_list(text)) out.push_back(parse_real(key, item));
  if (out.empty()) throw ConfigError(key, "expected a comma-separated list of numbers");
  return out;
}

std::string format_real(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string format_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string format_reals(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Get>
Field size_field(std::string key, Get member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) { member(c) = parse_u64(key, v); },
          [member](const ExperimentConfig& c) {
            return std::to_string(member(const_cast<ExperimentConfig&>(c)));
          }};
}

template <class Get>
Field real_field(std::string key, Get member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) { member(c) = parse_real(key, v); },
          [member](const ExperimentConfig& c) { return format_real(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class Get>
Field sizes_field(std::string key, Get member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) { member(c) = parse_sizes(key, v); },
          [member](const ExperimentConfig& c) { return format_sizes(member(const_cast<ExperimentConfig&>(c))); }};
}

#define PNS_REF(expr) [](ExperimentConfig & c) -> auto& { return expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"experiment.name",
                 [](ExperimentConfig& c, const std::string& v) { c.experiment.name = trim(v); },
                 [](const ExperimentConfig& c) { return c.experiment.name; }});
    f.push_back({"experiment.dgp",
                 [](ExperimentConfig& c, const std::string& v) {
                   const std::string s = trim(v);
                   if (s == "lowdim") c.experiment.dgp = Dgp::lowdim;
                   else if (s == "highdim") c.experiment.dgp = Dgp::highdim;
                   else throw ConfigError("experiment.dgp", "expected lowdim or highdim, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) { return std::string(dgp_name(c.experiment.dgp)); }});
    f.push_back(size_field("experiment.seed", PNS_REF(c.experiment.seed)));
    f.push_back(size_field("experiment.replicates", PNS_REF(c.experiment.replicates)));
    f.push_back(size_field("experiment.n_obs", PNS_REF(c.experiment.n_obs)));
    f.push_back(size_field("experiment.n_exp", PNS_REF(c.experiment.n_exp)));
    f.push_back(size_field("experiment.n_test", PNS_REF(c.experiment.n_test)));
    f.push_back(size_field("experiment.workers", PNS_REF(c.experiment.workers)));
    f.push_back({"experiment.methods",
                 [](ExperimentConfig& c, const std::string& v) {
                   std::vector<Method> ms;
                   for (const std::string& name : split_list(v)) {
                     try {
                       ms.push_back(parse_method(name));
                     } catch (const std::exception&) {
                       throw ConfigError("experiment.methods", "unknown method '" + name + "'");
                     }
                   }
                   c.experiment.methods = ms;
                 },
                 [](const ExperimentConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.experiment.methods.size(); ++i) {
                     s += (i ? "," : "") + std::string(method_name(c.experiment.methods[i]));
                   }
                   return s;
                 }});
    f.push_back(sizes_field("experiment.sweep_n_obs", PNS_REF(c.experiment.sweep_n_obs)));
    f.push_back(sizes_field("experiment.sweep_n_exp", PNS_REF(c.experiment.sweep_n_exp)));
    f.push_back({"experiment.dump_points",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.experiment.dump_points = parse_flag("experiment.dump_points", v);
                 },
                 [](const ExperimentConfig& c) { return std::string(c.experiment.dump_points ? "true" : "false"); }});

    f.push_back({"scm.preset",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (trim(v) != "li-model-1") throw ConfigError("scm.preset", "unknown preset '" + v + "'");
                   c.scm_preset = trim(v);
                 },
                 [](const ExperimentConfig& c) { return c.scm_preset; }});
    // Empty means "take the preset value".
    auto reals_override = [&f](const std::string& key, auto member) {
      f.push_back({key,
                   [key, member](ExperimentConfig& c, const std::string& v) {
                     auto& slot = member(c.scm_overrides);
                     if (trim(v).empty()) slot.reset();
                     else slot = parse_reals(key, v);
                   },
                   [member](const ExperimentConfig& c) {
                     const auto& slot = member(const_cast<LowDimOverrides&>(c.scm_overrides));
                     return slot ? format_reals(*slot) : std::string();
                   }});
    };
    auto real_override = [&f](const std::string& key, auto member) {
      f.push_back({key,
                   [key, member](ExperimentConfig& c, const std::string& v) {
                     auto& slot = member(c.scm_overrides);
                     if (trim(v).empty()) slot.reset();
                     else slot = parse_real(key, v);
                   },
                   [member](const ExperimentConfig& c) {
                     const auto& slot = member(const_cast<LowDimOverrides&>(c.scm_overrides));
                     return slot ? format_real(*slot) : std::string();
                   }});
    };
    reals_override("scm.pi_z", [](LowDimOverrides& o) -> auto& { return o.pi_z; });
    real_override("scm.pi_x", [](LowDimOverrides& o) -> auto& { return o.pi_x; });
    real_override("scm.pi_y", [](LowDimOverrides& o) -> auto& { return o.pi_y; });
    reals_override("scm.alpha", [](LowDimOverrides& o) -> auto& { return o.alpha; });
    reals_override("scm.beta", [](LowDimOverrides& o) -> auto& { return o.beta; });
    real_override("scm.c_effect", [](LowDimOverrides& o) -> auto& { return o.c_effect; });
    f.push_back({"scm.n_hidden",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (trim(v).empty()) c.scm_overrides.n_hidden.reset();
                   else c.scm_overrides.n_hidden = parse_u64("scm.n_hidden", v);
                 },
                 [](const ExperimentConfig& c) {
                   return c.scm_overrides.n_hidden ? std::to_string(*c.scm_overrides.n_hidden) : std::string();
                 }});

    f.push_back(size_field("highdim.d_obs", PNS_REF(c.highdim.d_obs)));
    f.push_back(size_field("highdim.k", PNS_REF(c.highdim.k)));
    f.push_back(real_field("highdim.gamma", PNS_REF(c.highdim.gamma)));
    f.push_back(real_field("highdim.eps_clip", PNS_REF(c.highdim.eps_clip)));
    f.push_back(size_field("highdim.propensity_support", PNS_REF(c.highdim.propensity_support)));
    f.push_back(size_field("highdim.scm_seed", PNS_REF(c.highdim.scm_seed)));
    f.push_back({"highdim.covariates",
                 [](ExperimentConfig& c, const std::string& v) { c.highdim.covariates = trim(v); },
                 [](const ExperimentConfig& c) { return c.highdim.covariates; }});
    f.push_back(size_field("highdim.synthetic_rows", PNS_REF(c.highdim.synthetic_rows)));

    f.push_back(size_field("network.hidden", PNS_REF(c.arch.hidden)));
    f.push_back(size_field("network.depth", PNS_REF(c.arch.depth)));

    f.push_back(real_field("train.learning_rate", PNS_REF(c.train.learning_rate)));
    f.push_back(size_field("train.batch_size", PNS_REF(c.train.batch_size)));
    f.push_back(size_field("train.epochs", PNS_REF(c.train.epochs)));
    f.push_back(real_field("train.validation_fraction", PNS_REF(c.train.validation_fraction)));
    f.push_back(size_field("train.validation_every", PNS_REF(c.train.validation_every)));

    f.push_back(size_field("enn.index_dim", PNS_REF(c.enn.hyper.index_dim)));
    f.push_back(sizes_field("enn.generator_hidden", PNS_REF(c.enn.hyper.generator_hidden)));
    f.push_back(sizes_field("enn.prior_hidden", PNS_REF(c.enn.hyper.prior_hidden)));
    f.push_back(real_field("enn.prior_scale", PNS_REF(c.enn.hyper.prior_scale)));
    f.push_back(real_field("enn.learning_rate", PNS_REF(c.enn.train.base.learning_rate)));
    f.push_back(size_field("enn.batch_size", PNS_REF(c.enn.train.base.batch_size)));
    f.push_back(size_field("enn.epochs", PNS_REF(c.enn.train.base.epochs)));
    f.push_back(real_field("enn.validation_fraction", PNS_REF(c.enn.train.base.validation_fraction)));
    f.push_back(size_field("enn.validation_every", PNS_REF(c.enn.train.base.validation_every)));
    f.push_back(size_field("enn.index_samples", PNS_REF(c.enn.train.index_samples)));
    f.push_back(size_field("enn.draws", PNS_REF(c.enn.draws)));
    f.push_back(real_field("enn.quantile", PNS_REF(c.enn.quantile)));

    f.push_back(size_field("bootstrap.replicates", PNS_REF(c.bootstrap.replicates)));
    f.push_back(real_field("bootstrap.alpha", PNS_REF(c.bootstrap.alpha)));
    f.push_back(size_field("bootstrap.cg_iters", PNS_REF(c.bootstrap.influence.cg_iters)));
    f.push_back(real_field("bootstrap.damping", PNS_REF(c.bootstrap.influence.damping)));
    f.push_back({"bootstrap.solver",
                 [](ExperimentConfig& c, const std::string& v) {
                   const std::string s = trim(v);
                   if (s == "cg") c.bootstrap.influence.solver = HessianSolver::cg;
                   else if (s == "direct") c.bootstrap.influence.solver = HessianSolver::direct;
                   else throw ConfigError("bootstrap.solver", "expected cg or direct, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.bootstrap.influence.solver == HessianSolver::cg ? "cg" : "direct");
                 }});
    f.push_back(size_field("bootstrap.explicit_max_params", PNS_REF(c.bootstrap.influence.explicit_max_params)));
    f.push_back(size_field("bootstrap.full_network_max_params",
                           PNS_REF(c.bootstrap.influence.full_network_max_params)));

    f.push_back(real_field("eval.alpha", PNS_REF(c.eval_alpha)));
    return f;
  }();
  return all;
}

#undef PNS_REF

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError(key, "unknown key");
}

void require(bool ok, const std::string& key, const std::string& message) {
  if (!ok) throw ConfigError(key, message);
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  // Bootstrap base network settings.
  train.learning_rate = 1e-3;
  train.batch_size = 256;
  train.epochs = 100;
  train.validation_fraction = 0.1;
  train.validation_every = 100;
}

std::string_view dgp_name(Dgp d) { return d == Dgp::lowdim ? "lowdim" : "highdim"; }

std::vector<std::size_t> ExperimentConfig::n_obs_grid() const {
  return experiment.sweep_n_obs.empty() ? std::vector<std::size_t>{experiment.n_obs} : experiment.sweep_n_obs;
}

std::vector<std::size_t> ExperimentConfig::n_exp_grid() const {
  return experiment.sweep_n_exp.empty() ? std::vector<std::size_t>{experiment.n_exp} : experiment.sweep_n_exp;
}

LowDimScm ExperimentConfig::lowdim_scm() const {
  LowDimScm scm = li_model_1();
  const LowDimOverrides& o = scm_overrides;
  if (o.pi_z) scm.pi_z = *o.pi_z;
  if (o.pi_x) scm.pi_x = *o.pi_x;
  if (o.pi_y) scm.pi_y = *o.pi_y;
  if (o.alpha) scm.alpha = *o.alpha;
  if (o.beta) scm.beta = *o.beta;
  if (o.c_effect) scm.c_effect = *o.c_effect;
  if (o.n_hidden) scm.n_hidden = *o.n_hidden;
  return scm;
}

void ExperimentConfig::validate() const {
  require(!experiment.name.empty(), "experiment.name", "must not be empty");
  require(experiment.name.find_first_of("/\\") == std::string::npos, "experiment.name",
          "must not contain path separators");
  require(experiment.replicates >= 1, "experiment.replicates", "must be at least 1");
  require(experiment.n_test >= 1, "experiment.n_test", "must be at least 1");
  require(experiment.workers >= 1, "experiment.workers", "must be at least 1");
  require(!experiment.methods.empty(), "experiment.methods", "must list at least one method");
  for (Method m : experiment.methods) {
    require(m != Method::plug_in, "experiment.methods", "plug_in is not a trainable method");
    require(std::count(experiment.methods.begin(), experiment.methods.end(), m) == 1, "experiment.methods",
            "duplicate method '" + std::string(method_name(m)) + "'");
  }
  for (std::size_t n : n_obs_grid()) require(n >= 10, "experiment.n_obs", "needs at least 10 rows");
  for (std::size_t n : n_exp_grid()) require(n >= 10, "experiment.n_exp", "needs at least 10 rows");
  require(arch.hidden >= 1, "network.hidden", "must be positive");
  require(arch.depth >= 1, "network.depth", "must be positive");
  auto check_train = [](const TrainConfig& t, const std::string& section) {
    require(t.learning_rate > 0.0, section + ".learning_rate", "must be positive");
    require(t.batch_size >= 1, section + ".batch_size", "must be positive");
    require(t.epochs >= 1, section + ".epochs", "must be positive");
    require(t.validation_fraction >= 0.0 && t.validation_fraction < 1.0, section + ".validation_fraction",
            "must lie in [0,1)");
  };
  check_train(train, "train");
  check_train(enn.train.base, "enn");
  require(enn.hyper.index_dim >= 1, "enn.index_dim", "must be positive");
  require(enn.hyper.prior_scale >= 0.0, "enn.prior_scale", "must be non-negative");
  require(enn.train.index_samples >= 1, "enn.index_samples", "must be positive");
  require(enn.draws >= 2, "enn.draws", "needs at least 2 draws");
  require(enn.quantile > 0.0 && enn.quantile < 1.0, "enn.quantile", "must lie in (0,1)");
  require(bootstrap.replicates >= 100, "bootstrap.replicates", "needs at least 100 replicates");
  require(bootstrap.alpha > 0.0 && bootstrap.alpha < 1.0, "bootstrap.alpha", "must lie in (0,1)");
  require(bootstrap.influence.damping >= 0.0, "bootstrap.damping", "must be non-negative");
  require(bootstrap.influence.cg_iters >= 1, "bootstrap.cg_iters", "must be positive");
  require(eval_alpha > 0.0 && eval_alpha < 1.0, "eval.alpha", "must lie in (0,1)");
  if (experiment.dgp == Dgp::lowdim) {
    const LowDimScm scm = lowdim_scm();
    try {
      scm.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("scm", e.what());
    }
  }
  if (experiment.dgp == Dgp::highdim) {
    require(highdim.d_obs >= 1, "highdim.d_obs", "must be positive");
    require(highdim.k <= kMaxLatent, "highdim.k", "at most " + std::to_string(kMaxLatent) + " latent variables");
    require(highdim.eps_clip > 0.0 && highdim.eps_clip < 0.5, "highdim.eps_clip", "must lie in (0,0.5)");
    require(!highdim.covariates.empty() || highdim.synthetic_rows >= 1, "highdim.synthetic_rows",
            "must be positive without a covariate file");
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, value);
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
  return find_field(key).get(cfg);
}

ExperimentConfig parse_config(std::istream& in, const std::string& source) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()), e.message());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section, "key outside any section");
    for (const auto& [key, value] : body) set_config_value(cfg, section + "." + key, value.data());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PnsError("io", "cannot read config " + path.string());
  return parse_config(in, path.string());
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    j[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(cfg);
  }
  return j;
}

}  // namespace pns
