#include "pns/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "pns/error.hpp"

namespace pns {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

namespace {

constexpr std::array<char, 8> kMagic{'P', 'N', 'S', 'C', 'K', 'P', 'T', '\0'};

using Json = nlohmann::ordered_json;

struct Writer {
  Json header = Json::object();
  std::vector<std::pair<std::string, std::vector<double>>> blobs;

  void blob(const std::string& name, std::span<const double> v) {
    blobs.emplace_back(name, std::vector<double>(v.begin(), v.end()));
  }
};

struct Reader {
  Json header;
  std::map<std::string, std::vector<double>> blobs;

  const std::vector<double>& blob(const std::string& name) const {
    const auto it = blobs.find(name);
    if (it == blobs.end()) throw PnsError("format", "checkpoint is missing blob '" + name + "'");
    return it->second;
  }
  ParamVector params(const std::string& name, std::size_t expected) const {
    const auto& v = blob(name);
    if (v.size() != expected) {
      throw PnsError("format", "checkpoint blob '" + name + "' has " + std::to_string(v.size()) +
                                   " values, layout needs " + std::to_string(expected));
    }
    return ParamVector(v.begin(), v.end());
  }
};

Json layout_json(const NetworkLayout& l) { return Json{{"trunk", l.trunk_widths()}, {"heads", l.head_dims()}}; }

NetworkLayout layout_from(const Json& j) {
  return NetworkLayout(j.at("trunk").get<std::vector<std::size_t>>(), j.at("heads").get<std::vector<std::size_t>>());
}

Json log_json(const TrainingLog& log) {
  Json v = Json::array();
  for (const auto& [epoch, loss] : log.validation_loss) v.push_back(Json::array({epoch, loss}));
  return Json{{"epoch_loss", log.epoch_loss}, {"validation_loss", v}};
}

TrainingLog log_from(const Json& j) {
  TrainingLog log;
  log.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  for (const auto& e : j.at("validation_loss")) log.validation_loss.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<double>());
  return log;
}

void put_standardizer(Writer& w, const std::string& prefix, const Standardizer& s) {
  w.blob(prefix + ".mean", s.mean);
  w.blob(prefix + ".scale", s.scale);
}

Standardizer get_standardizer(const Reader& r, const std::string& prefix) {
  Standardizer s;
  s.mean = r.blob(prefix + ".mean");
  s.scale = r.blob(prefix + ".scale");
  if (s.mean.size() != s.scale.size()) throw PnsError("format", "standardizer blobs differ in length");
  return s;
}

Json arch_json(const ArchSpec& a) { return Json{{"input_dim", a.input_dim}, {"hidden", a.hidden}, {"depth", a.depth}}; }

ArchSpec arch_from(const Json& j) {
  return ArchSpec{j.at("input_dim").get<std::size_t>(), j.at("hidden").get<std::size_t>(), j.at("depth").get<std::size_t>()};
}

void put_classifier(Writer& w, Json& models, const std::string& name, const Classifier& c) {
  models[name] = Json{{"layout", layout_json(c.layout)}, {"log", log_json(c.log)}};
  w.blob(name, c.params);
}

Classifier get_classifier(const Reader& r, const Json& models, const std::string& name) {
  Classifier c;
  const Json& j = models.at(name);
  c.layout = layout_from(j.at("layout"));
  c.params = r.params(name, c.layout.parameter_count());
  c.log = log_from(j.at("log"));
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const int set = ckpt.anchored.has_value() + ckpt.enn.has_value() + ckpt.plug_in.has_value();
  if (set != 1) throw std::invalid_argument("checkpoint must hold exactly one model");
  Writer w;
  w.header["format"] = "pns-checkpoint";
  w.header["method"] = method_name(ckpt.method);
  if (ckpt.anchored) {
    const TrainedAnchored& a = *ckpt.anchored;
    w.header["kind"] = "anchored";
    w.header["layout"] = layout_json(a.params.layout);
    w.header["log"] = log_json(a.log);
    put_standardizer(w, "standardizer", a.standardizer);
    w.blob("params", a.params.values);
  } else if (ckpt.enn) {
    const HyperModel& h = ckpt.enn->hyper;
    w.header["kind"] = "enn";
    w.header["arch"] = arch_json(h.arch);
    w.header["index_dim"] = h.index_dim;
    w.header["prior_scale"] = h.prior_scale;
    w.header["base_layout"] = layout_json(h.base_layout);
    w.header["generator_layout"] = layout_json(h.generator_layout);
    w.header["prior_layout"] = layout_json(h.prior_layout);
    w.header["log"] = log_json(ckpt.enn->log);
    put_standardizer(w, "standardizer", ckpt.enn->standardizer);
    w.blob("base", h.base);
    w.blob("scales", h.scales);
    w.blob("generator", h.generator);
    w.blob("prior", h.prior);
  } else {
    const PlugInModel& m = *ckpt.plug_in;
    w.header["kind"] = "plug_in";
    put_standardizer(w, "standardizer", m.standardizer);
    Json models = Json::object();
    put_classifier(w, models, "joint", m.joint);
    put_classifier(w, models, "outcome", m.outcome);
    if (m.method == Method::t_learner) put_classifier(w, models, "outcome_treated", m.outcome_treated);
    w.header["models"] = models;
  }
  w.header["meta"] = ckpt.meta;
  Json list = Json::array();
  for (const auto& [name, v] : w.blobs) list.push_back(Json{{"name", name}, {"count", v.size()}});
  w.header["blobs"] = list;

  const std::string text = w.header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PnsError("io", "cannot write " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, v] : w.blobs) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw PnsError("io", "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PnsError("io", "cannot read " + path.string());
  std::array<char, 8> magic{};
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw PnsError("format", path.string() + " is not a checkpoint");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in) throw PnsError("format", path.string() + ": truncated header");
  if (version != kCheckpointVersion) {
    throw PnsError("format", path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (len > (std::uint64_t{1} << 32)) throw PnsError("format", path.string() + ": implausible header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw PnsError("format", path.string() + ": truncated header");

  Reader r;
  try {
    r.header = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw PnsError("format", path.string() + ": bad header: " + e.what());
  }
  try {
    for (const auto& b : r.header.at("blobs")) {
      std::vector<double> v(b.at("count").get<std::size_t>());
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
      if (!in) throw PnsError("format", path.string() + ": truncated blob '" + b.at("name").get<std::string>() + "'");
      r.blobs[b.at("name").get<std::string>()] = std::move(v);
    }

    Checkpoint ckpt;
    ckpt.method = parse_method(r.header.at("method").get<std::string>());
    ckpt.meta = r.header.at("meta");
    const std::string kind = r.header.at("kind").get<std::string>();
    if (kind == "anchored") {
      TrainedAnchored a;
      a.params.layout = layout_from(r.header.at("layout"));
      a.params.values = r.params("params", a.params.layout.parameter_count());
      a.standardizer = get_standardizer(r, "standardizer");
      a.log = log_from(r.header.at("log"));
      ckpt.anchored = std::move(a);
    } else if (kind == "enn") {
      TrainedEnn e;
      HyperModel& h = e.hyper;
      h.arch = arch_from(r.header.at("arch"));
      h.index_dim = r.header.at("index_dim").get<std::size_t>();
      h.prior_scale = r.header.at("prior_scale").get<double>();
      h.base_layout = layout_from(r.header.at("base_layout"));
      h.generator_layout = layout_from(r.header.at("generator_layout"));
      h.prior_layout = layout_from(r.header.at("prior_layout"));
      h.base = r.params("base", h.base_layout.parameter_count());
      h.scales = r.params("scales", h.base_layout.parameter_count());
      h.generator = r.params("generator", h.generator_layout.parameter_count());
      h.prior = r.params("prior", h.prior_layout.parameter_count());
      if (h.generator_layout.input_dim() != h.index_dim || h.prior_layout.input_dim() != h.index_dim) {
        throw PnsError("format", "hypermodel input width differs from index_dim");
      }
      e.standardizer = get_standardizer(r, "standardizer");
      e.log = log_from(r.header.at("log"));
      ckpt.enn = std::move(e);
    } else if (kind == "plug_in") {
      PlugInModel m;
      m.method = ckpt.method;
      m.standardizer = get_standardizer(r, "standardizer");
      const Json& models = r.header.at("models");
      m.joint = get_classifier(r, models, "joint");
      m.outcome = get_classifier(r, models, "outcome");
      if (m.method == Method::t_learner) m.outcome_treated = get_classifier(r, models, "outcome_treated");
      ckpt.plug_in = std::move(m);
    } else {
      throw PnsError("format", "unknown checkpoint kind '" + kind + "'");
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw PnsError("format", path.string() + ": bad header: " + e.what());
  }
}

}  // namespace pns
