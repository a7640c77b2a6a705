#include "muser/pipeline/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "muser/error.hpp"

namespace muser::pipeline {

using json = nlohmann::json;

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.preset = "paper";
  auto& m = c.model;
  m.vocab = repr::VocabPreset::paper;
  m.max_len = 1024;
  m.codebook_size = 512;
  m.slice_width = 16;
  m.embed_sizes = {32, 64, 128, 256, 512, 128, 128, 128};
  m.encoder = {8, 8, 128, 512};
  m.global_decoder = {4, 8, 256, 1024};
  m.element_decoder = {2, 8, 256, 1024};
  m.dr = {4, 4, 1024, 4096};
  m.prior = {8, 8, 256, 1024};
  m.dropout = 0.1;
  c.alpha = 0.1;
  c.beta = 0.25;
  c.lr_pretrain = 1e-4;
  c.lr_finetune = 1e-5;
  c.batch_size = 16;
  c.clip_norm = 0.0;
  c.sampling = decode::SamplingPolicy::paper();
  c.prior_lr = 1e-4;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.preset = "desk";
  auto& m = c.model;
  m.vocab = repr::VocabPreset::desk;
  m.max_len = 256;
  m.codebook_size = 64;
  m.slice_width = 4;
  m.embed_sizes = {8, 16, 32, 64, 128, 32, 32, 32};
  m.encoder = {2, 4, 32, 128};
  m.global_decoder = {2, 4, 64, 256};
  m.element_decoder = {1, 4, 64, 256};
  m.dr = {2, 2, 256, 1024};
  m.prior = {2, 4, 64, 256};
  m.dropout = 0.1;
  c.alpha = 0.1;
  c.beta = 0.25;
  c.lr_pretrain = 1e-3;
  c.lr_finetune = 1e-4;
  c.batch_size = 8;
  c.clip_norm = 1.0;
  c.sampling = decode::SamplingPolicy::paper();
  c.prior_lr = 1e-3;
  return c;
}

TrainConfig TrainConfig::for_preset(std::string_view name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw UsageError("unknown preset '" + std::string(name) + "' (expected paper or desk)");
}

void TrainConfig::validate() const {
  const auto& m = model;
  auto check_shape = [](const num::TransformerShape& s, const char* what) {
    if (s.layers == 0 || s.heads == 0 || s.width == 0 || s.ff_width == 0 || s.width % s.heads) {
      throw UsageError(std::string("config: invalid ") + what + " shape (width must be divisible by heads)");
    }
  };
  check_shape(m.encoder, "encoder");
  check_shape(m.global_decoder, "global_decoder");
  check_shape(m.element_decoder, "element_decoder");
  check_shape(m.dr, "dr");
  check_shape(m.prior, "prior");
  if (m.max_len < 2) throw UsageError("config: max_len must be at least 2");
  if (m.codebook_size < 2) throw UsageError("config: codebook_size must be at least 2");
  if (m.slice_width == 0) throw UsageError("config: slice_width must be positive");
  for (auto e : m.embed_sizes) {
    if (e == 0) throw UsageError("config: embedding sizes must be positive");
  }
  if (m.dropout < 0.0 || m.dropout >= 1.0) throw UsageError("config: dropout must lie in [0, 1)");
  if (!(m.ema_decay > 0.0 && m.ema_decay < 1.0)) throw UsageError("config: ema_decay must lie in (0, 1)");
  if (m.ema_smoothing < 0.0) throw UsageError("config: ema_smoothing must be non-negative");
  if (alpha < 0.0 || beta < 0.0) throw UsageError("config: loss weights must be non-negative");
  if (!(lr_pretrain > 0.0) || !(lr_finetune > 0.0) || !(prior_lr > 0.0)) {
    throw UsageError("config: learning rates must be positive");
  }
  if (batch_size == 0) throw UsageError("config: batch_size must be positive");
  if (clip_norm < 0.0) throw UsageError("config: clip_norm must be non-negative");
  sampling.validate();
}

namespace {

json shape_json(const num::TransformerShape& s) {
  return {{"layers", s.layers}, {"heads", s.heads}, {"hidden", s.width}, {"ff", s.ff_width}};
}

// Strict object reader: every expected key must be present and no other.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: " + path_ + " must be an object");
  }
  ~Obj() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw UsageError("config: unknown key " + path_ + k);
    }
  }
  Obj(const Obj&) = delete;
  Obj& operator=(const Obj&) = delete;

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw UsageError("config: missing key " + path_ + key);
    return j_.at(key);
  }
  template <class T>
  T get(const std::string& key) {
    const json& v = at(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw UsageError("config: wrong type for " + path_ + key);
    }
  }
  std::size_t count(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_unsigned()) throw UsageError("config: " + path_ + key + " must be a non-negative integer");
    return v.get<std::size_t>();
  }
  [[nodiscard]] std::string child(const std::string& key) const { return path_ + key + "."; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

num::TransformerShape parse_shape(const json& j, const std::string& path) {
  Obj o(j, path);
  return {o.count("layers"), o.count("heads"), o.count("hidden"), o.count("ff")};
}

template <class T, class P>
T parse_enum(Obj& o, const std::string& key, P parser) {
  const auto s = o.get<std::string>(key);
  const auto v = parser(s);
  if (!v) throw UsageError("config: invalid value '" + s + "' for " + key);
  return *v;
}

json to_json_object(const TrainConfig& c) {
  const auto& m = c.model;
  json emb = json::object();
  for (std::size_t k = 0; k < repr::kTokenTypes; ++k) emb[std::string(repr::long_name(repr::kAllTypes[k]))] = m.embed_sizes[k];
  json samp = json::object();
  for (auto e : repr::kElements) {
    samp[std::string(repr::long_name(e))] = {{"temperature", c.sampling[e].temperature},
                                             {"nucleus", c.sampling[e].nucleus}};
  }
  json model = {
      {"vocab_preset", std::string(repr::preset_name(m.vocab))},
      {"max_len", m.max_len},
      {"codebook_size", m.codebook_size},
      {"slice_width", m.slice_width},
      {"latent_width", m.latent_width()},
      {"embed_sizes", emb},
      {"encoder", shape_json(m.encoder)},
      {"global_decoder", shape_json(m.global_decoder)},
      {"element_decoder", shape_json(m.element_decoder)},
      {"dr", shape_json(m.dr)},
      {"prior", shape_json(m.prior)},
      {"dropout", m.dropout},
      {"dr_mode", std::string(med::dr_mode_name(m.dr_mode))},
      {"cond_mode", std::string(decode::cond_mode_name(m.cond_mode))},
      {"decoders", std::string(decode::layout_name(m.decoders))},
      {"med", m.med},
      {"ema_decay", m.ema_decay},
      {"ema_smoothing", m.ema_smoothing},
      {"dead_code_steps", m.dead_code_steps},
  };
  return {
      {"preset", c.preset},
      {"model", model},
      {"alpha", c.alpha},
      {"beta", c.beta},
      {"lr_pretrain", c.lr_pretrain},
      {"lr_finetune", c.lr_finetune},
      {"stage", c.stage == Stage::pretrain ? "pretrain" : "finetune"},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"steps", c.steps},
      {"seed", c.seed},
      {"clip_norm", c.clip_norm},
      {"precision", c.precision == num::Precision::f64 ? "f64" : "f32"},
      {"sampling", samp},
      {"prior_lr", c.prior_lr},
      {"prior_steps", c.prior_steps},
  };
}

TrainConfig from_json_object(const json& j) {
  TrainConfig c;
  Obj o(j, "");
  c.preset = o.get<std::string>("preset");
  {
    Obj mo(o.at("model"), "model.");
    auto& m = c.model;
    m.vocab = parse_enum<repr::VocabPreset>(mo, "vocab_preset", repr::parse_preset);
    m.max_len = mo.count("max_len");
    m.codebook_size = mo.count("codebook_size");
    m.slice_width = mo.count("slice_width");
    if (mo.count("latent_width") != m.latent_width()) {
      throw UsageError("config: model.latent_width must equal 7 * slice_width");
    }
    {
      Obj eo(mo.at("embed_sizes"), "model.embed_sizes.");
      for (std::size_t k = 0; k < repr::kTokenTypes; ++k) {
        m.embed_sizes[k] = eo.count(std::string(repr::long_name(repr::kAllTypes[k])));
      }
    }
    m.encoder = parse_shape(mo.at("encoder"), "model.encoder.");
    m.global_decoder = parse_shape(mo.at("global_decoder"), "model.global_decoder.");
    m.element_decoder = parse_shape(mo.at("element_decoder"), "model.element_decoder.");
    m.dr = parse_shape(mo.at("dr"), "model.dr.");
    m.prior = parse_shape(mo.at("prior"), "model.prior.");
    m.dropout = mo.get<double>("dropout");
    m.dr_mode = parse_enum<med::DrMode>(mo, "dr_mode", med::parse_dr_mode);
    m.cond_mode = parse_enum<decode::CondMode>(mo, "cond_mode", decode::parse_cond_mode);
    m.decoders = parse_enum<decode::DecoderLayout>(mo, "decoders", decode::parse_layout);
    m.med = mo.get<bool>("med");
    m.ema_decay = mo.get<double>("ema_decay");
    m.ema_smoothing = mo.get<double>("ema_smoothing");
    m.dead_code_steps = mo.count("dead_code_steps");
  }
  c.alpha = o.get<double>("alpha");
  c.beta = o.get<double>("beta");
  c.lr_pretrain = o.get<double>("lr_pretrain");
  c.lr_finetune = o.get<double>("lr_finetune");
  const auto stage = o.get<std::string>("stage");
  if (stage == "pretrain") c.stage = Stage::pretrain;
  else if (stage == "finetune") c.stage = Stage::finetune;
  else throw UsageError("config: stage must be pretrain or finetune");
  c.batch_size = o.count("batch_size");
  c.epochs = o.count("epochs");
  c.steps = o.count("steps");
  c.seed = o.get<std::uint64_t>("seed");
  c.clip_norm = o.get<double>("clip_norm");
  const auto prec = o.get<std::string>("precision");
  if (prec == "f64") c.precision = num::Precision::f64;
  else if (prec == "f32") c.precision = num::Precision::f32;
  else throw UsageError("config: precision must be f64 or f32");
  {
    Obj so(o.at("sampling"), "sampling.");
    for (auto e : repr::kElements) {
      const std::string name(repr::long_name(e));
      Obj r(so.at(name), "sampling." + name + ".");
      c.sampling[e] = {r.get<double>("temperature"), r.get<double>("nucleus")};
    }
  }
  c.prior_lr = o.get<double>("prior_lr");
  c.prior_steps = o.count("prior_steps");
  c.validate();
  return c;
}

json parse_text(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(what + ": invalid JSON: " + e.what());
  }
}

}  // namespace

std::string to_json(const TrainConfig& config, int indent) { return to_json_object(config).dump(indent); }

TrainConfig from_json(std::string_view text) { return from_json_object(parse_text(text, "config")); }

TrainConfig resolve_config(std::string_view preset, std::string_view overrides_json) {
  return apply_overrides(TrainConfig::for_preset(preset), overrides_json);
}

TrainConfig apply_overrides(const TrainConfig& config, std::string_view overrides_json) {
  json base = to_json_object(config);
  if (!overrides_json.empty()) {
    const json patch = parse_text(overrides_json, "overrides");
    if (!patch.is_object()) throw UsageError("overrides must be a JSON object");
    if (patch.contains("model") && patch["model"].is_object() && patch["model"].contains("slice_width") &&
        !patch["model"].contains("latent_width")) {
      base["model"]["latent_width"] = patch["model"]["slice_width"].get<std::size_t>() * repr::kElementCount;
    }
    base.merge_patch(patch);
  }
  return from_json_object(base);
}

ConfigFile load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const json j = parse_text(ss.str(), path.string());
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  static const std::set<std::string> allowed = {"preset", "seed", "paths", "overrides"};
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw UsageError("config file: unknown key " + k);
  }
  ConfigFile out;
  json overrides = j.value("overrides", json::object());
  if (!overrides.is_object()) throw UsageError("config file: overrides must be an object");
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw UsageError("config file: seed must be a non-negative integer");
    overrides["seed"] = j["seed"];
  }
  out.preset = j.value("preset", std::string("desk"));
  if (!overrides.empty()) out.overrides = overrides.dump();
  out.config = resolve_config(out.preset, out.overrides);
  if (j.contains("paths")) {
    if (!j["paths"].is_object()) throw UsageError("config file: paths must be an object");
    for (const auto& [k, v] : j["paths"].items()) {
      if (!v.is_string()) throw UsageError("config file: path " + k + " must be a string");
      out.paths[k] = v.get<std::string>();
    }
  }
  return out;
}

}  // namespace muser::pipeline
