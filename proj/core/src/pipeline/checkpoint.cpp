#include "muser/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "muser/error.hpp"
#include "muser/pipeline/model.hpp"
#include "muser/pipeline/prior.hpp"

namespace muser::pipeline {

using json = nlohmann::json;

namespace {

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{b_[pos_++]} << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw DataError("checkpoint: truncated file");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'M', 'U', 'S', 'R'};
constexpr const char* kElementOrder = "fbtcpdv";

std::map<std::string, const num::Tensor*> index_arrays(const Container& c) {
  std::map<std::string, const num::Tensor*> m;
  for (const auto& a : c.arrays) {
    if (!m.emplace(a.name, &a.value).second) throw DataError("checkpoint: duplicate array " + a.name);
  }
  return m;
}

void load_params(const num::ParamList& params, const std::map<std::string, const num::Tensor*>& arrays) {
  for (auto* p : params) {
    const auto it = arrays.find(p->name);
    if (it == arrays.end()) throw DataError("checkpoint: missing parameter " + p->name);
    if (!it->second->same_shape(p->value)) {
      throw DataError("checkpoint: parameter " + p->name + " has shape " + it->second->shape_string() + ", expected " +
                      p->value.shape_string());
    }
    p->value = *it->second;
  }
}

const num::Tensor& require_array(const std::map<std::string, const num::Tensor*>& arrays, const std::string& name) {
  const auto it = arrays.find(name);
  if (it == arrays.end()) throw DataError("checkpoint: missing array " + name);
  return *it->second;
}

json parse_meta(const Container& c, const char* kind) {
  json meta;
  try {
    meta = json::parse(c.metadata);
  } catch (const json::parse_error&) {
    throw DataError("checkpoint: corrupt metadata block");
  }
  if (meta.value("kind", std::string()) != kind) {
    throw DataError(std::string("checkpoint: expected a ") + kind + " checkpoint, found '" +
                    meta.value("kind", std::string("?")) + "'");
  }
  if (meta.value("element_order", std::string()) != kElementOrder) {
    throw DataError("checkpoint: unsupported element order");
  }
  return meta;
}

json base_meta(const char* kind, const TrainConfig& config, const SaveOptions& options) {
  return {{"kind", kind},
          {"config", json::parse(to_json(config, -1))},
          {"vocab_preset", std::string(repr::preset_name(config.model.vocab))},
          {"element_order", kElementOrder},
          {"step", options.step},
          {"rng_state", options.rng_state}};
}

}  // namespace

std::vector<std::uint8_t> encode_container(const Container& c) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put(out, kCheckpointVersion, 4);
  put(out, c.metadata.size(), 4);
  out.insert(out.end(), c.metadata.begin(), c.metadata.end());
  put(out, c.arrays.size(), 4);
  for (const auto& a : c.arrays) {
    if (a.name.size() > 0xFFFF) throw UsageError("checkpoint: array name too long");
    put(out, a.name.size(), 2);
    out.insert(out.end(), a.name.begin(), a.name.end());
    out.push_back(a.store_f32 ? 4 : 8);
    out.push_back(static_cast<std::uint8_t>(a.value.rank()));
    for (auto d : a.value.shape()) put(out, d, 8);
    for (double v : a.value.values()) {
      if (a.store_f32) {
        put(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      } else {
        put(out, std::bit_cast<std::uint64_t>(v), 8);
      }
    }
  }
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  Cursor cur(bytes);
  if (cur.str(4) != std::string(kMagic, 4)) throw DataError("checkpoint: bad magic (not a MUSR file)");
  const auto version = cur.get(4);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Container c;
  c.metadata = cur.str(cur.get(4));
  const auto count = cur.get(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = cur.str(cur.get(2));
    const auto width = cur.get(1);
    if (width != 4 && width != 8) throw DataError("checkpoint: bad element width in " + a.name);
    a.store_f32 = width == 4;
    const auto rank = cur.get(1);
    std::vector<std::size_t> shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(cur.get(8));
    const std::size_t n = num::shape_product(shape);
    if (n > bytes.size()) throw DataError("checkpoint: array " + a.name + " larger than file");
    std::vector<double> values(n);
    for (auto& v : values) {
      v = a.store_f32 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(cur.get(4))))
                      : std::bit_cast<double>(cur.get(8));
    }
    a.value = num::Tensor(std::move(shape), std::move(values));
    c.arrays.push_back(std::move(a));
  }
  if (!cur.done()) throw DataError("checkpoint: trailing bytes");
  return c;
}

void write_container(const Container& c, const std::filesystem::path& path) {
  const auto bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

std::string read_metadata(const std::filesystem::path& path) { return read_container(path).metadata; }

void save_model(MuserModel& model, const TrainConfig& config, const std::filesystem::path& path,
                const SaveOptions& options) {
  json meta = base_meta("muser", config, options);
  meta["codebook_seeded"] = model.codebook_seeded;
  Container c;
  c.metadata = meta.dump();
  for (auto* p : model.parameters()) c.arrays.push_back({p->name, p->value, options.f32});
  // EMA state stays in 64-bit so training can resume exactly.
  const auto& cb = model.codebook;
  c.arrays.push_back({"codebook.embeddings", cb.embeddings(), false});
  c.arrays.push_back({"codebook.ema_count", cb.ema_count(), false});
  c.arrays.push_back({"codebook.ema_sum", cb.ema_sum(), false});
  num::Tensor idle({cb.size()});
  for (std::size_t k = 0; k < cb.size(); ++k) idle[k] = static_cast<double>(cb.idle_steps()[k]);
  c.arrays.push_back({"codebook.idle_steps", idle, false});
  write_container(c, path);
}

LoadedModel load_model(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const json meta = parse_meta(c, "muser");
  LoadedModel out;
  out.config = from_json(meta.at("config").dump());
  out.step = meta.value("step", std::uint64_t{0});
  out.rng_state = meta.value("rng_state", std::string());
  out.model = std::make_unique<MuserModel>(out.config.model, out.config.seed);
  out.model->codebook_seeded = meta.value("codebook_seeded", false);
  const auto arrays = index_arrays(c);
  load_params(out.model->parameters(), arrays);
  const num::Tensor& idle_t = require_array(arrays, "codebook.idle_steps");
  std::vector<std::uint64_t> idle;
  for (double v : idle_t.values()) idle.push_back(static_cast<std::uint64_t>(v));
  const num::Tensor& emb = require_array(arrays, "codebook.embeddings");
  if (emb.rank() != 2 || emb.rows() != out.config.model.codebook_size ||
      emb.cols() != out.config.model.latent_width()) {
    throw DataError("checkpoint: codebook shape does not match the config");
  }
  out.model->codebook.restore(emb, require_array(arrays, "codebook.ema_count"),
                              require_array(arrays, "codebook.ema_sum"), std::move(idle));
  return out;
}

void save_prior(PriorModel& prior, const TrainConfig& config, const std::filesystem::path& path,
                const SaveOptions& options) {
  json meta = base_meta("prior", config, options);
  Container c;
  c.metadata = meta.dump();
  num::ParamList params;
  prior.collect(params);
  for (auto* p : params) c.arrays.push_back({p->name, p->value, options.f32});
  write_container(c, path);
}

PriorConfig prior_config(const TrainConfig& config) {
  PriorConfig pc;
  pc.codebook_size = config.model.codebook_size;
  pc.max_len = config.model.max_len;
  pc.shape = config.model.prior;
  pc.dropout = config.model.dropout;
  return pc;
}

LoadedPrior load_prior(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const json meta = parse_meta(c, "prior");
  LoadedPrior out;
  out.config = from_json(meta.at("config").dump());
  out.prior = std::make_unique<PriorModel>(prior_config(out.config), out.config.seed);
  num::ParamList params;
  out.prior->collect(params);
  load_params(params, index_arrays(c));
  return out;
}

}  // namespace muser::pipeline
