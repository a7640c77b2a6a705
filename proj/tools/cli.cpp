#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "muser/error.hpp"
#include "muser/eval/latents.hpp"
#include "muser/eval/metrics.hpp"
#include "muser/pipeline/checkpoint.hpp"
#include "muser/pipeline/generate.hpp"
#include "muser/pipeline/gradcheck.hpp"
#include "muser/pipeline/model.hpp"
#include "muser/pipeline/prior.hpp"
#include "muser/pipeline/synthetic.hpp"
#include "muser/pipeline/trainer.hpp"
#include "muser/repr/event_stream.hpp"
#include "muser/repr/midi.hpp"
#include "muser/repr/tokenizer.hpp"

namespace muser::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using pipeline::TrainConfig;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string overrides;
  std::string manifest;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file {preset, seed, paths, overrides}");
  sub->add_option("--preset", c.preset, "paper or desk");
  c.seed_opt = sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--override", c.overrides, "JSON merge-patch applied over the resolved config");
  sub->add_option("--manifest", c.manifest, "Run manifest path (default <out>.manifest.json)");
}

std::size_t thread_cap() {
  const char* env = std::getenv("MUSER_THREADS");
  if (!env || !*env) return 1;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(env, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != std::string(env).size() || v < 1) throw UsageError("MUSER_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

/// Resolved configuration plus everything echoed to the manifest.
class Run {
 public:
  Run(std::string command, const std::vector<std::string>& args, std::ostream& err)
      : command_(std::move(command)), args_(args), err_(err) {}

  /// Config file, then --preset, then --override, then --seed.
  void resolve(const Common& c) {
    std::string preset = c.preset;
    std::string file_overrides;
    if (!c.config.empty()) {
      const auto file = pipeline::load_config_file(c.config);
      paths_ = file.paths;
      if (preset.empty()) preset = file.preset;
      file_overrides = file.overrides;
    }
    if (preset.empty()) preset = "desk";
    config = pipeline::resolve_config(preset, file_overrides);
    config = pipeline::apply_overrides(config, c.overrides);
    if (c.seed_opt && c.seed_opt->count()) config.seed = c.seed;
    finish(c);
  }

  /// Model fields come from a checkpoint; overrides may not change them.
  void resolve_from(const TrainConfig& base, const Common& c) {
    std::string file_overrides;
    if (!c.config.empty()) {
      const auto file = pipeline::load_config_file(c.config);
      paths_ = file.paths;
      file_overrides = file.overrides;
    }
    config = pipeline::apply_overrides(base, file_overrides);
    config = pipeline::apply_overrides(config, c.overrides);
    if (c.seed_opt && c.seed_opt->count()) config.seed = c.seed;
    const json a = json::parse(pipeline::to_json(base))["model"];
    const json b = json::parse(pipeline::to_json(config))["model"];
    if (a != b) throw UsageError("model settings come from the checkpoint and cannot be overridden");
    finish(c);
  }

  /// Flag value, else the config file's `paths` entry.
  std::string path(const std::string& flag_value, const std::string& key) const {
    if (!flag_value.empty()) return flag_value;
    const auto it = paths_.find(key);
    return it == paths_.end() ? std::string() : it->second;
  }

  void input(const std::string& p) { inputs_.push_back(p); }
  void output(const std::string& p) { outputs_.push_back(p); }
  json& result() { return result_; }

  void write_manifest() const {
    std::string target = manifest_;
    if (target.empty() && !outputs_.empty()) target = outputs_.front() + ".manifest.json";
    if (target.empty()) return;
    json m;
    m["command"] = command_;
    m["args"] = args_;
    m["preset"] = config.preset;
    m["seed"] = config.seed;
    m["threads"] = threads_;
    m["config"] = json::parse(pipeline::to_json(config));
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["result"] = result_;
    std::ofstream out(target);
    if (!out) throw DataError("cannot write manifest: " + target);
    out << m.dump(2) << '\n';
  }

  TrainConfig config;

 private:
  void finish(const Common& c) {
    manifest_ = c.manifest;
    threads_ = thread_cap();
    err_ << "[muser] " << command_ << " preset=" << config.preset << " seed=" << config.seed
         << " threads=" << threads_ << "\n[muser] config " << json::parse(pipeline::to_json(config)).dump() << "\n";
  }

  std::string command_;
  std::vector<std::string> args_;
  std::ostream& err_;
  std::map<std::string, std::string> paths_;
  std::string manifest_;
  std::size_t threads_ = 1;
  std::vector<std::string> inputs_, outputs_;
  json result_ = json::object();
};

void require_path(const std::string& p, const std::string& what) {
  if (p.empty()) throw UsageError("missing " + what);
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return s;
}

bool is_midi(const fs::path& p) {
  const auto e = lower(p.extension().string());
  return e == ".mid" || e == ".midi";
}
bool is_stream(const fs::path& p) { return lower(p.extension().string()) == ".json"; }

/// Q1_..Q4_ filename prefix.
repr::Emotion emotion_from_name(const fs::path& p) {
  const std::string stem = p.filename().string();
  if (stem.size() >= 3 && (stem[0] == 'Q' || stem[0] == 'q') && stem[2] == '_') {
    if (auto e = repr::parse_emotion(std::string("Q") + stem[1])) return *e;
  }
  return repr::Emotion::none;
}

std::vector<fs::path> expand(const std::vector<std::string>& paths) {
  std::vector<fs::path> out;
  for (const auto& p : paths) {
    require_path(p, "input");
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::recursive_directory_iterator(p)) {
        if (entry.is_regular_file() && (is_midi(entry.path()) || is_stream(entry.path()))) found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(p);
    }
  }
  return out;
}

struct Piece {
  std::string id;
  repr::CpSequence sequence;
  repr::Score score;
};

Piece load_piece(const fs::path& path, const repr::Vocabulary& vocab, std::size_t max_len,
                 std::optional<repr::Emotion> emotion, std::ostream& err) {
  Piece piece;
  piece.id = path.stem().string();
  if (is_stream(path)) {
    auto stream = repr::load_event_stream(path);
    if (stream.preset != vocab.preset()) {
      throw DataError(path.string() + ": event stream uses the " + std::string(repr::preset_name(stream.preset)) +
                      " vocabulary, expected " + std::string(repr::preset_name(vocab.preset())));
    }
    if (max_len && stream.sequence.size() > max_len) {
      throw DataError(path.string() + ": event stream longer than max_len " + std::to_string(max_len));
    }
    piece.sequence = std::move(stream.sequence);
    piece.score = repr::detokenize(piece.sequence, vocab).score;
    return piece;
  }
  if (!is_midi(path)) throw UsageError("unsupported input (expected .mid, .midi or .json): " + path.string());
  piece.score = repr::read_midi_file(path);
  const auto e = emotion ? *emotion : emotion_from_name(path);
  auto tok = repr::tokenize(piece.score, e, vocab, {.max_length = max_len});
  if (tok.report.truncated) {
    err << "[muser] " << piece.id << ": truncated to " << tok.report.bars_emitted << " bars\n";
  }
  if (tok.report.clamped) err << "[muser] " << piece.id << ": " << tok.report.clamped << " values clamped\n";
  piece.sequence = std::move(tok.sequence);
  return piece;
}

std::vector<Piece> load_corpus(Run& run, const std::vector<std::string>& paths, std::size_t synthetic,
                               std::size_t bars, const repr::Vocabulary& vocab, std::size_t max_len,
                               std::optional<repr::Emotion> emotion, std::ostream& err) {
  std::vector<Piece> out;
  if (synthetic > 0) {
    if (pipeline::synthetic_max_length(bars) > max_len) {
      throw UsageError("synthetic pieces of " + std::to_string(bars) + " bars need max_len >= " +
                       std::to_string(pipeline::synthetic_max_length(bars)));
    }
    const auto pieces = pipeline::synthetic_corpus(vocab, {.count = synthetic, .bars = bars, .seed = run.config.seed});
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      out.push_back({"synthetic_" + std::to_string(i), pieces[i].sequence, pieces[i].score});
    }
    run.input("synthetic:" + std::to_string(synthetic) + "x" + std::to_string(bars));
  }
  for (const auto& p : expand(paths)) {
    out.push_back(load_piece(p, vocab, max_len, emotion, err));
    run.input(p.string());
  }
  if (out.empty()) throw UsageError("empty corpus (give --corpus or --synthetic)");
  return out;
}

std::optional<repr::Emotion> parse_emotion_flag(const std::string& s) {
  if (s.empty()) return std::nullopt;
  auto e = repr::parse_emotion(s);
  if (!e) throw UsageError("unknown emotion '" + s + "' (expected Q1..Q4 or none)");
  return e;
}

std::vector<repr::TokenType> parse_elements(const std::string& s) {
  std::vector<repr::TokenType> out;
  if (s.empty() || s == "none") return out;
  for (char ch : s) {
    if (ch == ',' || ch == ' ') continue;
    auto t = repr::parse_element(std::string(1, ch));
    if (!t || *t == repr::TokenType::emotion) throw UsageError(std::string("unknown element '") + ch + "' (use f b t c p d v)");
    if (std::find(out.begin(), out.end(), *t) == out.end()) out.push_back(*t);
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

void write_sequence(const repr::CpSequence& seq, const repr::Vocabulary& vocab, const std::string& path) {
  if (is_stream(path)) {
    repr::save_event_stream({vocab.preset(), seq}, path);
  } else {
    repr::write_midi_file(repr::detokenize(seq, vocab).score, path);
  }
}

std::vector<repr::CpSequence> sequences(const std::vector<Piece>& pieces) {
  std::vector<repr::CpSequence> out;
  out.reserve(pieces.size());
  for (const auto& p : pieces) out.push_back(p.sequence);
  return out;
}

// tokenize ------------------------------------------------------------------

struct TokenizeArgs {
  Common common;
  std::string in, out, emotion;
  std::size_t max_len = 0;
};

int cmd_tokenize(Run& run, TokenizeArgs& a, std::ostream& out, std::ostream& err) {
  run.resolve(a.common);
  const auto vocab = repr::Vocabulary::for_preset(run.config.model.vocab);
  require_path(a.in, "--in");
  if (a.out.empty()) throw UsageError("missing --out");
  run.input(a.in);
  if (is_stream(a.in)) {
    const auto stream = repr::load_event_stream(a.in);
    const auto v = repr::Vocabulary::for_preset(stream.preset);
    const auto det = repr::detokenize(stream.sequence, v);
    repr::write_midi_file(det.score, a.out);
    out << "wrote " << det.score.notes.size() << " notes to " << a.out;
    if (det.skipped) out << " (" << det.skipped << " incomplete note tokens skipped)";
    out << "\n";
    run.result()["notes"] = det.score.notes.size();
  } else {
    const auto piece = load_piece(a.in, vocab, a.max_len, parse_emotion_flag(a.emotion), err);
    repr::save_event_stream({vocab.preset(), piece.sequence}, a.out);
    out << "wrote " << piece.sequence.size() << " tokens to " << a.out << "\n";
    run.result()["tokens"] = piece.sequence.size();
  }
  run.output(a.out);
  run.write_manifest();
  return kExitOk;
}

// train ---------------------------------------------------------------------

struct CorpusArgs {
  std::vector<std::string> corpus;
  std::size_t synthetic = 0;
  std::size_t bars = 2;
  std::string emotion;
};

void add_corpus(CLI::App* sub, CorpusArgs& c) {
  sub->add_option("--corpus", c.corpus, "MIDI / event-stream files or directories");
  sub->add_option("--synthetic", c.synthetic, "Use N generated pieces with planted factors");
  sub->add_option("--bars", c.bars, "Bars per synthetic piece");
  sub->add_option("--emotion", c.emotion, "Emotion label for MIDI inputs (default: Qn_ filename prefix)");
}

struct TrainArgs {
  Common common;
  CorpusArgs corpus;
  std::string out, init;
  std::size_t steps = 0, log_every = 50;
  bool f32 = false;
};

int cmd_train(Run& run, TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::optional<pipeline::LoadedModel> init;
  if (!a.init.empty()) {
    require_path(a.init, "--init");
    init = pipeline::load_model(a.init);
    run.resolve_from(init->config, a.common);
    run.input(a.init);
  } else {
    run.resolve(a.common);
  }
  if (a.steps) run.config.steps = a.steps;
  const std::string target = run.path(a.out, "ckpt");
  if (target.empty()) throw UsageError("missing --out");
  const auto& cfg = run.config;
  const auto vocab = repr::Vocabulary::for_preset(cfg.model.vocab);
  std::vector<std::string> inputs = a.corpus.corpus;
  if (inputs.empty() && !a.corpus.synthetic && !run.path("", "corpus").empty()) inputs.push_back(run.path("", "corpus"));
  const auto pieces = load_corpus(run, inputs, a.corpus.synthetic, a.corpus.bars, vocab, cfg.model.max_len,
                                  parse_emotion_flag(a.corpus.emotion), err);
  const auto corpus = sequences(pieces);

  std::unique_ptr<pipeline::MuserModel> owned;
  pipeline::MuserModel* model = nullptr;
  if (init) {
    model = init->model.get();
  } else {
    owned = std::make_unique<pipeline::MuserModel>(cfg.model, cfg.seed);
    model = owned.get();
  }
  pipeline::Trainer trainer(*model, cfg);
  if (init) trainer.restore_rng(init->rng_state);
  const auto report = pipeline::train(*model, trainer, corpus, cfg, [&](const pipeline::StepReport& s) {
    if (!s.applied || (a.log_every && s.step % a.log_every == 0)) {
      out << "step " << s.step << " total " << s.loss.total << " rec " << s.loss.rec_total << " commit "
          << s.loss.commit;
      if (s.loss.reg_computed) out << " reg " << s.loss.reg;
      if (!s.message.empty()) out << " (" << s.message << ")";
      out << "\n";
    }
  });
  run.result()["steps"] = report.steps.size();
  run.result()["initial_total"] = report.initial_total;
  run.result()["final_total"] = report.final_total;
  if (report.aborted) {
    err << "[muser] numeric fault: " << report.steps.back().message << "\n";
    run.result()["fault"] = report.steps.back().message;
    run.write_manifest();
    return kExitNumeric;
  }
  std::vector<const repr::CpSequence*> probe;
  for (std::size_t i = 0; i < std::min(cfg.batch_size, corpus.size()); ++i) probe.push_back(&corpus[i]);
  const auto acc = pipeline::evaluate_accuracy(*model, model->make_batch(probe));
  pipeline::save_model(*model, cfg, target,
                       {.f32 = a.f32, .step = (init ? init->step : 0) + trainer.step(), .rng_state = trainer.rng_state()});
  out << "trained " << report.steps.size() << " steps, loss " << report.initial_total << " -> " << report.final_total
      << ", teacher-forced accuracy " << acc.mean << "\nwrote " << target << "\n";
  run.result()["accuracy"] = acc.mean;
  run.output(target);
  run.write_manifest();
  return kExitOk;
}

// train-prior ---------------------------------------------------------------

struct PriorArgs {
  Common common;
  CorpusArgs corpus;
  std::string ckpt, out;
  std::size_t steps = 0;
};

int cmd_train_prior(Run& run, PriorArgs& a, std::ostream& out, std::ostream& err) {
  const std::string ckpt = run.path(a.ckpt, "ckpt");
  require_path(ckpt, "--ckpt");
  auto loaded = pipeline::load_model(ckpt);
  run.resolve_from(loaded.config, a.common);
  run.input(ckpt);
  if (a.steps) run.config.prior_steps = a.steps;
  const std::string target = run.path(a.out, "prior");
  if (target.empty()) throw UsageError("missing --out");
  const auto& cfg = run.config;
  auto& model = *loaded.model;
  const auto pieces = load_corpus(run, a.corpus.corpus, a.corpus.synthetic, a.corpus.bars, model.vocab(),
                                  cfg.model.max_len, parse_emotion_flag(a.corpus.emotion), err);
  pipeline::PriorCorpus pc;
  const std::size_t N = cfg.model.max_len;
  for (const auto& p : pieces) {
    if (p.sequence.emotion == repr::Emotion::none) throw DataError(p.id + ": the prior needs emotion-labeled pieces");
    const repr::CpSequence* one[] = {&p.sequence};
    const auto q = model.encode(model.make_batch(std::span<const repr::CpSequence* const>(one)), cfg.precision);
    pc.codes.emplace_back(q.codes.begin(), q.codes.begin() + static_cast<std::ptrdiff_t>(N));
    pc.emotions.push_back(p.sequence.emotion);
  }
  pipeline::PriorModel prior(pipeline::prior_config(cfg), cfg.seed);
  const auto report = pipeline::train_prior(prior, pc,
                                            {.steps = cfg.prior_steps,
                                             .batch_size = cfg.batch_size,
                                             .lr = cfg.prior_lr,
                                             .clip_norm = cfg.clip_norm,
                                             .seed = cfg.seed,
                                             .precision = cfg.precision});
  pipeline::save_prior(prior, cfg, target);
  const double final_loss = report.losses.empty() ? report.initial_loss : report.losses.back();
  out << "prior trained " << report.losses.size() << " steps, loss " << report.initial_loss << " -> " << final_loss
      << ", next-code accuracy " << report.final_accuracy << "\nwrote " << target << "\n";
  run.result()["initial_loss"] = report.initial_loss;
  run.result()["final_loss"] = final_loss;
  run.result()["accuracy"] = report.final_accuracy;
  run.result()["skipped_steps"] = report.skipped_steps;
  run.output(target);
  run.write_manifest();
  return kExitOk;
}

// generate ------------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::string ckpt, prior, emotion, out;
  std::size_t max_len = 0;
  double prior_temperature = 1.0;
};

int cmd_generate(Run& run, GenerateArgs& a, std::ostream& out, std::ostream&) {
  const std::string ckpt = run.path(a.ckpt, "ckpt"), prior_path = run.path(a.prior, "prior");
  require_path(ckpt, "--ckpt");
  require_path(prior_path, "--prior");
  if (a.out.empty()) throw UsageError("missing --out");
  const auto emotion = parse_emotion_flag(a.emotion);
  if (!emotion || *emotion == repr::Emotion::none) throw UsageError("generate needs --emotion Q1..Q4");
  auto loaded = pipeline::load_model(ckpt);
  auto prior = pipeline::load_prior(prior_path);
  run.resolve_from(loaded.config, a.common);
  run.input(ckpt);
  run.input(prior_path);
  const auto g = pipeline::generate(*loaded.model, *prior.prior,
                                    {.emotion = *emotion,
                                     .max_len = a.max_len,
                                     .seed = run.config.seed,
                                     .policy = run.config.sampling,
                                     .prior_temperature = a.prior_temperature});
  write_sequence(g.sequence, loaded.model->vocab(), a.out);
  out << "generated " << g.sequence.size() << " tokens (" << repr::emotion_name(*emotion) << ") -> " << a.out << "\n";
  run.result()["tokens"] = g.sequence.size();
  run.output(a.out);
  run.write_manifest();
  return kExitOk;
}

// transfer ------------------------------------------------------------------

struct TransferArgs {
  Common common;
  std::string a, b, elements, ckpt, out, report, emotion;
  std::size_t max_len = 0;
};

int cmd_transfer(Run& run, TransferArgs& t, std::ostream& out, std::ostream& err) {
  const std::string ckpt = run.path(t.ckpt, "ckpt");
  require_path(ckpt, "--ckpt");
  require_path(t.a, "--a");
  require_path(t.b, "--b");
  if (t.out.empty()) throw UsageError("missing --out");
  const auto transfer = parse_elements(t.elements);
  auto loaded = pipeline::load_model(ckpt);
  run.resolve_from(loaded.config, t.common);
  run.input(ckpt);
  run.input(t.a);
  run.input(t.b);
  auto& model = *loaded.model;
  const auto emotion = parse_emotion_flag(t.emotion);
  const auto a = load_piece(t.a, model.vocab(), run.config.model.max_len, emotion, err);
  const auto b = load_piece(t.b, model.vocab(), run.config.model.max_len, emotion, err);
  const auto r = pipeline::element_transfer(model, a.sequence, b.sequence, transfer,
                                            {.max_len = t.max_len, .seed = run.config.seed,
                                             .policy = run.config.sampling});
  write_sequence(r.sequence, model.vocab(), t.out);

  json rep;
  rep["a"] = t.a;
  rep["b"] = t.b;
  std::string set;
  for (auto e : transfer) set += repr::short_name(e);
  rep["transfer_set"] = set;
  rep["slice_width"] = run.config.model.slice_width;
  json slices = json::array();
  const med::ElementSlicing slicing{run.config.model.slice_width};
  for (std::size_t e = 0; e < repr::kElementCount; ++e) {
    const auto el = repr::kElements[e];
    slices.push_back({{"element", std::string(repr::short_name(el))},
                      {"name", std::string(repr::long_name(el))},
                      {"columns", {slicing.begin(el), slicing.begin(el) + slicing.width}},
                      {"source", std::string(1, r.provenance[e])}});
  }
  rep["slices"] = slices;
  rep["length_a"] = r.length_a;
  rep["length_b"] = r.length_b;
  rep["padded_steps"] = r.padded_steps;
  rep["output_tokens"] = r.sequence.size();
  if (!t.report.empty()) {
    write_text(t.report, rep.dump(2) + "\n");
    run.output(t.report);
  }
  out << rep.dump(2) << "\n";
  run.result() = rep;
  run.output(t.out);
  run.write_manifest();
  return kExitOk;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::vector<std::string> in;
  std::string format = "table", out, histograms, emotion;
};

int cmd_eval(Run& run, EvalArgs& a, std::ostream& out, std::ostream& err) {
  run.resolve(a.common);
  if (a.format != "table" && a.format != "json" && a.format != "csv") {
    throw UsageError("--format must be table, json or csv");
  }
  const auto vocab = repr::Vocabulary::for_preset(run.config.model.vocab);
  std::vector<std::pair<std::string, repr::Score>> scores;
  std::vector<repr::CpSequence> seqs;
  const auto emotion = parse_emotion_flag(a.emotion);
  for (const auto& p : expand(a.in)) {
    auto piece = load_piece(p, vocab, 0, emotion, err);
    scores.emplace_back(piece.id, std::move(piece.score));
    seqs.push_back(std::move(piece.sequence));
    run.input(p.string());
  }
  if (scores.empty()) throw UsageError("eval needs --in files");
  const auto report = eval::metrics_report(scores);
  const std::string text = a.format == "json" ? report.to_json() : a.format == "csv" ? report.to_csv() : report.to_table();
  if (a.out.empty()) {
    out << text;
    if (!text.empty() && text.back() != '\n') out << "\n";
  } else {
    write_text(a.out, text);
    run.output(a.out);
    out << "wrote " << a.out << "\n";
  }
  if (!a.histograms.empty()) {
    write_text(a.histograms, eval::histogram_csv(eval::element_distribution(seqs)));
    run.output(a.histograms);
  }
  run.result() = json::parse(report.to_json());
  run.write_manifest();
  return kExitOk;
}

// export-latents ------------------------------------------------------------

struct LatentArgs {
  Common common;
  CorpusArgs corpus;
  std::string ckpt, out, pca, silhouette;
};

int cmd_export_latents(Run& run, LatentArgs& a, std::ostream& out, std::ostream& err) {
  const std::string ckpt = run.path(a.ckpt, "ckpt");
  require_path(ckpt, "--ckpt");
  if (a.out.empty()) throw UsageError("missing --out");
  auto loaded = pipeline::load_model(ckpt);
  run.resolve_from(loaded.config, a.common);
  run.input(ckpt);
  auto& model = *loaded.model;
  const auto pieces = load_corpus(run, a.corpus.corpus, a.corpus.synthetic, a.corpus.bars, model.vocab(),
                                  run.config.model.max_len, parse_emotion_flag(a.corpus.emotion), err);
  std::vector<std::string> ids;
  for (const auto& p : pieces) ids.push_back(p.id);
  const auto seqs = sequences(pieces);
  const auto dump = eval::export_latents(model, ids, seqs);
  write_text(a.out, dump.to_csv());
  run.output(a.out);
  out << "wrote " << dump.rows.size() << " latent rows to " << a.out << "\n";

  if (!a.pca.empty()) {
    std::ostringstream csv;
    csv << "piece,emotion,element,pc1,pc2\n";
    for (auto el : repr::kElements) {
      std::vector<const eval::LatentRow*> rows;
      std::vector<std::vector<double>> points;
      for (const auto& r : dump.rows) {
        if (r.element == el) {
          rows.push_back(&r);
          points.push_back(r.values);
        }
      }
      const auto proj = eval::pca_2d(points);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        csv << rows[i]->piece << ',' << repr::emotion_name(rows[i]->emotion) << ',' << repr::short_name(el) << ','
            << proj[i][0] << ',' << proj[i][1] << '\n';
      }
    }
    write_text(a.pca, csv.str());
    run.output(a.pca);
  }

  std::set<repr::Emotion> labels;
  for (const auto& s : seqs) labels.insert(s.emotion);
  labels.erase(repr::Emotion::none);
  if (labels.size() >= 2) {
    std::ostringstream csv;
    csv << "element,first,second,points,silhouette\n";
    json sc = json::array();
    for (const auto& q : eval::quadrant_silhouettes(dump)) {
      csv << repr::short_name(q.element) << ',' << repr::emotion_name(q.first) << ',' << repr::emotion_name(q.second)
          << ',' << q.points << ',' << q.score << '\n';
      sc.push_back({{"element", std::string(repr::short_name(q.element))},
                    {"pair", std::string(repr::emotion_name(q.first)) + "-" + std::string(repr::emotion_name(q.second))},
                    {"score", q.score}});
    }
    if (!a.silhouette.empty()) {
      write_text(a.silhouette, csv.str());
      run.output(a.silhouette);
    } else {
      out << csv.str();
    }
    run.result()["silhouette"] = sc;
  }
  run.result()["rows"] = dump.rows.size();
  run.write_manifest();
  return kExitOk;
}

// gradcheck -----------------------------------------------------------------

struct GradArgs {
  Common common;
  pipeline::ModelGradCheckOptions options;
  double tolerance = 1e-4;
};

int cmd_gradcheck(Run& run, GradArgs& a, std::ostream& out, std::ostream&) {
  run.resolve(a.common);
  a.options.seed = run.config.seed;
  const auto report = pipeline::run_gradcheck(run.config, a.options);
  for (const auto& p : report.primitives) {
    out << "primitive " << p.primitive << " max_rel_error " << p.result.max_rel_error << "\n";
  }
  out << "model loss (N=" << a.options.max_len << ", m=" << a.options.batch << ", " << report.model.coordinates
      << " coordinates) max_rel_error " << report.model.max_rel_error << " at " << report.model.worst << "\n";
  out << "max relative error: " << report.max_rel_error << "\n";
  const bool ok = report.passed(a.tolerance);
  out << (ok ? "PASS" : "FAIL") << " (tolerance " << a.tolerance << ")\n";
  run.result()["max_rel_error"] = report.max_rel_error;
  run.result()["passed"] = ok;
  run.write_manifest();
  return ok ? kExitOk : kExitNumeric;
}

// inspect-checkpoint --------------------------------------------------------

struct InspectArgs {
  Common common;
  std::string ckpt, expect;
};

void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j;
  }
}

int cmd_inspect(Run& run, InspectArgs& a, std::ostream& out, std::ostream&) {
  std::string ckpt = run.path(a.ckpt, "ckpt");
  if (!ckpt.empty()) {
    require_path(ckpt, "--ckpt");
    const json meta = json::parse(pipeline::read_metadata(ckpt));
    run.resolve_from(pipeline::from_json(meta.at("config").dump()), a.common);
    run.input(ckpt);
    out << "kind " << meta.value("kind", std::string("?")) << "\nstep " << meta.value("step", 0) << "\n";
    const auto c = pipeline::read_container(ckpt);
    std::size_t values = 0;
    for (const auto& arr : c.arrays) {
      out << "array " << arr.name << (arr.store_f32 ? " f32 " : " f64 ") << "[";
      for (std::size_t i = 0; i < arr.value.shape().size(); ++i) out << (i ? "," : "") << arr.value.shape()[i];
      out << "]\n";
      values += arr.value.size();
    }
    out << "arrays " << c.arrays.size() << " values " << values << "\n";
  } else {
    run.resolve(a.common);
  }
  const auto& cfg = run.config;
  out << "config " << pipeline::to_json(cfg) << "\n";
  const auto vocab = repr::Vocabulary::for_preset(cfg.model.vocab);
  out << "vocabulary";
  for (auto t : repr::kAllTypes) out << " " << repr::short_name(t) << "=" << vocab.size(t);
  out << "\n";
  if (a.expect.empty()) {
    run.write_manifest();
    return kExitOk;
  }
  // Run-length fields (seed and step budgets) are not preset values.
  static const std::set<std::string> ignored = {"seed", "steps", "epochs", "prior_steps", "stage"};
  std::map<std::string, json> want, have;
  flatten(json::parse(pipeline::to_json(TrainConfig::for_preset(a.expect))), "", want);
  flatten(json::parse(pipeline::to_json(cfg)), "", have);
  std::size_t mismatches = 0, compared = 0;
  for (const auto& [k, v] : want) {
    if (ignored.count(k)) continue;
    ++compared;
    const auto it = have.find(k);
    if (it == have.end() || it->second != v) {
      ++mismatches;
      out << "mismatch " << k << ": expected " << v.dump() << ", found " << (it == have.end() ? "-" : it->second.dump())
          << "\n";
    }
  }
  const auto expect_vocab = repr::Vocabulary::for_preset(TrainConfig::for_preset(a.expect).model.vocab);
  for (auto t : repr::kAllTypes) {
    ++compared;
    if (vocab.size(t) != expect_vocab.size(t)) {
      ++mismatches;
      out << "mismatch vocabulary." << repr::short_name(t) << ": expected " << expect_vocab.size(t) << ", found "
          << vocab.size(t) << "\n";
    }
  }
  out << (mismatches ? "FAIL" : "PASS") << ": " << compared - mismatches << "/" << compared << " fields match preset "
      << a.expect << "\n";
  run.result()["preset_match"] = mismatches == 0;
  run.write_manifest();
  return mismatches ? kExitData : kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MusER: emotional music generation with element disentanglement"};
  app.name("muser");
  app.require_subcommand(1);

  TokenizeArgs tok;
  auto* s_tok = app.add_subcommand("tokenize", "MIDI -> event-stream JSON, or event-stream JSON -> MIDI");
  add_common(s_tok, tok.common);
  s_tok->add_option("--in", tok.in, "Input .mid or .json")->required();
  s_tok->add_option("--out", tok.out, "Output path")->required();
  s_tok->add_option("--emotion", tok.emotion, "Emotion label (default: Qn_ filename prefix)");
  s_tok->add_option("--max-len", tok.max_len, "Maximum tokens incl. EOS; truncates at a bar boundary");

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train", "Train the MusER VQ-VAE");
  add_common(s_tr, tr.common);
  add_corpus(s_tr, tr.corpus);
  s_tr->add_option("--out", tr.out, "Checkpoint path");
  s_tr->add_option("--init", tr.init, "Continue from a checkpoint (e.g. fine-tuning)");
  s_tr->add_option("--steps", tr.steps, "Step budget (overrides the config)");
  s_tr->add_option("--log-every", tr.log_every, "Log every N steps");
  s_tr->add_flag("--f32", tr.f32, "Store parameters as 32-bit floats");

  PriorArgs pr;
  auto* s_pr = app.add_subcommand("train-prior", "Train the emotion-conditioned code prior");
  add_common(s_pr, pr.common);
  add_corpus(s_pr, pr.corpus);
  s_pr->add_option("--ckpt", pr.ckpt, "MusER checkpoint");
  s_pr->add_option("--out", pr.out, "Prior checkpoint path");
  s_pr->add_option("--steps", pr.steps, "Step budget (overrides the config)");

  GenerateArgs gen;
  auto* s_gen = app.add_subcommand("generate", "Sample a piece for an emotion");
  add_common(s_gen, gen.common);
  s_gen->add_option("--ckpt", gen.ckpt, "MusER checkpoint");
  s_gen->add_option("--prior", gen.prior, "Prior checkpoint");
  s_gen->add_option("--emotion", gen.emotion, "Q1..Q4")->required();
  s_gen->add_option("--out", gen.out, "Output .mid or .json")->required();
  s_gen->add_option("--max-len", gen.max_len, "Token budget (default N_max)");
  s_gen->add_option("--prior-temperature", gen.prior_temperature, "Prior sampling temperature");

  TransferArgs trn;
  auto* s_trn = app.add_subcommand("transfer", "Swap element bands of B into A and decode");
  add_common(s_trn, trn.common);
  s_trn->add_option("--a", trn.a, "Source piece")->required();
  s_trn->add_option("--b", trn.b, "Donor piece")->required();
  s_trn->add_option("--elements", trn.elements, "Elements taken from B, e.g. v or pd (empty: none)");
  s_trn->add_option("--ckpt", trn.ckpt, "MusER checkpoint");
  s_trn->add_option("--out", trn.out, "Output .mid or .json")->required();
  s_trn->add_option("--report", trn.report, "Slice-provenance report path (JSON)");
  s_trn->add_option("--emotion", trn.emotion, "Emotion label for MIDI inputs");
  s_trn->add_option("--max-len", trn.max_len, "Token budget (default N_max)");

  EvalArgs ev;
  auto* s_ev = app.add_subcommand("eval", "PR / NPC / POLY and bar-level metrics");
  add_common(s_ev, ev.common);
  s_ev->add_option("--in", ev.in, "Files or directories")->required();
  s_ev->add_option("--format", ev.format, "table, json or csv");
  s_ev->add_option("--out", ev.out, "Report path (default stdout)");
  s_ev->add_option("--histograms", ev.histograms, "Per-element value histograms by quadrant (CSV)");
  s_ev->add_option("--emotion", ev.emotion, "Emotion label for MIDI inputs");

  LatentArgs lat;
  auto* s_lat = app.add_subcommand("export-latents", "Time-pooled element latents, PCA and silhouettes");
  add_common(s_lat, lat.common);
  add_corpus(s_lat, lat.corpus);
  s_lat->add_option("--ckpt", lat.ckpt, "MusER checkpoint");
  s_lat->add_option("--out", lat.out, "Latent CSV")->required();
  s_lat->add_option("--pca", lat.pca, "2-D PCA projection CSV (per element)");
  s_lat->add_option("--silhouette", lat.silhouette, "Quadrant-pair silhouette CSV (default stdout)");

  GradArgs gc;
  auto* s_gc = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and the full loss");
  add_common(s_gc, gc.common);
  s_gc->add_option("--max-len", gc.options.max_len, "Sequence length N");
  s_gc->add_option("--batch", gc.options.batch, "Sequences m");
  s_gc->add_option("--coords", gc.options.coords_per_param, "Sampled coordinates per parameter (0: all)");
  s_gc->add_option("--eps", gc.options.eps, "Central-difference step");
  s_gc->add_option("--tolerance", gc.tolerance, "Pass threshold on max relative error");

  InspectArgs ins;
  auto* s_ins = app.add_subcommand("inspect-checkpoint", "Print a checkpoint (or resolved config) and check a preset");
  add_common(s_ins, ins.common);
  s_ins->add_option("--ckpt", ins.ckpt, "Checkpoint (omit to inspect the resolved config)");
  s_ins->add_option("--expect-preset", ins.expect, "Assert every preset field matches");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "muser: " << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  Run r(sub->get_name(), args, err);
  try {
    if (sub == s_tok) return cmd_tokenize(r, tok, out, err);
    if (sub == s_tr) return cmd_train(r, tr, out, err);
    if (sub == s_pr) return cmd_train_prior(r, pr, out, err);
    if (sub == s_gen) return cmd_generate(r, gen, out, err);
    if (sub == s_trn) return cmd_transfer(r, trn, out, err);
    if (sub == s_ev) return cmd_eval(r, ev, out, err);
    if (sub == s_lat) return cmd_export_latents(r, lat, out, err);
    if (sub == s_gc) return cmd_gradcheck(r, gc, out, err);
    if (sub == s_ins) return cmd_inspect(r, ins, out, err);
  } catch (const UsageError& e) {
    err << "muser: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericFault& e) {
    err << "muser: numeric fault: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "muser: data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "muser: data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace muser::cli
