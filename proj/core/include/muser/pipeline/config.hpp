#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "muser/decode/decoder.hpp"
#include "muser/med/med.hpp"
#include "muser/numerics/nn.hpp"
#include "muser/repr/vocab.hpp"

namespace muser::pipeline {

enum class Stage { pretrain, finetune };

struct ModelConfig {
  repr::VocabPreset vocab = repr::VocabPreset::desk;
  std::size_t max_len = 256;        // N_max
  std::size_t codebook_size = 64;   // K
  std::size_t slice_width = 4;      // l; L = 7 l
  std::array<std::size_t, repr::kTokenTypes> embed_sizes{};
  num::TransformerShape encoder, global_decoder, element_decoder, dr, prior;
  double dropout = 0.1;
  med::DrMode dr_mode = med::DrMode::transformer;
  decode::CondMode cond_mode = decode::CondMode::cross_attention;
  decode::DecoderLayout decoders = decode::DecoderLayout::global_and_element;
  bool med = true;
  double ema_decay = 0.99;
  double ema_smoothing = 1e-5;
  std::size_t dead_code_steps = 2000;  // 0 disables reseeding

  [[nodiscard]] std::size_t latent_width() const { return slice_width * repr::kElementCount; }
  /// Layout actually used: without MED only the global decoder exists.
  [[nodiscard]] decode::DecoderLayout effective_decoders() const {
    return med ? decoders : decode::DecoderLayout::global_only;
  }
};

struct TrainConfig {
  std::string preset = "desk";
  ModelConfig model;
  double alpha = 0.1;
  double beta = 0.25;
  double lr_pretrain = 1e-3;
  double lr_finetune = 1e-4;
  Stage stage = Stage::pretrain;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::size_t steps = 0;  // fixed step budget; 0 means epochs over the corpus
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  num::Precision precision = num::Precision::f64;
  decode::SamplingPolicy sampling = decode::SamplingPolicy::paper();
  double prior_lr = 1e-3;
  std::size_t prior_steps = 500;

  [[nodiscard]] double lr() const { return stage == Stage::pretrain ? lr_pretrain : lr_finetune; }

  /// Published full-scale hyperparameters, vocabularies and sampling rules.
  static TrainConfig paper();
  /// CPU-scale preset with quartered widths.
  static TrainConfig desk();
  static TrainConfig for_preset(std::string_view name);

  void validate() const;
};

/// Full, explicit JSON form (every field present).
std::string to_json(const TrainConfig& config, int indent = 2);
/// Strict parse of the full form; unknown or missing keys are errors.
TrainConfig from_json(std::string_view text);

/// Config file: {"preset": "...", "seed": n, "paths": {...}, "overrides": {...}}.
/// Overrides use the same nested layout as to_json and are merged over the
/// preset.
struct ConfigFile {
  TrainConfig config;
  std::string preset;     // as written in the file
  std::string overrides;  // JSON object text, seed folded in; empty when absent
  std::map<std::string, std::string> paths;
};
ConfigFile load_config_file(const std::filesystem::path& path);
/// Resolves a preset plus an overrides document (JSON text, may be empty).
TrainConfig resolve_config(std::string_view preset, std::string_view overrides_json);
/// JSON merge-patch of `overrides_json` over `config`; re-validated.
TrainConfig apply_overrides(const TrainConfig& config, std::string_view overrides_json);

}  // namespace muser::pipeline
