#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "muser/numerics/tensor.hpp"
#include "muser/pipeline/config.hpp"

namespace muser::pipeline {

class MuserModel;
class PriorModel;

/// Single-file container:
///   "MUSR" | u32 version | u32 metadata bytes | metadata (JSON text)
///   | u32 array count | per array: u16 name length, name, u8 element bytes
///   (4 or 8), u8 rank, u64 dims[rank], little-endian values.
struct NamedArray {
  std::string name;
  num::Tensor value;
  bool store_f32 = false;
};

struct Container {
  std::string metadata;  // JSON object text
  std::vector<NamedArray> arrays;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(std::span<const std::uint8_t> bytes);
void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

struct SaveOptions {
  bool f32 = false;  // store parameters as 32-bit floats
  std::uint64_t step = 0;
  std::string rng_state;
};

void save_model(MuserModel& model, const TrainConfig& config, const std::filesystem::path& path,
                const SaveOptions& options = {});

struct LoadedModel {
  TrainConfig config;
  std::unique_ptr<MuserModel> model;
  std::uint64_t step = 0;
  std::string rng_state;
};
LoadedModel load_model(const std::filesystem::path& path);

void save_prior(PriorModel& prior, const TrainConfig& config, const std::filesystem::path& path,
                const SaveOptions& options = {});
struct LoadedPrior {
  TrainConfig config;
  std::unique_ptr<PriorModel> prior;
};
LoadedPrior load_prior(const std::filesystem::path& path);

struct PriorConfig;
/// Prior architecture implied by a training config.
PriorConfig prior_config(const TrainConfig& config);

/// Metadata JSON of any checkpoint (kind, config, element order, ...).
std::string read_metadata(const std::filesystem::path& path);

}  // namespace muser::pipeline
