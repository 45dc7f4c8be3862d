#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "medcl/losses.hpp"
#include "medcl/mixing.hpp"

namespace medcl {

struct DataConfig {
  std::string dataset_dir;       // training split
  std::string val_dataset_dir;   // empty disables validation
  int num_scribble_sources = 5;  // first N manifest entries carry scribbles
};

struct ModelConfig {
  int input_size = 64;
  int base_width = 8;
  int depth = 3;
};

struct OptimizerConfig {
  std::string kind = "adam";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainerSection {
  int epochs = 1;
  int64_t max_steps = 0;  // 0 = no cap on total optimizer steps
  int batch_size = 8;     // crops per step; paired, so must be even
  double learning_rate = 1e-4;
  OptimizerConfig optimizer;
  uint64_t seed = 1;
  int64_t checkpoint_every = 0;  // steps between last.ckpt refreshes; 0 = epoch ends only
  int validate_every = 1;        // epochs between validation passes
  int jobs = 1;                  // forward/backward workers per step
};

// 0/1 switches deciding which loss terms are computed at all; disabled terms
// log as exactly zero.
struct LossToggles {
  int mix = 1;
  int cluster = 1;
  int ac = 1;
  int map = 1;
  int scribble = 1;
  int category = 1;
};

struct LossSection {
  LossWeights weights;
  LossToggles toggles;
  double eps = 0.05;         // Sinkhorn entropy
  double w = 0.05;           // mapping softmax temperature
  double tau = 0.1;          // clustering temperature
  int proto_dim = 10;        // number of prototypes d
  int sinkhorn_iters = 3;
  bool detach_mix_targets = true;
};

struct MixSection {
  int rounds = 3;  // crop-pool passes per epoch; the amplification factor
  double intra_area_lo = 0.1;
  double intra_area_hi = 0.3;
  double theta_max = 15.0;  // degrees
  CropConfig crop;
};

struct OutputSection {
  std::string dir = "runs/medcl";
};

struct TrainConfig {
  DataConfig data;
  ModelConfig model;
  TrainerSection trainer;
  LossSection loss;
  MixSection mix;
  OutputSection output;

  void validate() const;
};

// Strict JSON round trip: parsing rejects unknown keys at any level with a
// ConfigError naming the offending dotted path; missing keys keep defaults.
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& config);

TrainConfig load_train_config(const std::filesystem::path& path);
void save_train_config(const TrainConfig& config, const std::filesystem::path& path);

// Command-line override entries of the form "section.key=value" (value parsed
// as JSON when possible, else taken as a string). Unknown paths are rejected.
TrainConfig apply_overrides(const TrainConfig& base, const std::vector<std::string>& overrides);

}  // namespace medcl
