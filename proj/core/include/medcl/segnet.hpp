#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "medcl/grid.hpp"

namespace medcl {

struct ModelSpec {
  int input_size = 64;   // square frames, must divide by 2^depth
  int base_width = 8;    // channels at the top level, doubling per level
  int depth = 3;         // number of pooling levels
  int num_classes = 3;   // m
  uint64_t seed = 0;

  void validate() const;

  int head_a_channels() const { return num_classes + 1; }  // softmax incl. background
  int head_b_channels() const { return num_classes - 1; }  // sigmoid, combined subsets

  bool operator==(const ModelSpec&) const = default;
};

// One named tensor inside the flat parameter vector.
struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  int64_t offset = 0;
  int64_t count = 0;

  bool operator==(const ParamEntry&) const = default;
};

struct ModelParams {
  ModelSpec spec;
  std::vector<ParamEntry> layout;
  Eigen::VectorXd values;
};

// Fan-in-scaled Gaussian weights, zero biases; pure in (spec, spec.seed).
ModelParams init_model(const ModelSpec& spec);

// Activations recorded during forward, consumed exactly once by backward.
// The checksum ties a cache to the parameter vector that produced it.
struct ForwardCache {
  bool valid = false;
  double params_checksum = 0.0;
  std::vector<Tensor3> conv_inputs;          // per conv, activation fed in
  std::vector<Tensor3> conv_pre;             // per conv, pre-ReLU output
  std::vector<std::vector<uint8_t>> pool_argmax;  // per pool, winner index 0..3
  std::vector<Tensor3> enc_outputs;          // skip tensors per level
  Tensor3 class_probs;                       // softmax head output
  Tensor3 combined_probs;                    // sigmoid head output
};

struct ForwardOutput {
  // The (2m-1)-channel prediction: rows 0..m-1 are the single-class
  // probabilities (softmax channels 1..m), rows m..2m-2 the combined-subset
  // sigmoid channels.
  Tensor3 probs;
  // Full softmax head including background channel 0; feeds the scribble and
  // category losses.
  Tensor3 class_probs;
};

ForwardOutput forward(const ModelParams& params, const ImageF& image,
                      ForwardCache* cache = nullptr);

// Reverse-mode gradient of the forward map. grad_probs is dL/d(probs),
// grad_class_probs is dL/d(class_probs); either may be all zero. Returns
// dL/d(params.values). Throws on a cache that does not match `params`.
Eigen::VectorXd backward(const ModelParams& params, ForwardCache& cache,
                         const Tensor3& grad_probs, const Tensor3& grad_class_probs);

// Model checkpoint: 8-byte little-endian header length, JSON header
// (format version, spec, layout), then the parameter vector as little-endian
// 64-bit floats.
void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace medcl
