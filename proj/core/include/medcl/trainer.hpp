#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

#include "medcl/config.hpp"
#include "medcl/dataset.hpp"
#include "medcl/losses.hpp"
#include "medcl/mixing.hpp"
#include "medcl/segnet.hpp"
#include "medcl/sinkhorn.hpp"

namespace medcl {

// One training unit: a pair of plain crops (supervision targets) and the
// three mixed views derived from them (consistency/clustering targets).
// Scribbles on crops from sources outside the annotated subset are already
// blanked out.
struct BatchPair {
  PhantomSample crop1, crop2;
  MixedSample mixed1, mixed2, mixed12;  // x'_1, x'_2, x_12
  double beta = 0.5;                    // inter-mix ratio
};

struct Batch {
  std::vector<BatchPair> pairs;
  SubsetSchedule schedule;
};

struct TrainState {
  ModelParams model;
  PrototypeMatrix prototypes;
  // Adam first/second moments over the concatenation [model | prototypes].
  Eigen::VectorXd moment1, moment2;
  int64_t adam_t = 0;
  int64_t step = 0;  // optimizer steps taken so far
  int epoch = 0;     // completed epochs
  uint64_t seed = 0;
  SubsetSchedule schedule;  // class order, fixed for the whole run
};

// Fresh state for a run: seeded model init, unit-norm prototype columns, zero
// moments, and the run's subset schedule, all derived from the config seed.
TrainState init_train_state(const TrainConfig& config, int num_classes);

// Trainer checkpoints: same container format as model checkpoints with the
// optimizer moments, prototypes, counters, and schedule appended.
void save_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_state(const std::filesystem::path& path);

struct StepRecord {
  int64_t step = 0;
  int epoch = 0;
  LossBreakdown loss;
  bool scribble_supervision = false;
  double wall_ms = 0.0;
};

struct ValidationRecord {
  int epoch = 0;
  int64_t step = 0;
  double mean_dice = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<ValidationRecord> validations;
};

void save_train_log(const TrainLog& log, const std::filesystem::path& path);

// Full batches per pass over the crop pool:
// floor(sources * mix.rounds * crops_per_source / batch_size).
int64_t steps_per_epoch(const TrainConfig& config, int num_sources);

// Deterministic batch assembly for (seed, epoch, step): multi-crop the
// sources, intra-mix every crop, pair consecutively under the epoch shuffle,
// inter-mix each pair.
Batch build_batch(const Dataset& dataset, const TrainConfig& config, int epoch, int64_t step);

struct StepOutcome {
  LossBreakdown loss;
  bool scribble_supervision = false;
};

// One optimization step: 5 forwards per pair (2 plain + 3 mixed), one
// Sinkhorn assignment over the batch's mixed pixels, every enabled loss term,
// one Adam update over model + prototypes, prototype renormalization.
StepOutcome train_step(TrainState& state, const Batch& batch, const TrainConfig& config);

// Mean over samples of the mean foreground-class Dice between argmax
// predictions and labels.
double validation_dice(const TrainState& state, const Dataset& dataset, int jobs = 1);

struct TrainResult {
  TrainState state;
  TrainLog log;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;  // empty when validation never ran
};

// The whole loop: dataset loading, epoch/step iteration, periodic validation
// with best-checkpoint retention, checkpoint/log emission under
// config.output.dir. `resume_from` continues bit-exactly from a saved state.
TrainResult train(const TrainConfig& config, const std::filesystem::path& resume_from = {});

}  // namespace medcl
