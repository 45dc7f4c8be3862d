#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "medcl/config.hpp"
#include "medcl/dataset.hpp"
#include "medcl/metrics.hpp"
#include "medcl/trainer.hpp"

namespace medcl {

// Per-case metrics: one Dice and one boundary distance per foreground class.
// A missing HD means prediction or ground truth had no pixels for the class;
// such entries are excluded from averages and counted separately.
struct MetricsRecord {
  std::string case_id;
  std::vector<double> dice;               // class 1..m
  std::vector<std::optional<double>> hd;  // class 1..m, pixel units
  double mean_dice = 0.0;                 // over classes
  std::optional<double> mean_hd;          // over classes with a defined HD
};

// Per-class mean and sample std across cases, the "per class + Avg" shape.
struct EvalSummary {
  int num_cases = 0;
  std::vector<double> dice_mean, dice_std;
  std::vector<std::optional<double>> hd_mean, hd_std;
  std::vector<int> hd_defined;  // cases with a defined HD, per class
  double mean_dice = 0.0;       // mean of the per-case mean Dice values
};

struct EvalResult {
  std::vector<MetricsRecord> records;
  EvalSummary summary;
};

struct EvalOptions {
  int jobs = 1;
  double hd_percentile = 100.0;  // 95 selects HD95; plain Hausdorff by default
};

// Forward every case, argmax the softmax head into class masks, and score
// them against ground truth. Deterministic given state + dataset.
EvalResult evaluate(const TrainState& state, const Dataset& dataset,
                    const EvalOptions& options = {});
EvalResult evaluate(const std::filesystem::path& checkpoint, const Dataset& dataset,
                    const EvalOptions& options = {});

// Long-form CSV, one row per (case, class, metric); undefined HDs leave the
// value column empty. Header: case,class,metric,value.
void write_metrics_csv(const EvalResult& result, const std::filesystem::path& path);

// One trained-and-evaluated point of an ablation or sensitivity sweep.
struct SweepPoint {
  std::string method;  // ablation row name or scribble-source count
  double axis = 0.0;   // row index / scribble count
  uint64_t seed = 0;
  double mean_dice = 0.0;
  EvalSummary summary;
};

// Seed-aggregated view of one axis value.
struct SweepLevel {
  std::string method;
  double axis = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  int runs = 0;
};

struct SweepResult {
  std::vector<SweepPoint> points;  // one per (axis value, seed)
  std::vector<SweepLevel> levels;  // aggregated, in input order
};

// An ablation row: which loss terms the variant trains with.
struct AblationRow {
  std::string name;
  LossToggles toggles;
};

// The five-row ladder: supervision only, +mix, +cluster (the mapping loss
// rides along with clustering), mix+cluster, and the full method.
std::vector<AblationRow> standard_ablation_rows();

// Trains every (row, seed) combination from `base`, evaluates each final
// model on `eval_split`, and writes `ablation.csv` under `out_dir`. Run
// outputs land in per-run subdirectories of `out_dir`.
SweepResult ablate(const TrainConfig& base, const std::vector<AblationRow>& rows,
                   const std::vector<uint64_t>& seeds, const Dataset& eval_split,
                   const std::filesystem::path& out_dir);

// Varies the number of scribble-annotated sources, one training per
// (count, seed); writes `sweep.csv` and a rendered `sweep_dice.png`.
SweepResult sensitivity_sweep(const TrainConfig& base, const std::vector<int>& counts,
                              const std::vector<uint64_t>& seeds, const Dataset& eval_split,
                              const std::filesystem::path& out_dir);

// Spearman rank correlation with average ranks for ties; 0.0 when either
// side has no variation. Used for the monotone-trend check on sweeps.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace medcl
