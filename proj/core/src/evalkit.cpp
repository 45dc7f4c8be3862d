#include "medcl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "medcl/error.hpp"
#include "medcl/parallel.hpp"
#include "medcl/plot.hpp"
#include "medcl/segnet.hpp"

namespace medcl {
namespace {

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
double std_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

std::string csv_value(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream out;
  out.precision(17);
  out << *v;
  return out.str();
}

std::string csv_value(double v) { return csv_value(std::optional<double>(v)); }

// Mean HD across classes for one summary, skipping undefined classes.
std::optional<double> summary_mean_hd(const EvalSummary& summary) {
  std::vector<double> defined;
  for (const auto& h : summary.hd_mean) {
    if (h) defined.push_back(*h);
  }
  if (defined.empty()) return std::nullopt;
  return mean_of(defined);
}

SweepPoint run_one(TrainConfig config, std::string method, double axis, uint64_t seed,
                   const Dataset& eval_split, const std::filesystem::path& run_dir) {
  config.trainer.seed = seed;
  config.output.dir = run_dir.string();
  const TrainResult result = train(config);
  EvalOptions options;
  options.jobs = config.trainer.jobs;
  const EvalResult eval = evaluate(result.state, eval_split, options);
  SweepPoint point;
  point.method = std::move(method);
  point.axis = axis;
  point.seed = seed;
  point.mean_dice = eval.summary.mean_dice;
  point.summary = eval.summary;
  return point;
}

// Collapse per-seed points into one level per axis value, input order.
void aggregate_levels(SweepResult& result) {
  for (const SweepPoint& point : result.points) {
    auto it = std::find_if(result.levels.begin(), result.levels.end(),
                           [&](const SweepLevel& l) { return l.method == point.method; });
    if (it == result.levels.end()) {
      result.levels.push_back({point.method, point.axis, 0.0, 0.0, 0});
      it = std::prev(result.levels.end());
    }
    it->runs += 1;
  }
  for (SweepLevel& level : result.levels) {
    std::vector<double> dices;
    for (const SweepPoint& point : result.points) {
      if (point.method == level.method) dices.push_back(point.mean_dice);
    }
    level.mean = mean_of(dices);
    level.stddev = std_of(dices, level.mean);
  }
}

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot write sweep CSV: " + path.string());
  out << "method,class,metric,seed,value\n";
  for (const SweepPoint& point : result.points) {
    const int m = static_cast<int>(point.summary.dice_mean.size());
    for (int cls = 0; cls < m; ++cls) {
      out << point.method << ',' << cls + 1 << ",dice," << point.seed << ','
          << csv_value(point.summary.dice_mean[cls]) << '\n';
      out << point.method << ',' << cls + 1 << ",hd," << point.seed << ','
          << csv_value(point.summary.hd_mean[cls]) << '\n';
    }
    out << point.method << ",avg,dice," << point.seed << ','
        << csv_value(point.summary.mean_dice) << '\n';
    out << point.method << ",avg,hd," << point.seed << ','
        << csv_value(summary_mean_hd(point.summary)) << '\n';
  }
  require(out.good(), ErrorCode::IoError, "failed writing sweep CSV: " + path.string());
}

}  // namespace

EvalResult evaluate(const TrainState& state, const Dataset& dataset,
                    const EvalOptions& options) {
  require(!dataset.samples.empty(), ErrorCode::InvalidArgument, "evaluate: dataset is empty");
  const ModelSpec& spec = state.model.spec;
  const int m = spec.num_classes;
  require(dataset.manifest.generator.num_classes == m, ErrorCode::ConfigError,
          "evaluate: dataset class count differs from the checkpoint");
  require(options.hd_percentile > 0.0 && options.hd_percentile <= 100.0,
          ErrorCode::InvalidArgument, "evaluate: hd_percentile must lie in (0,100]");
  for (const PhantomSample& sample : dataset.samples) {
    require(sample.image.height() == spec.input_size && sample.image.width() == spec.input_size,
            ErrorCode::ShapeMismatch, "evaluate: image size does not match the model");
  }

  const int n = static_cast<int>(dataset.samples.size());
  EvalResult result;
  result.records.resize(n);
  parallel_for(n, effective_jobs(options.jobs), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const PhantomSample& sample = dataset.samples[i];
      const ForwardOutput out = forward(state.model, sample.image);
      Grid<uint8_t> argmax(spec.input_size, spec.input_size);
      for (int r = 0; r < spec.input_size; ++r) {
        for (int c = 0; c < spec.input_size; ++c) {
          int best = 0;
          for (int ch = 1; ch <= m; ++ch) {
            if (out.class_probs(ch, r, c) > out.class_probs(best, r, c)) best = ch;
          }
          argmax(r, c) = static_cast<uint8_t>(best);
        }
      }

      MetricsRecord record;
      record.case_id = dataset.manifest.entries[i].id;
      Grid<uint8_t> pred(spec.input_size, spec.input_size);
      Grid<uint8_t> truth(spec.input_size, spec.input_size);
      std::vector<double> defined_hd;
      for (int cls = 1; cls <= m; ++cls) {
        for (int r = 0; r < spec.input_size; ++r) {
          for (int c = 0; c < spec.input_size; ++c) {
            pred(r, c) = argmax(r, c) == cls;
            truth(r, c) = sample.labels(r, c) == cls;
          }
        }
        record.dice.push_back(dice(pred, truth));
        record.hd.push_back(hausdorff(pred, truth, options.hd_percentile));
        if (record.hd.back()) defined_hd.push_back(*record.hd.back());
      }
      record.mean_dice = mean_of(record.dice);
      if (!defined_hd.empty()) record.mean_hd = mean_of(defined_hd);
      result.records[i] = std::move(record);
    }
  });

  EvalSummary& summary = result.summary;
  summary.num_cases = n;
  std::vector<double> case_means;
  for (const MetricsRecord& record : result.records) case_means.push_back(record.mean_dice);
  summary.mean_dice = mean_of(case_means);
  for (int cls = 0; cls < m; ++cls) {
    std::vector<double> dices, hds;
    for (const MetricsRecord& record : result.records) {
      dices.push_back(record.dice[cls]);
      if (record.hd[cls]) hds.push_back(*record.hd[cls]);
    }
    summary.dice_mean.push_back(mean_of(dices));
    summary.dice_std.push_back(std_of(dices, summary.dice_mean.back()));
    summary.hd_defined.push_back(static_cast<int>(hds.size()));
    if (hds.empty()) {
      summary.hd_mean.emplace_back();
      summary.hd_std.emplace_back();
    } else {
      summary.hd_mean.emplace_back(mean_of(hds));
      summary.hd_std.emplace_back(std_of(hds, *summary.hd_mean.back()));
    }
  }
  return result;
}

EvalResult evaluate(const std::filesystem::path& checkpoint, const Dataset& dataset,
                    const EvalOptions& options) {
  return evaluate(load_state(checkpoint), dataset, options);
}

void write_metrics_csv(const EvalResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot write metrics CSV: " + path.string());
  out << "case,class,metric,value\n";
  for (const MetricsRecord& record : result.records) {
    for (size_t cls = 0; cls < record.dice.size(); ++cls) {
      out << record.case_id << ',' << cls + 1 << ",dice," << csv_value(record.dice[cls]) << '\n';
      out << record.case_id << ',' << cls + 1 << ",hd," << csv_value(record.hd[cls]) << '\n';
    }
    out << record.case_id << ",avg,dice," << csv_value(record.mean_dice) << '\n';
    out << record.case_id << ",avg,hd," << csv_value(record.mean_hd) << '\n';
  }
  require(out.good(), ErrorCode::IoError, "failed writing metrics CSV: " + path.string());
}

std::vector<AblationRow> standard_ablation_rows() {
  std::vector<AblationRow> rows(5);
  rows[0] = {"#1", {0, 0, 0, 0, 1, 1}};
  rows[1] = {"#2", {1, 0, 0, 0, 1, 1}};
  rows[2] = {"#3", {0, 1, 0, 1, 1, 1}};
  rows[3] = {"#4", {1, 1, 0, 1, 1, 1}};
  rows[4] = {"medcl", {1, 1, 1, 1, 1, 1}};
  return rows;
}

SweepResult ablate(const TrainConfig& base, const std::vector<AblationRow>& rows,
                   const std::vector<uint64_t>& seeds, const Dataset& eval_split,
                   const std::filesystem::path& out_dir) {
  require(rows.size() >= 2, ErrorCode::InvalidArgument, "ablate needs at least two rows");
  require(!seeds.empty(), ErrorCode::InvalidArgument, "ablate needs at least one seed");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorCode::IoError, "cannot create ablation directory: " + out_dir.string());

  SweepResult result;
  for (size_t r = 0; r < rows.size(); ++r) {
    TrainConfig config = base;
    config.loss.toggles = rows[r].toggles;
    std::string dir_key = rows[r].name;
    dir_key.erase(std::remove(dir_key.begin(), dir_key.end(), '#'), dir_key.end());
    for (uint64_t seed : seeds) {
      const auto run_dir = out_dir / ("row-" + dir_key + "-s" + std::to_string(seed));
      result.points.push_back(run_one(config, rows[r].name, static_cast<double>(r), seed,
                                      eval_split, run_dir));
    }
  }
  aggregate_levels(result);
  write_sweep_csv(result, out_dir / "ablation.csv");
  return result;
}

SweepResult sensitivity_sweep(const TrainConfig& base, const std::vector<int>& counts,
                              const std::vector<uint64_t>& seeds, const Dataset& eval_split,
                              const std::filesystem::path& out_dir) {
  require(!counts.empty(), ErrorCode::InvalidArgument, "sweep needs at least one count");
  require(!seeds.empty(), ErrorCode::InvalidArgument, "sweep needs at least one seed");
  for (int count : counts) {
    require(count >= 0, ErrorCode::InvalidArgument, "scribble counts must be non-negative");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorCode::IoError, "cannot create sweep directory: " + out_dir.string());

  SweepResult result;
  for (int count : counts) {
    TrainConfig config = base;
    config.data.num_scribble_sources = count;
    for (uint64_t seed : seeds) {
      const auto run_dir =
          out_dir / ("count-" + std::to_string(count) + "-s" + std::to_string(seed));
      result.points.push_back(run_one(config, std::to_string(count),
                                      static_cast<double>(count), seed, eval_split, run_dir));
    }
  }
  aggregate_levels(result);
  write_sweep_csv(result, out_dir / "sweep.csv");

  PlotSeries mean_series;
  mean_series.label = "mean dice";
  for (const SweepLevel& level : result.levels) {
    mean_series.x.push_back(level.axis);
    mean_series.y.push_back(level.mean);
  }
  write_line_plot(out_dir / "sweep_dice.png", {mean_series}, "supervision sensitivity",
                  "scribble-annotated sources", "dice", 640, 420);
  return result;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorCode::InvalidArgument,
          "spearman needs two equally sized samples of at least two values");
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double shared = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank of the tie
      for (size_t k = i; k <= j; ++k) rank[order[k]] = shared;
      i = j + 1;
    }
    return rank;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double ma = mean_of(ra), mb = mean_of(rb);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace medcl
