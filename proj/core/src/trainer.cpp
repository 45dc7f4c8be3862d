#include "medcl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <optional>
#include <utility>

#include "medcl/error.hpp"
#include "medcl/metrics.hpp"
#include "medcl/parallel.hpp"
#include "medcl/rng.hpp"
#include "model_io.hpp"
#include "serialize_util.hpp"

namespace medcl {
namespace {

int crops_per_source(const TrainConfig& config) {
  return config.mix.crop.global_count + config.mix.crop.local_count;
}

uint64_t model_seed(const TrainConfig& config) {
  return derive_seed(config.trainer.seed, "train/model");
}

ModelSpec model_spec_from(const TrainConfig& config, int num_classes) {
  ModelSpec spec;
  spec.input_size = config.model.input_size;
  spec.base_width = config.model.base_width;
  spec.depth = config.model.depth;
  spec.num_classes = num_classes;
  spec.seed = model_seed(config);
  return spec;
}

SubsetSchedule run_schedule(const TrainConfig& config, int num_classes) {
  return sample_subsets(num_classes, derive_seed(config.trainer.seed, "train/schedule"));
}

// Weights with the 0/1 toggles folded in; what the optimizer actually sees.
LossWeights effective_weights(const LossSection& loss) {
  LossWeights w = loss.weights;
  w.mix *= loss.toggles.mix;
  w.cluster *= loss.toggles.cluster;
  w.ac *= loss.toggles.ac;
  w.map *= loss.toggles.map;
  w.scribble *= loss.toggles.scribble;
  w.category *= loss.toggles.category;
  return w;
}

}  // namespace

TrainState init_train_state(const TrainConfig& config, int num_classes) {
  config.validate();
  TrainState state;
  state.seed = config.trainer.seed;
  state.model = init_model(model_spec_from(config, num_classes));
  state.prototypes = PrototypeMatrix::init(2 * num_classes - 1, config.loss.proto_dim,
                                           derive_seed(state.seed, "train/prototypes"));
  const Eigen::Index total = state.model.values.size() + state.prototypes.a.size();
  state.moment1 = Eigen::VectorXd::Zero(total);
  state.moment2 = Eigen::VectorXd::Zero(total);
  state.schedule = run_schedule(config, num_classes);
  return state;
}

void save_state(const TrainState& state, const std::filesystem::path& path) {
  state.model.spec.validate();
  const Eigen::Index np = state.model.values.size();
  const Eigen::Index na = state.prototypes.a.size();
  require(state.moment1.size() == np + na && state.moment2.size() == np + na,
          ErrorCode::ShapeMismatch, "save_state: moment vectors do not span model + prototypes");

  nlohmann::ordered_json header;
  header["format_version"] = detail::kCheckpointFormatVersion;
  header["kind"] = "train_state";
  header["spec"] = detail::spec_to_json(state.model.spec);
  header["layout"] = detail::layout_to_json(state.model.layout);
  header["prototypes"]["rows"] = state.prototypes.rows();
  header["prototypes"]["dim"] = state.prototypes.dim();
  header["counters"]["adam_t"] = state.adam_t;
  header["counters"]["step"] = state.step;
  header["counters"]["epoch"] = state.epoch;
  header["seed"] = state.seed;
  header["schedule"] = state.schedule.perm;
  header["payload_doubles"] = np + na + 2 * (np + na);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot open for writing: " + path.string());
  detail::write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_doubles_le(out, state.model.values.data(), static_cast<size_t>(np));
  detail::write_doubles_le(out, state.prototypes.a.data(), static_cast<size_t>(na));
  detail::write_doubles_le(out, state.moment1.data(), static_cast<size_t>(np + na));
  detail::write_doubles_le(out, state.moment2.data(), static_cast<size_t>(np + na));
  require(out.good(), ErrorCode::IoError, "failed writing train state: " + path.string());
}

TrainState load_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open train state: " + path.string());
  const uint64_t header_len = detail::read_u64_le(in);
  require(header_len > 0 && header_len < (64u << 20), ErrorCode::FormatError,
          "train state header length is implausible");
  const std::string text = detail::read_bytes(in, header_len);
  const nlohmann::json header = nlohmann::json::parse(text, nullptr, false);
  require(!header.is_discarded(), ErrorCode::FormatError,
          "train state header is not valid JSON");

  TrainState state;
  int proto_rows = 0, proto_dim = 0;
  try {
    const int version = header.at("format_version").get<int>();
    require(version == detail::kCheckpointFormatVersion, ErrorCode::VersionMismatch,
            "unsupported checkpoint format version " + std::to_string(version));
    require(header.at("kind").get<std::string>() == "train_state", ErrorCode::FormatError,
            "checkpoint is not a train state");
    state.model.spec = detail::spec_from_json(header.at("spec"));
    state.model.spec.validate();
    state.model.layout = detail::layout_from_json(header.at("layout"));
    require(state.model.layout == detail::expected_layout(state.model.spec),
            ErrorCode::FormatError, "train state layout does not match its model spec");
    proto_rows = header.at("prototypes").at("rows").get<int>();
    proto_dim = header.at("prototypes").at("dim").get<int>();
    require(proto_rows == 2 * state.model.spec.num_classes - 1 && proto_dim >= 2,
            ErrorCode::FormatError, "train state prototype shape is inconsistent");
    state.adam_t = header.at("counters").at("adam_t").get<int64_t>();
    state.step = header.at("counters").at("step").get<int64_t>();
    state.epoch = header.at("counters").at("epoch").get<int>();
    require(state.adam_t >= 0 && state.step >= 0 && state.epoch >= 0, ErrorCode::FormatError,
            "train state counters must be non-negative");
    state.seed = header.at("seed").get<uint64_t>();
    state.schedule.perm = header.at("schedule").get<std::vector<int>>();
    std::vector<int> sorted = state.schedule.perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(state.model.spec.num_classes);
    std::iota(expect.begin(), expect.end(), 1);
    require(sorted == expect, ErrorCode::FormatError,
            "train state schedule is not a permutation of the classes");

    const Eigen::Index np = state.model.layout.back().offset + state.model.layout.back().count;
    const Eigen::Index na = static_cast<Eigen::Index>(proto_rows) * proto_dim;
    const uint64_t payload = header.at("payload_doubles").get<uint64_t>();
    require(payload == static_cast<uint64_t>(3 * (np + na)), ErrorCode::FormatError,
            "train state payload size is inconsistent");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("malformed train state header: ") + e.what());
  }

  const Eigen::Index np = state.model.layout.back().offset + state.model.layout.back().count;
  const Eigen::Index na = static_cast<Eigen::Index>(proto_rows) * proto_dim;
  state.model.values.resize(np);
  state.prototypes.a.resize(proto_rows, proto_dim);
  state.moment1.resize(np + na);
  state.moment2.resize(np + na);
  detail::read_doubles_le(in, state.model.values.data(), static_cast<size_t>(np));
  detail::read_doubles_le(in, state.prototypes.a.data(), static_cast<size_t>(na));
  detail::read_doubles_le(in, state.moment1.data(), static_cast<size_t>(np + na));
  detail::read_doubles_le(in, state.moment2.data(), static_cast<size_t>(np + na));
  require(in.good(), ErrorCode::FormatError, "train state payload is truncated");
  return state;
}

void save_train_log(const TrainLog& log, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["steps"] = nlohmann::ordered_json::array();
  for (const StepRecord& rec : log.steps) {
    nlohmann::ordered_json s;
    s["step"] = rec.step;
    s["epoch"] = rec.epoch;
    s["terms"]["mix"] = rec.loss.terms.mix;
    s["terms"]["cluster"] = rec.loss.terms.cluster;
    s["terms"]["ac"] = rec.loss.terms.ac;
    s["terms"]["map"] = rec.loss.terms.map;
    s["terms"]["scribble"] = rec.loss.terms.scribble;
    s["terms"]["category"] = rec.loss.terms.category;
    s["weights"]["mix"] = rec.loss.weights.mix;
    s["weights"]["cluster"] = rec.loss.weights.cluster;
    s["weights"]["ac"] = rec.loss.weights.ac;
    s["weights"]["map"] = rec.loss.weights.map;
    s["weights"]["scribble"] = rec.loss.weights.scribble;
    s["weights"]["category"] = rec.loss.weights.category;
    s["total"] = rec.loss.total;
    s["scribble_supervision"] = rec.scribble_supervision;
    s["wall_ms"] = rec.wall_ms;
    j["steps"].push_back(std::move(s));
  }
  j["validations"] = nlohmann::ordered_json::array();
  for (const ValidationRecord& rec : log.validations) {
    nlohmann::ordered_json v;
    v["epoch"] = rec.epoch;
    v["step"] = rec.step;
    v["mean_dice"] = rec.mean_dice;
    j["validations"].push_back(std::move(v));
  }
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot write train log: " + path.string());
  out << j.dump(2) << "\n";
  require(out.good(), ErrorCode::IoError, "failed writing train log: " + path.string());
}

int64_t steps_per_epoch(const TrainConfig& config, int num_sources) {
  const int64_t pool =
      static_cast<int64_t>(num_sources) * config.mix.rounds * crops_per_source(config);
  return pool / config.trainer.batch_size;
}

Batch build_batch(const Dataset& dataset, const TrainConfig& config, int epoch, int64_t step) {
  config.validate();
  const int64_t n_sources = static_cast<int64_t>(dataset.samples.size());
  require(n_sources > 0, ErrorCode::InvalidArgument, "build_batch: dataset is empty");
  const int64_t spe = steps_per_epoch(config, static_cast<int>(n_sources));
  require(spe > 0, ErrorCode::ConfigError,
          "dataset and crop settings yield no full batch per epoch");
  require(epoch >= 0 && step >= 0 && step < spe, ErrorCode::InvalidArgument,
          "build_batch: step index outside the epoch");

  const uint64_t seed = config.trainer.seed;
  const int m = dataset.manifest.generator.num_classes;
  const int cps = crops_per_source(config);
  const int rounds = config.mix.rounds;
  const int bsz = config.trainer.batch_size;

  // Every (source, round) contributes its multi-crop outputs to one epoch
  // pool, shuffled whole; a step takes the next contiguous slice.
  const int64_t pool = n_sources * rounds * cps;
  std::vector<int64_t> order(pool);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(seed, "train/epoch-order", epoch));
  shuffle_rng.shuffle(order.begin(), order.end());

  CropConfig crop_cfg = config.mix.crop;
  crop_cfg.out_height = config.model.input_size;
  crop_cfg.out_width = config.model.input_size;

  Batch batch;
  batch.schedule = run_schedule(config, m);

  std::map<int64_t, std::vector<PhantomSample>> crop_cache;
  auto crops_of = [&](int64_t s, int64_t r) -> const std::vector<PhantomSample>& {
    const int64_t key = s * rounds + r;
    const auto it = crop_cache.find(key);
    if (it != crop_cache.end()) return it->second;
    PhantomSample source = dataset.samples[static_cast<size_t>(s)];
    if (s >= config.data.num_scribble_sources) {
      source.scribbles.reset(source.scribbles.height(), source.scribbles.width(), kUnlabeled);
    }
    auto crops = multi_crop(source, crop_cfg, derive_seed(seed, "train/crops", epoch, key));
    return crop_cache.emplace(key, std::move(crops)).first->second;
  };

  std::vector<PhantomSample> plain(bsz);
  std::vector<MixedSample> mixed(bsz);
  for (int b = 0; b < bsz; ++b) {
    const int64_t unit = order[static_cast<size_t>(step * bsz + b)];
    const int64_t s = unit / (static_cast<int64_t>(rounds) * cps);
    const int64_t rem = unit % (static_cast<int64_t>(rounds) * cps);
    const PhantomSample& crop = crops_of(s, rem / cps)[static_cast<size_t>(rem % cps)];

    const uint64_t u = derive_seed(seed, "train/intra", epoch, step * bsz + b);
    BoundingBoxMask box =
        sample_bbox(crop.image.height(), crop.image.width(), config.mix.intra_area_lo,
                    config.mix.intra_area_hi, derive_seed(u, "bbox"));
    const double beta_prime = sample_mix_ratio(1.0, derive_seed(u, "beta-prime"));
    Rng theta_rng(derive_seed(u, "theta"));
    const double theta = theta_rng.uniform(-config.mix.theta_max, config.mix.theta_max);

    MixedSample ms;
    ms.image = intra_mix(crop.image, box, beta_prime, theta);
    ms.box = std::move(box);
    ms.schedule = batch.schedule;
    ms.provenance.source_ids = {static_cast<int>(s)};
    ms.provenance.beta_prime = beta_prime;
    ms.provenance.theta = theta;
    plain[b] = crop;
    mixed[b] = std::move(ms);
  }

  for (int j = 0; j < bsz / 2; ++j) {
    BatchPair pair;
    pair.beta = sample_mix_ratio(
        1.0, derive_seed(seed, "train/inter", epoch, step * (bsz / 2) + j));
    pair.mixed12 = inter_mix(mixed[2 * j], mixed[2 * j + 1], pair.beta);
    pair.crop1 = std::move(plain[2 * j]);
    pair.crop2 = std::move(plain[2 * j + 1]);
    pair.mixed1 = std::move(mixed[2 * j]);
    pair.mixed2 = std::move(mixed[2 * j + 1]);
    batch.pairs.push_back(std::move(pair));
  }
  return batch;
}

StepOutcome train_step(TrainState& state, const Batch& batch, const TrainConfig& config) {
  config.validate();
  const int pairs = static_cast<int>(batch.pairs.size());
  require(pairs > 0, ErrorCode::InvalidArgument, "train_step: empty batch");
  require(batch.schedule == state.schedule, ErrorCode::InvalidArgument,
          "train_step: batch schedule differs from the run schedule");

  const ModelSpec& spec = state.model.spec;
  const int m = spec.num_classes;
  require(state.prototypes.rows() == 2 * m - 1 &&
              state.prototypes.dim() == config.loss.proto_dim,
          ErrorCode::ShapeMismatch, "train_step: prototype matrix does not match the config");
  const int size = spec.input_size;
  const Eigen::Index n_pix = static_cast<Eigen::Index>(size) * size;
  const int branches = 5 * pairs;  // 2 plain crops + 3 mixed views per pair
  const LossWeights eff = effective_weights(config.loss);
  const LossToggles& toggles = config.loss.toggles;

  auto branch_image = [&](int b) -> const ImageF& {
    const BatchPair& pair = batch.pairs[b / 5];
    switch (b % 5) {
      case 0: return pair.crop1.image;
      case 1: return pair.crop2.image;
      case 2: return pair.mixed1.image;
      case 3: return pair.mixed2.image;
      default: return pair.mixed12.image;
    }
  };
  // Mixed views enumerated batch-wide: element e lives on branch 5*(e/3)+2+e%3.
  auto elem_branch = [](int e) { return 5 * (e / 3) + 2 + e % 3; };

  std::vector<ForwardOutput> outs(branches);
  std::vector<ForwardCache> caches(branches);
  const int jobs = effective_jobs(config.trainer.jobs);
  parallel_for(branches, jobs, [&](int64_t lo, int64_t hi) {
    for (int64_t b = lo; b < hi; ++b) {
      outs[b] = forward(state.model, branch_image(static_cast<int>(b)), &caches[b]);
    }
  });

  LossTerms terms;
  bool any_scribble = false;
  std::vector<Tensor3> grad_probs(branches), grad_cls(branches);
  for (int b = 0; b < branches; ++b) {
    grad_probs[b].reset(2 * m - 1, size, size);
    grad_cls[b].reset(m + 1, size, size);
  }

  // ----- supervised terms, plain crops only -----
  if (toggles.scribble) {
    double sum = 0.0;
    std::vector<std::pair<int, Tensor3>> contributions;
    for (int p = 0; p < pairs; ++p) {
      for (int k = 0; k < 2; ++k) {
        const int b = 5 * p + k;
        const PhantomSample& crop = k == 0 ? batch.pairs[p].crop1 : batch.pairs[p].crop2;
        Tensor3 g;
        const ScribbleLossResult res = scribble_loss_grad(outs[b].class_probs, crop.scribbles, g);
        if (res.has_supervision) {
          sum += res.value;
          contributions.emplace_back(b, std::move(g));
        }
      }
    }
    if (!contributions.empty()) {
      any_scribble = true;
      const double count = static_cast<double>(contributions.size());
      terms.scribble = sum / count;
      for (auto& [b, g] : contributions) {
        channels_as_rows(grad_cls[b]) += (eff.scribble / count) * channels_as_rows(g);
      }
    }
  }
  if (toggles.category) {
    double sum = 0.0;
    const double scale = eff.category / (2.0 * pairs);
    for (int p = 0; p < pairs; ++p) {
      for (int k = 0; k < 2; ++k) {
        const int b = 5 * p + k;
        const PhantomSample& crop = k == 0 ? batch.pairs[p].crop1 : batch.pairs[p].crop2;
        Tensor3 g;
        sum += category_loss_grad(outs[b].class_probs, crop.present_classes, g);
        channels_as_rows(grad_cls[b]) += scale * channels_as_rows(g);
      }
    }
    terms.category = sum / (2.0 * pairs);
  }

  // ----- unsupervised terms over the mixed views -----
  const int elems = 3 * pairs;
  Eigen::MatrixXd grad_a = Eigen::MatrixXd::Zero(2 * m - 1, config.loss.proto_dim);
  const bool need_q = toggles.map || toggles.cluster || toggles.ac;
  if (need_q) {
    const Eigen::Index ntot = elems * n_pix;
    Eigen::MatrixXd y_all(2 * m - 1, ntot);
    for (int e = 0; e < elems; ++e) {
      y_all.middleCols(e * n_pix, n_pix) = channels_as_rows(outs[elem_branch(e)].probs);
    }
    const Eigen::MatrixXd scores = compute_scores(state.prototypes, y_all);
    const Eigen::MatrixXd q = sinkhorn(scores, config.loss.eps, config.loss.sinkhorn_iters);
    Eigen::MatrixXd grad_y = Eigen::MatrixXd::Zero(2 * m - 1, ntot);

    if (toggles.map) {
      Eigen::MatrixXd grad_scores;
      terms.map = mapping_loss_grad(scores, q, config.loss.w, grad_scores);
      grad_y.noalias() += eff.map * (state.prototypes.a * grad_scores);
      grad_a.noalias() += eff.map * (y_all * grad_scores.transpose());
    }
    if (toggles.cluster || toggles.ac) {
      std::vector<Eigen::MatrixXd> aggregates(elems);
      for (int e = 0; e < elems; ++e) {
        aggregates[e].noalias() =
            y_all.middleCols(e * n_pix, n_pix) * q.middleRows(e * n_pix, n_pix);
      }
      std::vector<Eigen::MatrixXd> grad_agg(
          elems, Eigen::MatrixXd::Zero(2 * m - 1, config.loss.proto_dim));
      if (toggles.cluster) {
        std::vector<Eigen::MatrixXd> members(elems);
        for (int e = 0; e < elems; ++e) members[e] = aggregates[e].topRows(m);
        std::vector<Eigen::MatrixXd> member_grads;
        terms.cluster = cluster_loss_grad(members, config.loss.tau, member_grads);
        for (int e = 0; e < elems; ++e) {
          grad_agg[e].topRows(m) += eff.cluster * member_grads[e];
        }
      }
      if (toggles.ac) {
        double sum = 0.0;
        const double scale = eff.ac / elems;
        for (int e = 0; e < elems; ++e) {
          Eigen::MatrixXd gy, ga;
          sum += anatomy_consistency_loss_grad(y_all.middleCols(e * n_pix, n_pix),
                                               aggregates[e], batch.schedule, gy, ga);
          grad_y.middleCols(e * n_pix, n_pix) += scale * gy;
          grad_agg[e] += scale * ga;
        }
        terms.ac = sum / elems;
      }
      // Chain the aggregate gradients back through A = Y Q (Q constant).
      for (int e = 0; e < elems; ++e) {
        grad_y.middleCols(e * n_pix, n_pix).noalias() +=
            grad_agg[e] * q.middleRows(e * n_pix, n_pix).transpose();
      }
    }
    for (int e = 0; e < elems; ++e) {
      channels_as_rows(grad_probs[elem_branch(e)]) += grad_y.middleCols(e * n_pix, n_pix);
    }
  }
  if (toggles.mix) {
    double sum = 0.0;
    const double scale = eff.mix / pairs;
    for (int p = 0; p < pairs; ++p) {
      const int b1 = 5 * p + 2, b2 = 5 * p + 3, b12 = 5 * p + 4;
      const double beta = batch.pairs[p].beta;
      const MixTarget target = mix_targets(outs[b1].probs, outs[b2].probs, beta);
      const Eigen::MatrixXd y12 = channels_as_rows(outs[b12].probs);
      const Eigen::MatrixXd tmat = channels_as_rows(target.target);
      Eigen::MatrixXd g, gt;
      if (config.loss.detach_mix_targets) {
        sum += mix_consistency_loss_grad(y12, tmat, g);
      } else {
        sum += mix_consistency_loss_grad(y12, tmat, g, false, &gt);
        channels_as_rows(grad_probs[b1]) += (scale * beta) * gt;
        channels_as_rows(grad_probs[b2]) += (scale * (1.0 - beta)) * gt;
      }
      channels_as_rows(grad_probs[b12]) += scale * g;
    }
    terms.mix = sum / pairs;
  }

  // Throws "loss diverged" naming the first non-finite term.
  const LossBreakdown breakdown = total_loss(terms, eff);

  std::vector<Eigen::VectorXd> branch_grads(branches);
  parallel_for(branches, jobs, [&](int64_t lo, int64_t hi) {
    for (int64_t b = lo; b < hi; ++b) {
      branch_grads[b] = backward(state.model, caches[b], grad_probs[b], grad_cls[b]);
    }
  });

  const Eigen::Index np = state.model.values.size();
  const Eigen::Index na = state.prototypes.a.size();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(np + na);
  for (int b = 0; b < branches; ++b) grad.head(np) += branch_grads[b];
  grad.tail(na) = Eigen::Map<const Eigen::VectorXd>(grad_a.data(), na);
  require(grad.allFinite(), ErrorCode::NumericalError, "loss diverged: non-finite gradient");

  const OptimizerConfig& opt = config.trainer.optimizer;
  state.adam_t += 1;
  state.moment1 = opt.beta1 * state.moment1 + (1.0 - opt.beta1) * grad;
  state.moment2 = opt.beta2 * state.moment2 + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.adam_t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.adam_t));
  const Eigen::ArrayXd update = config.trainer.learning_rate * (state.moment1.array() / c1) /
                                ((state.moment2.array() / c2).sqrt() + opt.eps);

  state.model.values.array() -= update.head(np);
  Eigen::Map<Eigen::VectorXd> proto_flat(state.prototypes.a.data(), na);
  proto_flat.array() -= update.tail(na);
  // All-zero toggles must leave the state bitwise intact, so only renormalize
  // when the prototypes actually moved.
  if (!update.tail(na).isZero(0.0)) state.prototypes.renormalize_columns();

  state.step += 1;
  return {breakdown, any_scribble};
}

double validation_dice(const TrainState& state, const Dataset& dataset, int jobs) {
  require(!dataset.samples.empty(), ErrorCode::InvalidArgument, "validation dataset is empty");
  const ModelSpec& spec = state.model.spec;
  const int m = spec.num_classes;
  require(dataset.manifest.generator.num_classes == m, ErrorCode::ConfigError,
          "validation class count differs from the model");
  const int n = static_cast<int>(dataset.samples.size());
  for (const PhantomSample& sample : dataset.samples) {
    require(sample.image.height() == spec.input_size &&
                sample.image.width() == spec.input_size,
            ErrorCode::ShapeMismatch, "validation image size does not match the model");
  }
  std::vector<double> scores(n, 0.0);
  parallel_for(n, effective_jobs(jobs), [&](int64_t lo, int64_t hi) {
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
      double sum = 0.0;
      Grid<uint8_t> pred(spec.input_size, spec.input_size);
      Grid<uint8_t> truth(spec.input_size, spec.input_size);
      for (int cls = 1; cls <= m; ++cls) {
        for (int r = 0; r < spec.input_size; ++r) {
          for (int c = 0; c < spec.input_size; ++c) {
            pred(r, c) = argmax(r, c) == cls;
            truth(r, c) = sample.labels(r, c) == cls;
          }
        }
        sum += dice(pred, truth);
      }
      scores[i] = sum / m;
    }
  });
  double total = 0.0;
  for (double s : scores) total += s;
  return total / n;
}

TrainResult train(const TrainConfig& config, const std::filesystem::path& resume_from) {
  config.validate();
  const Dataset dataset = read_dataset(config.data.dataset_dir);
  const int n_sources = static_cast<int>(dataset.samples.size());
  require(n_sources > 0, ErrorCode::InvalidArgument, "training dataset is empty");
  const int m = dataset.manifest.generator.num_classes;
  require(config.data.num_scribble_sources <= n_sources, ErrorCode::ConfigError,
          "data.num_scribble_sources exceeds the training set size");

  std::optional<Dataset> val;
  if (!config.data.val_dataset_dir.empty()) {
    val = read_dataset(config.data.val_dataset_dir);
    require(val->manifest.generator.num_classes == m, ErrorCode::ConfigError,
            "validation split class count differs from the training split");
  }

  TrainState state;
  if (resume_from.empty()) {
    state = init_train_state(config, m);
  } else {
    state = load_state(resume_from);
    require(state.model.spec == model_spec_from(config, m), ErrorCode::ConfigError,
            "resume checkpoint does not match the config and dataset");
    require(state.seed == config.trainer.seed, ErrorCode::ConfigError,
            "resume checkpoint was trained with a different seed");
    require(state.schedule == run_schedule(config, m), ErrorCode::ConfigError,
            "resume checkpoint carries a different subset schedule");
    require(state.prototypes.dim() == config.loss.proto_dim, ErrorCode::ConfigError,
            "resume checkpoint prototype count differs from the config");
  }

  const std::filesystem::path out_dir = config.output.dir;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, ErrorCode::IoError, "cannot create output directory: " + out_dir.string());

  const int64_t spe = steps_per_epoch(config, n_sources);
  require(spe >= 1, ErrorCode::ConfigError,
          "dataset and crop settings yield no full batch per epoch");
  int64_t target = static_cast<int64_t>(config.trainer.epochs) * spe;
  if (config.trainer.max_steps > 0) target = std::min(target, config.trainer.max_steps);

  TrainLog log;
  TrainResult result;
  double best = -1.0;

  auto run_validation = [&]() {
    if (!val) return;
    const double score = validation_dice(state, *val, config.trainer.jobs);
    log.validations.push_back({state.epoch, state.step, score});
    if (score > best) {
      best = score;
      result.best_checkpoint = out_dir / "best.ckpt";
      save_state(state, result.best_checkpoint);
    }
  };

  while (state.step < target) {
    const int epoch = static_cast<int>(state.step / spe);
    const int64_t pos = state.step % spe;
    const Batch batch = build_batch(dataset, config, epoch, pos);
    const auto t0 = std::chrono::steady_clock::now();
    const StepOutcome outcome = train_step(state, batch, config);
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    log.steps.push_back({state.step, epoch, outcome.loss, outcome.scribble_supervision, wall_ms});

    if (config.trainer.checkpoint_every > 0 &&
        state.step % config.trainer.checkpoint_every == 0) {
      save_state(state, out_dir / "last.ckpt");
    }
    if (state.step % spe == 0) {
      state.epoch = static_cast<int>(state.step / spe);
      save_state(state, out_dir / "last.ckpt");
      if (state.epoch % config.trainer.validate_every == 0) run_validation();
    }
  }

  save_state(state, out_dir / "last.ckpt");
  save_train_log(log, out_dir / "train_log.json");
  result.state = std::move(state);
  result.log = std::move(log);
  result.last_checkpoint = out_dir / "last.ckpt";
  return result;
}

}  // namespace medcl
