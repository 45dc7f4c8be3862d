#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "medcl/error.hpp"
#include "medcl/trainer.hpp"

using namespace medcl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("medcl_trainer_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

template <typename Fn>
ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error to be thrown");
  return ErrorCode::InternalError;
}

// Pocket-sized phantoms keep every trainer test in the millisecond range.
PhantomSpec tiny_phantom(int m) {
  PhantomSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.num_classes = m;
  return spec;
}

// Four sources, one mix round, four crops each, batch of four: an epoch of
// exactly four steps on a 16x16 model.
TrainConfig tiny_config(uint64_t seed) {
  TrainConfig config;
  config.model.input_size = 16;
  config.model.base_width = 4;
  config.model.depth = 2;
  config.trainer.batch_size = 4;
  config.trainer.learning_rate = 1e-3;
  config.trainer.seed = seed;
  config.trainer.jobs = 1;
  config.data.num_scribble_sources = 4;
  config.mix.rounds = 1;
  config.mix.crop.global_count = 2;
  config.mix.crop.local_count = 2;
  config.loss.proto_dim = 6;
  return config;
}

Dataset tiny_dataset(int m, int count, uint64_t seed) {
  return generate_dataset(tiny_phantom(m), count, seed, "train");
}

bool same_doubles(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool same_doubles(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool same_terms(const LossTerms& a, const LossTerms& b) {
  return a.mix == b.mix && a.cluster == b.cluster && a.ac == b.ac && a.map == b.map &&
         a.scribble == b.scribble && a.category == b.category;
}

void set_toggles(TrainConfig& config, int mix, int cluster, int ac, int map, int scribble,
                 int category) {
  config.loss.toggles.mix = mix;
  config.loss.toggles.cluster = cluster;
  config.loss.toggles.ac = ac;
  config.loss.toggles.map = map;
  config.loss.toggles.scribble = scribble;
  config.loss.toggles.category = category;
}

}  // namespace

TEST_CASE("steps_per_epoch reproduces the crop amplification arithmetic") {
  TrainConfig config;  // desk-scale defaults: 10 crops, 3 rounds, batch 8
  CHECK(steps_per_epoch(config, 25) == 93);
  // Each step carries three mixed views per pair, so an epoch over 25 sources
  // feeds well over 900 mixed samples to the clustering losses.
  const int64_t mixed_per_step = 3 * (config.trainer.batch_size / 2);
  CHECK(steps_per_epoch(config, 25) * mixed_per_step == 1116);
  CHECK(steps_per_epoch(config, 25) * mixed_per_step >= 900);

  TrainConfig tiny = tiny_config(1);
  CHECK(steps_per_epoch(tiny, 4) == 4);
  CHECK(steps_per_epoch(tiny, 0) == 0);
}

TEST_CASE("build_batch is deterministic and pairs crops in order") {
  const Dataset dataset = tiny_dataset(3, 4, 11);
  const TrainConfig config = tiny_config(7);

  const Batch a = build_batch(dataset, config, 0, 1);
  const Batch b = build_batch(dataset, config, 0, 1);
  REQUIRE(a.pairs.size() == 2);
  REQUIRE(b.pairs.size() == 2);
  CHECK(a.schedule == b.schedule);
  CHECK(static_cast<int>(a.schedule.perm.size()) == 3);
  for (size_t p = 0; p < a.pairs.size(); ++p) {
    CHECK(a.pairs[p].beta == b.pairs[p].beta);
    CHECK(a.pairs[p].crop1.image == b.pairs[p].crop1.image);
    CHECK(a.pairs[p].crop2.image == b.pairs[p].crop2.image);
    CHECK(a.pairs[p].mixed1.image == b.pairs[p].mixed1.image);
    CHECK(a.pairs[p].mixed12.image == b.pairs[p].mixed12.image);
    CHECK(a.pairs[p].mixed1.provenance.beta_prime ==
          b.pairs[p].mixed1.provenance.beta_prime);
  }
  // Crops land at the network input size and mixing respects [0,1] range.
  CHECK(a.pairs[0].crop1.image.height() == 16);
  CHECK(a.pairs[0].mixed12.image.width() == 16);
  for (double v : a.pairs[0].mixed12.image) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // A different step of the same epoch draws different crops.
  const Batch c = build_batch(dataset, config, 0, 2);
  CHECK(!(c.pairs[0].crop1.image == a.pairs[0].crop1.image));

  CHECK(error_code_of([&] { build_batch(dataset, config, 0, 99); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("build_batch blanks scribbles outside the annotated sources") {
  const Dataset dataset = tiny_dataset(2, 4, 3);
  TrainConfig config = tiny_config(5);
  config.data.num_scribble_sources = 0;

  const Batch batch = build_batch(dataset, config, 0, 0);
  for (const BatchPair& pair : batch.pairs) {
    for (const PhantomSample* crop : {&pair.crop1, &pair.crop2}) {
      for (uint8_t v : crop->scribbles) CHECK(v == kUnlabeled);
    }
  }

  // With every source annotated, at least one crop keeps some scribbles.
  config.data.num_scribble_sources = 4;
  const Batch full = build_batch(dataset, config, 0, 0);
  int labeled = 0;
  for (const BatchPair& pair : full.pairs) {
    for (const PhantomSample* crop : {&pair.crop1, &pair.crop2}) {
      for (uint8_t v : crop->scribbles) labeled += v != kUnlabeled;
    }
  }
  CHECK(labeled > 0);
}

TEST_CASE("train_step without annotated sources reports no scribble supervision") {
  const Dataset dataset = tiny_dataset(2, 4, 3);
  TrainConfig config = tiny_config(5);
  config.data.num_scribble_sources = 0;

  TrainState state = init_train_state(config, 2);
  const Batch batch = build_batch(dataset, config, 0, 0);
  const StepOutcome outcome = train_step(state, batch, config);
  CHECK(!outcome.scribble_supervision);
  CHECK(outcome.loss.terms.scribble == 0.0);
  CHECK(outcome.loss.terms.category != 0.0);
  CHECK(std::isfinite(outcome.loss.total));
}

TEST_CASE("disabled loss terms leave the parameters bitwise untouched") {
  const Dataset dataset = tiny_dataset(2, 4, 9);
  TrainConfig config = tiny_config(2);
  set_toggles(config, 0, 0, 0, 0, 0, 0);

  TrainState state = init_train_state(config, 2);
  const Eigen::VectorXd values0 = state.model.values;
  const Eigen::MatrixXd protos0 = state.prototypes.a;

  const Batch batch = build_batch(dataset, config, 0, 0);
  const StepOutcome outcome = train_step(state, batch, config);
  CHECK(outcome.loss.total == 0.0);
  CHECK(same_terms(outcome.loss.terms, LossTerms{}));
  CHECK(same_doubles(state.model.values, values0));
  CHECK(same_doubles(state.prototypes.a, protos0));
  CHECK(state.step == 1);
  CHECK(state.adam_t == 1);
}

TEST_CASE("toggle patterns gate exactly the expected loss terms") {
  const Dataset dataset = tiny_dataset(3, 4, 21);
  TrainConfig base = tiny_config(13);

  struct Pattern {
    int mix, cluster, ac, map, scribble, category;
  };
  // Supervision only; +mix; +cluster (mapping rides along); mix+cluster; all.
  const Pattern patterns[] = {
      {0, 0, 0, 0, 1, 1}, {1, 0, 0, 0, 1, 1}, {0, 1, 0, 1, 1, 1},
      {1, 1, 0, 1, 1, 1}, {1, 1, 1, 1, 1, 1},
  };
  for (const Pattern& pat : patterns) {
    TrainConfig config = base;
    set_toggles(config, pat.mix, pat.cluster, pat.ac, pat.map, pat.scribble, pat.category);
    TrainState state = init_train_state(config, 3);
    const Batch batch = build_batch(dataset, config, 0, 0);
    const LossTerms terms = train_step(state, batch, config).loss.terms;

    CHECK((pat.mix ? terms.mix != 0.0 : terms.mix == 0.0));
    CHECK((pat.cluster ? terms.cluster != 0.0 : terms.cluster == 0.0));
    CHECK((pat.ac ? terms.ac != 0.0 : terms.ac == 0.0));
    CHECK((pat.map ? terms.map != 0.0 : terms.map == 0.0));
    CHECK(terms.scribble != 0.0);
    CHECK(terms.category != 0.0);
  }
}

TEST_CASE("repeated steps on one batch drive the total loss down") {
  const Dataset dataset = tiny_dataset(2, 4, 31);
  TrainConfig config = tiny_config(17);

  TrainState state = init_train_state(config, 2);
  const Batch batch = build_batch(dataset, config, 0, 0);
  const double initial = train_step(state, batch, config).loss.total;
  double final_total = initial;
  for (int i = 0; i < 49; ++i) final_total = train_step(state, batch, config).loss.total;
  CHECK(std::isfinite(final_total));
  CHECK(final_total < initial);
  CHECK(state.step == 50);
}

TEST_CASE("train state survives a checkpoint round trip bit for bit") {
  TempDir tmp;
  const Dataset dataset = tiny_dataset(3, 4, 2);
  TrainConfig config = tiny_config(23);

  TrainState state = init_train_state(config, 3);
  for (int64_t s = 0; s < 2; ++s) {
    train_step(state, build_batch(dataset, config, 0, s), config);
  }

  const fs::path path = tmp.path / "state.ckpt";
  save_state(state, path);
  const TrainState loaded = load_state(path);
  CHECK(loaded.model.spec == state.model.spec);
  CHECK(loaded.model.layout == state.model.layout);
  CHECK(same_doubles(loaded.model.values, state.model.values));
  CHECK(same_doubles(loaded.prototypes.a, state.prototypes.a));
  CHECK(same_doubles(loaded.moment1, state.moment1));
  CHECK(same_doubles(loaded.moment2, state.moment2));
  CHECK(loaded.adam_t == state.adam_t);
  CHECK(loaded.step == state.step);
  CHECK(loaded.epoch == state.epoch);
  CHECK(loaded.seed == state.seed);
  CHECK(loaded.schedule == state.schedule);

  // A continued step from the reloaded state matches the original exactly.
  TrainState resumed = loaded;
  const Batch next = build_batch(dataset, config, 0, 2);
  const StepOutcome a = train_step(state, next, config);
  const StepOutcome b = train_step(resumed, next, config);
  CHECK(same_terms(a.loss.terms, b.loss.terms));
  CHECK(a.loss.total == b.loss.total);
  CHECK(same_doubles(state.model.values, resumed.model.values));
}

TEST_CASE("damaged train states are rejected with precise codes") {
  TempDir tmp;
  TrainConfig config = tiny_config(3);
  TrainState state = init_train_state(config, 2);

  CHECK(error_code_of([&] { load_state(tmp.path / "absent.ckpt"); }) == ErrorCode::IoError);

  // A model checkpoint is not a train state.
  const fs::path model_path = tmp.path / "model.ckpt";
  save_model(state.model, model_path);
  CHECK(error_code_of([&] { load_state(model_path); }) == ErrorCode::FormatError);

  const fs::path state_path = tmp.path / "state.ckpt";
  save_state(state, state_path);
  std::ifstream in(state_path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  bytes.resize(bytes.size() - 64);
  std::ofstream out(state_path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  CHECK(error_code_of([&] { load_state(state_path); }) == ErrorCode::FormatError);
}

TEST_CASE("train writes checkpoints and an epoch-aligned log") {
  TempDir tmp;
  const fs::path train_dir = tmp.path / "train";
  const fs::path val_dir = tmp.path / "val";
  Dataset train_split = tiny_dataset(2, 4, 41);
  write_dataset(train_split.samples, train_split.manifest, train_dir);
  Dataset val_split = generate_dataset(tiny_phantom(2), 3, 42, "val");
  write_dataset(val_split.samples, val_split.manifest, val_dir);

  TrainConfig config = tiny_config(19);
  config.data.dataset_dir = train_dir.string();
  config.data.val_dataset_dir = val_dir.string();
  config.trainer.epochs = 2;
  config.output.dir = (tmp.path / "run").string();

  const TrainResult result = train(config);
  REQUIRE(result.log.steps.size() == 8);
  for (size_t i = 0; i < result.log.steps.size(); ++i) {
    CHECK(result.log.steps[i].step == static_cast<int64_t>(i) + 1);
    CHECK(result.log.steps[i].epoch == static_cast<int>(i) / 4);
    CHECK(std::isfinite(result.log.steps[i].loss.total));
    CHECK(result.log.steps[i].wall_ms >= 0.0);
  }
  CHECK(result.state.step == 8);
  CHECK(result.state.epoch == 2);
  REQUIRE(result.log.validations.size() == 2);
  CHECK(result.log.validations[0].epoch == 1);
  CHECK(result.log.validations[0].step == 4);
  CHECK(result.log.validations[1].epoch == 2);
  CHECK(result.log.validations[0].mean_dice >= 0.0);
  CHECK(result.log.validations[0].mean_dice <= 1.0);

  CHECK(fs::exists(result.last_checkpoint));
  CHECK(fs::exists(result.best_checkpoint));
  CHECK(fs::exists(fs::path(config.output.dir) / "train_log.json"));
  const TrainState last = load_state(result.last_checkpoint);
  CHECK(same_doubles(last.model.values, result.state.model.values));
}

TEST_CASE("zero epochs emits the initial checkpoint and an empty log") {
  TempDir tmp;
  const fs::path train_dir = tmp.path / "train";
  Dataset split = tiny_dataset(2, 4, 41);
  write_dataset(split.samples, split.manifest, train_dir);

  TrainConfig config = tiny_config(19);
  config.data.dataset_dir = train_dir.string();
  config.trainer.epochs = 0;
  config.output.dir = (tmp.path / "run").string();

  const TrainResult result = train(config);
  CHECK(result.log.steps.empty());
  CHECK(result.log.validations.empty());
  CHECK(result.state.step == 0);
  CHECK(result.best_checkpoint.empty());
  const TrainState init = init_train_state(config, 2);
  const TrainState saved = load_state(result.last_checkpoint);
  CHECK(same_doubles(saved.model.values, init.model.values));
  CHECK(same_doubles(saved.prototypes.a, init.prototypes.a));
}

TEST_CASE("training twice from one seed is bit-identical") {
  TempDir tmp;
  const fs::path train_dir = tmp.path / "train";
  Dataset split = tiny_dataset(3, 4, 47);
  write_dataset(split.samples, split.manifest, train_dir);

  TrainConfig config = tiny_config(29);
  config.data.dataset_dir = train_dir.string();
  config.trainer.epochs = 1;

  config.output.dir = (tmp.path / "run_a").string();
  const TrainResult a = train(config);
  config.output.dir = (tmp.path / "run_b").string();
  const TrainResult b = train(config);

  REQUIRE(a.log.steps.size() == b.log.steps.size());
  for (size_t i = 0; i < a.log.steps.size(); ++i) {
    CHECK(same_terms(a.log.steps[i].loss.terms, b.log.steps[i].loss.terms));
    CHECK(a.log.steps[i].loss.total == b.log.steps[i].loss.total);
    CHECK(a.log.steps[i].scribble_supervision == b.log.steps[i].scribble_supervision);
  }
  CHECK(same_doubles(a.state.model.values, b.state.model.values));
  CHECK(same_doubles(a.state.prototypes.a, b.state.prototypes.a));
  CHECK(same_doubles(a.state.moment2, b.state.moment2));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  TempDir tmp;
  const fs::path train_dir = tmp.path / "train";
  Dataset split = tiny_dataset(2, 4, 53);
  write_dataset(split.samples, split.manifest, train_dir);

  TrainConfig config = tiny_config(37);
  config.data.dataset_dir = train_dir.string();

  // Uninterrupted reference: two epochs in one go.
  config.trainer.epochs = 2;
  config.output.dir = (tmp.path / "ref").string();
  const TrainResult ref = train(config);

  // Interrupted run: one epoch, then resume to the same horizon.
  config.trainer.epochs = 1;
  config.output.dir = (tmp.path / "half").string();
  const TrainResult half = train(config);
  config.trainer.epochs = 2;
  config.output.dir = (tmp.path / "rest").string();
  const TrainResult rest = train(config, half.last_checkpoint);

  REQUIRE(ref.log.steps.size() == 8);
  REQUIRE(rest.log.steps.size() == 4);
  for (size_t i = 0; i < rest.log.steps.size(); ++i) {
    const StepRecord& got = rest.log.steps[i];
    const StepRecord& want = ref.log.steps[4 + i];
    CHECK(got.step == want.step);
    CHECK(got.epoch == want.epoch);
    CHECK(same_terms(got.loss.terms, want.loss.terms));
    CHECK(got.loss.total == want.loss.total);
  }
  CHECK(same_doubles(rest.state.model.values, ref.state.model.values));
  CHECK(same_doubles(rest.state.prototypes.a, ref.state.prototypes.a));
  CHECK(same_doubles(rest.state.moment1, ref.state.moment1));

  // A checkpoint from a different run setup is refused.
  config.trainer.seed = 38;
  CHECK(error_code_of([&] { train(config, half.last_checkpoint); }) == ErrorCode::ConfigError);
}

TEST_CASE("validation dice rejects mismatched class counts") {
  const Dataset dataset = tiny_dataset(3, 2, 5);
  TrainConfig config = tiny_config(3);
  TrainState state = init_train_state(config, 2);
  CHECK(error_code_of([&] { validation_dice(state, dataset); }) == ErrorCode::ConfigError);

  const Dataset matching = tiny_dataset(2, 2, 5);
  const double score = validation_dice(state, matching);
  CHECK(score >= 0.0);
  CHECK(score <= 1.0);
  CHECK(validation_dice(state, matching) == score);
}

// The composite gradient is validated end to end: the loss is re-evaluated as
// a pure function of the parameters with the transport plan and mix targets
// held fixed (both are constants to the optimizer), and finite differences
// are compared against the gradient recovered from a single Adam step.
namespace {

LossWeights effective(const LossSection& loss) {
  LossWeights w = loss.weights;
  w.mix *= loss.toggles.mix;
  w.cluster *= loss.toggles.cluster;
  w.ac *= loss.toggles.ac;
  w.map *= loss.toggles.map;
  w.scribble *= loss.toggles.scribble;
  w.category *= loss.toggles.category;
  return w;
}

double frozen_total(const ModelParams& model, const PrototypeMatrix& protos,
                    const Batch& batch, const TrainConfig& config,
                    const Eigen::MatrixXd& q_frozen,
                    const std::vector<Eigen::MatrixXd>& targets_frozen) {
  const int m = model.spec.num_classes;
  const int pairs = static_cast<int>(batch.pairs.size());
  const Eigen::Index n_pix =
      static_cast<Eigen::Index>(model.spec.input_size) * model.spec.input_size;
  const LossWeights eff = effective(config.loss);

  std::vector<ForwardOutput> outs(5 * pairs);
  for (int p = 0; p < pairs; ++p) {
    outs[5 * p + 0] = forward(model, batch.pairs[p].crop1.image);
    outs[5 * p + 1] = forward(model, batch.pairs[p].crop2.image);
    outs[5 * p + 2] = forward(model, batch.pairs[p].mixed1.image);
    outs[5 * p + 3] = forward(model, batch.pairs[p].mixed2.image);
    outs[5 * p + 4] = forward(model, batch.pairs[p].mixed12.image);
  }

  LossTerms terms;
  double scribble_sum = 0.0;
  int scribble_count = 0;
  double category_sum = 0.0;
  for (int p = 0; p < pairs; ++p) {
    for (int k = 0; k < 2; ++k) {
      const PhantomSample& crop = k == 0 ? batch.pairs[p].crop1 : batch.pairs[p].crop2;
      const ScribbleLossResult res = scribble_loss(outs[5 * p + k].class_probs, crop.scribbles);
      if (res.has_supervision) {
        scribble_sum += res.value;
        scribble_count += 1;
      }
      category_sum += category_loss(outs[5 * p + k].class_probs, crop.present_classes);
    }
  }
  if (scribble_count > 0) terms.scribble = scribble_sum / scribble_count;
  terms.category = category_sum / (2.0 * pairs);

  const int elems = 3 * pairs;
  Eigen::MatrixXd y_all(2 * m - 1, elems * n_pix);
  for (int e = 0; e < elems; ++e) {
    y_all.middleCols(e * n_pix, n_pix) = channels_as_rows(outs[5 * (e / 3) + 2 + e % 3].probs);
  }
  const Eigen::MatrixXd scores = compute_scores(protos, y_all);
  terms.map = mapping_loss(scores, q_frozen, config.loss.w);

  std::vector<Eigen::MatrixXd> members(elems);
  double ac_sum = 0.0;
  for (int e = 0; e < elems; ++e) {
    const Eigen::MatrixXd agg =
        y_all.middleCols(e * n_pix, n_pix) * q_frozen.middleRows(e * n_pix, n_pix);
    members[e] = agg.topRows(m);
    ac_sum += anatomy_consistency_loss(y_all.middleCols(e * n_pix, n_pix), agg, batch.schedule);
  }
  terms.cluster = cluster_loss(members, config.loss.tau);
  terms.ac = ac_sum / elems;

  double mix_sum = 0.0;
  for (int p = 0; p < pairs; ++p) {
    mix_sum += mix_consistency_loss(channels_as_rows(outs[5 * p + 4].probs), targets_frozen[p]);
  }
  terms.mix = mix_sum / pairs;

  return total_loss(terms, eff).total;
}

}  // namespace

TEST_CASE("finite differences confirm the assembled end-to-end gradient") {
  const Dataset dataset = tiny_dataset(2, 4, 61);
  TrainConfig config = tiny_config(43);
  config.trainer.batch_size = 2;  // one pair keeps the FD sweeps cheap
  // A huge Adam epsilon makes the first update linear in the gradient, so the
  // raw gradient can be read back from the parameter delta exactly.
  config.trainer.learning_rate = 1e6;
  config.trainer.optimizer.eps = 1e12;

  const TrainState state0 = init_train_state(config, 2);
  const Batch batch = build_batch(dataset, config, 0, 0);

  // Freeze the transport plan and the mix targets at their step values.
  const int m = 2;
  const Eigen::Index n_pix = 16 * 16;
  std::vector<ForwardOutput> outs(5);
  const BatchPair& pair = batch.pairs[0];
  outs[0] = forward(state0.model, pair.crop1.image);
  outs[1] = forward(state0.model, pair.crop2.image);
  outs[2] = forward(state0.model, pair.mixed1.image);
  outs[3] = forward(state0.model, pair.mixed2.image);
  outs[4] = forward(state0.model, pair.mixed12.image);
  Eigen::MatrixXd y_all(2 * m - 1, 3 * n_pix);
  for (int e = 0; e < 3; ++e) {
    y_all.middleCols(e * n_pix, n_pix) = channels_as_rows(outs[2 + e].probs);
  }
  const Eigen::MatrixXd q_frozen =
      sinkhorn(compute_scores(state0.prototypes, y_all), config.loss.eps,
               config.loss.sinkhorn_iters);
  const std::vector<Eigen::MatrixXd> targets_frozen = {
      channels_as_rows(mix_targets(outs[2].probs, outs[3].probs, pair.beta).target)};

  // The frozen functional must agree with the trainer's own loss at the
  // expansion point, otherwise the comparison below would be meaningless.
  TrainState stepped = state0;
  const StepOutcome outcome = train_step(stepped, batch, config);
  const double at_theta0 =
      frozen_total(state0.model, state0.prototypes, batch, config, q_frozen, targets_frozen);
  CHECK(std::abs(at_theta0 - outcome.loss.total) <= 1e-9 * (1.0 + std::abs(at_theta0)));

  // Recover the gradient from the Adam update: with zero moments and t = 1,
  // delta = lr * g / (|g| + eps), which inverts to g = u*eps/(1-|u|).
  const Eigen::Index np = state0.model.values.size();
  Eigen::VectorXd grad(np);
  for (Eigen::Index i = 0; i < np; ++i) {
    const double u =
        (state0.model.values[i] - stepped.model.values[i]) / config.trainer.learning_rate;
    grad[i] = u * config.trainer.optimizer.eps / (1.0 - std::abs(u));
  }

  // Probe 20 parameters spread across the magnitude range.
  std::vector<Eigen::Index> picked;
  std::vector<Eigen::Index> by_mag(np);
  std::iota(by_mag.begin(), by_mag.end(), Eigen::Index{0});
  std::sort(by_mag.begin(), by_mag.end(), [&](Eigen::Index a, Eigen::Index b) {
    return std::abs(grad[a]) > std::abs(grad[b]);
  });
  Eigen::Index live = 0;
  while (live < np && std::abs(grad[by_mag[live]]) > 1e-8) ++live;
  REQUIRE(live >= 20);
  for (int k = 0; k < 20; ++k) picked.push_back(by_mag[k * live / 20]);

  const double h = 1e-5;
  for (Eigen::Index i : picked) {
    ModelParams probe = state0.model;
    probe.values[i] = state0.model.values[i] + h;
    const double up = frozen_total(probe, state0.prototypes, batch, config, q_frozen,
                                   targets_frozen);
    probe.values[i] = state0.model.values[i] - h;
    const double down = frozen_total(probe, state0.prototypes, batch, config, q_frozen,
                                     targets_frozen);
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    CHECK(std::abs(fd - grad[i]) / denom <= 1e-3);
  }

  // Prototype columns are renormalized after the step, so only the component
  // tangential to each unit column survives in the observed delta. Compare
  // projected analytic and projected finite-difference gradients columnwise.
  const int d = config.loss.proto_dim;
  for (int col : {0, d - 1}) {
    const Eigen::VectorXd a_col = state0.prototypes.a.col(col);
    Eigen::VectorXd g_obs(2 * m - 1), g_fd(2 * m - 1);
    for (int r = 0; r < 2 * m - 1; ++r) {
      g_obs[r] = (state0.prototypes.a(r, col) - stepped.prototypes.a(r, col)) *
                 config.trainer.optimizer.eps / config.trainer.learning_rate;
      PrototypeMatrix probe = state0.prototypes;
      probe.a(r, col) = a_col[r] + h;
      const double up = frozen_total(state0.model, probe, batch, config, q_frozen,
                                     targets_frozen);
      probe.a(r, col) = a_col[r] - h;
      const double down = frozen_total(state0.model, probe, batch, config, q_frozen,
                                       targets_frozen);
      g_fd[r] = (up - down) / (2.0 * h);
    }
    const Eigen::VectorXd fd_tan = g_fd - a_col * a_col.dot(g_fd);
    for (int r = 0; r < 2 * m - 1; ++r) {
      const double denom = std::max({std::abs(fd_tan[r]), std::abs(g_obs[r]), 1e-6});
      CHECK(std::abs(fd_tan[r] - g_obs[r]) / denom <= 1e-3);
    }
  }
}
