#include "medcl/config.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "medcl/error.hpp"

namespace medcl {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_tree(const TrainConfig& c) {
  ordered_json j;
  j["data"]["dataset_dir"] = c.data.dataset_dir;
  j["data"]["val_dataset_dir"] = c.data.val_dataset_dir;
  j["data"]["num_scribble_sources"] = c.data.num_scribble_sources;

  j["model"]["input_size"] = c.model.input_size;
  j["model"]["base_width"] = c.model.base_width;
  j["model"]["depth"] = c.model.depth;

  j["trainer"]["epochs"] = c.trainer.epochs;
  j["trainer"]["max_steps"] = c.trainer.max_steps;
  j["trainer"]["batch_size"] = c.trainer.batch_size;
  j["trainer"]["learning_rate"] = c.trainer.learning_rate;
  j["trainer"]["optimizer"]["kind"] = c.trainer.optimizer.kind;
  j["trainer"]["optimizer"]["beta1"] = c.trainer.optimizer.beta1;
  j["trainer"]["optimizer"]["beta2"] = c.trainer.optimizer.beta2;
  j["trainer"]["optimizer"]["eps"] = c.trainer.optimizer.eps;
  j["trainer"]["seed"] = c.trainer.seed;
  j["trainer"]["checkpoint_every"] = c.trainer.checkpoint_every;
  j["trainer"]["validate_every"] = c.trainer.validate_every;
  j["trainer"]["jobs"] = c.trainer.jobs;

  j["loss"]["weights"]["mix"] = c.loss.weights.mix;
  j["loss"]["weights"]["cluster"] = c.loss.weights.cluster;
  j["loss"]["weights"]["ac"] = c.loss.weights.ac;
  j["loss"]["weights"]["map"] = c.loss.weights.map;
  j["loss"]["weights"]["scribble"] = c.loss.weights.scribble;
  j["loss"]["weights"]["category"] = c.loss.weights.category;
  j["loss"]["toggles"]["mix"] = c.loss.toggles.mix;
  j["loss"]["toggles"]["cluster"] = c.loss.toggles.cluster;
  j["loss"]["toggles"]["ac"] = c.loss.toggles.ac;
  j["loss"]["toggles"]["map"] = c.loss.toggles.map;
  j["loss"]["toggles"]["scribble"] = c.loss.toggles.scribble;
  j["loss"]["toggles"]["category"] = c.loss.toggles.category;
  j["loss"]["eps"] = c.loss.eps;
  j["loss"]["w"] = c.loss.w;
  j["loss"]["tau"] = c.loss.tau;
  j["loss"]["proto_dim"] = c.loss.proto_dim;
  j["loss"]["sinkhorn_iters"] = c.loss.sinkhorn_iters;
  j["loss"]["detach_mix_targets"] = c.loss.detach_mix_targets;

  j["mix"]["rounds"] = c.mix.rounds;
  j["mix"]["intra_area_lo"] = c.mix.intra_area_lo;
  j["mix"]["intra_area_hi"] = c.mix.intra_area_hi;
  j["mix"]["theta_max"] = c.mix.theta_max;
  j["mix"]["crop"]["global_count"] = c.mix.crop.global_count;
  j["mix"]["crop"]["global_lo"] = c.mix.crop.global_lo;
  j["mix"]["crop"]["global_hi"] = c.mix.crop.global_hi;
  j["mix"]["crop"]["local_count"] = c.mix.crop.local_count;
  j["mix"]["crop"]["local_lo"] = c.mix.crop.local_lo;
  j["mix"]["crop"]["local_hi"] = c.mix.crop.local_hi;

  j["output"]["dir"] = c.output.dir;
  return j;
}

// Reject keys the schema tree does not know, recursively, naming the full
// dotted path.
void check_unknown(const json& input, const json& schema, const std::string& prefix) {
  if (!input.is_object()) return;
  for (const auto& [key, value] : input.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    require(schema.is_object() && schema.contains(key), ErrorCode::ConfigError,
            "unknown config key: " + path);
    if (value.is_object()) check_unknown(value, schema.at(key), path);
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& field, const std::string& prefix) {
  if (!j.is_object() || !j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const json::exception&) {
    fail(ErrorCode::ConfigError, "config key " + prefix + "." + key + " has the wrong type");
  }
}

void from_tree(const json& j, TrainConfig& c) {
  if (j.contains("data")) {
    const json& d = j.at("data");
    read_if(d, "dataset_dir", c.data.dataset_dir, "data");
    read_if(d, "val_dataset_dir", c.data.val_dataset_dir, "data");
    read_if(d, "num_scribble_sources", c.data.num_scribble_sources, "data");
  }
  if (j.contains("model")) {
    const json& d = j.at("model");
    read_if(d, "input_size", c.model.input_size, "model");
    read_if(d, "base_width", c.model.base_width, "model");
    read_if(d, "depth", c.model.depth, "model");
  }
  if (j.contains("trainer")) {
    const json& d = j.at("trainer");
    read_if(d, "epochs", c.trainer.epochs, "trainer");
    read_if(d, "max_steps", c.trainer.max_steps, "trainer");
    read_if(d, "batch_size", c.trainer.batch_size, "trainer");
    read_if(d, "learning_rate", c.trainer.learning_rate, "trainer");
    if (d.contains("optimizer")) {
      const json& o = d.at("optimizer");
      read_if(o, "kind", c.trainer.optimizer.kind, "trainer.optimizer");
      read_if(o, "beta1", c.trainer.optimizer.beta1, "trainer.optimizer");
      read_if(o, "beta2", c.trainer.optimizer.beta2, "trainer.optimizer");
      read_if(o, "eps", c.trainer.optimizer.eps, "trainer.optimizer");
    }
    read_if(d, "seed", c.trainer.seed, "trainer");
    read_if(d, "checkpoint_every", c.trainer.checkpoint_every, "trainer");
    read_if(d, "validate_every", c.trainer.validate_every, "trainer");
    read_if(d, "jobs", c.trainer.jobs, "trainer");
  }
  if (j.contains("loss")) {
    const json& d = j.at("loss");
    if (d.contains("weights")) {
      const json& w = d.at("weights");
      read_if(w, "mix", c.loss.weights.mix, "loss.weights");
      read_if(w, "cluster", c.loss.weights.cluster, "loss.weights");
      read_if(w, "ac", c.loss.weights.ac, "loss.weights");
      read_if(w, "map", c.loss.weights.map, "loss.weights");
      read_if(w, "scribble", c.loss.weights.scribble, "loss.weights");
      read_if(w, "category", c.loss.weights.category, "loss.weights");
    }
    if (d.contains("toggles")) {
      const json& t = d.at("toggles");
      read_if(t, "mix", c.loss.toggles.mix, "loss.toggles");
      read_if(t, "cluster", c.loss.toggles.cluster, "loss.toggles");
      read_if(t, "ac", c.loss.toggles.ac, "loss.toggles");
      read_if(t, "map", c.loss.toggles.map, "loss.toggles");
      read_if(t, "scribble", c.loss.toggles.scribble, "loss.toggles");
      read_if(t, "category", c.loss.toggles.category, "loss.toggles");
    }
    read_if(d, "eps", c.loss.eps, "loss");
    read_if(d, "w", c.loss.w, "loss");
    read_if(d, "tau", c.loss.tau, "loss");
    read_if(d, "proto_dim", c.loss.proto_dim, "loss");
    read_if(d, "sinkhorn_iters", c.loss.sinkhorn_iters, "loss");
    read_if(d, "detach_mix_targets", c.loss.detach_mix_targets, "loss");
  }
  if (j.contains("mix")) {
    const json& d = j.at("mix");
    read_if(d, "rounds", c.mix.rounds, "mix");
    read_if(d, "intra_area_lo", c.mix.intra_area_lo, "mix");
    read_if(d, "intra_area_hi", c.mix.intra_area_hi, "mix");
    read_if(d, "theta_max", c.mix.theta_max, "mix");
    if (d.contains("crop")) {
      const json& cr = d.at("crop");
      read_if(cr, "global_count", c.mix.crop.global_count, "mix.crop");
      read_if(cr, "global_lo", c.mix.crop.global_lo, "mix.crop");
      read_if(cr, "global_hi", c.mix.crop.global_hi, "mix.crop");
      read_if(cr, "local_count", c.mix.crop.local_count, "mix.crop");
      read_if(cr, "local_lo", c.mix.crop.local_lo, "mix.crop");
      read_if(cr, "local_hi", c.mix.crop.local_hi, "mix.crop");
    }
  }
  if (j.contains("output")) {
    read_if(j.at("output"), "dir", c.output.dir, "output");
  }
}

TrainConfig config_from_json(const json& parsed) {
  require(parsed.is_object(), ErrorCode::ConfigError, "config root must be a JSON object");
  TrainConfig config;
  check_unknown(parsed, to_tree(config), "");
  from_tree(parsed, config);
  return config;
}

}  // namespace

void TrainConfig::validate() const {
  require(trainer.learning_rate > 0.0 && std::isfinite(trainer.learning_rate),
          ErrorCode::ConfigError, "trainer.learning_rate must be positive");
  require(trainer.batch_size >= 2 && trainer.batch_size % 2 == 0, ErrorCode::ConfigError,
          "trainer.batch_size must be an even number of at least 2 (crops are paired)");
  require(trainer.epochs >= 0, ErrorCode::ConfigError, "trainer.epochs must be non-negative");
  require(trainer.max_steps >= 0, ErrorCode::ConfigError,
          "trainer.max_steps must be non-negative");
  require(trainer.checkpoint_every >= 0, ErrorCode::ConfigError,
          "trainer.checkpoint_every must be non-negative");
  require(trainer.validate_every >= 1, ErrorCode::ConfigError,
          "trainer.validate_every must be at least 1");
  require(trainer.jobs >= 1, ErrorCode::ConfigError, "trainer.jobs must be at least 1");
  require(trainer.optimizer.kind == "adam", ErrorCode::ConfigError,
          "trainer.optimizer.kind: only \"adam\" is implemented");
  require(trainer.optimizer.beta1 >= 0.0 && trainer.optimizer.beta1 < 1.0 &&
              trainer.optimizer.beta2 >= 0.0 && trainer.optimizer.beta2 < 1.0,
          ErrorCode::ConfigError, "optimizer betas must lie in [0,1)");
  require(trainer.optimizer.eps > 0.0, ErrorCode::ConfigError,
          "trainer.optimizer.eps must be positive");

  const int toggles[] = {loss.toggles.mix,      loss.toggles.cluster, loss.toggles.ac,
                         loss.toggles.map,      loss.toggles.scribble, loss.toggles.category};
  for (int t : toggles) {
    require(t == 0 || t == 1, ErrorCode::ConfigError, "loss toggles must be 0 or 1");
  }
  const double weights[] = {loss.weights.mix,      loss.weights.cluster, loss.weights.ac,
                            loss.weights.map,      loss.weights.scribble,
                            loss.weights.category};
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), ErrorCode::ConfigError,
            "loss weights must be finite and non-negative");
  }
  require(loss.eps > 0.0, ErrorCode::ConfigError, "loss.eps must be positive");
  require(loss.w > 0.0, ErrorCode::ConfigError, "loss.w must be positive");
  require(loss.tau > 0.0, ErrorCode::ConfigError, "loss.tau must be positive");
  require(loss.proto_dim >= 2, ErrorCode::ConfigError, "loss.proto_dim must be at least 2");
  require(loss.sinkhorn_iters >= 0, ErrorCode::ConfigError,
          "loss.sinkhorn_iters must be non-negative");

  require(mix.rounds >= 1, ErrorCode::ConfigError, "mix.rounds must be at least 1");
  require(mix.intra_area_lo > 0.0 && mix.intra_area_lo <= mix.intra_area_hi &&
              mix.intra_area_hi <= 1.0,
          ErrorCode::ConfigError, "mix intra-area bounds must satisfy 0 < lo <= hi <= 1");
  require(mix.theta_max >= 0.0 && mix.theta_max <= 45.0, ErrorCode::ConfigError,
          "mix.theta_max must lie in [0, 45] degrees");
  require(mix.crop.global_count >= 0 && mix.crop.local_count >= 0 &&
              mix.crop.global_count + mix.crop.local_count >= 2,
          ErrorCode::ConfigError, "mix.crop must produce at least 2 crops per source");

  require(data.num_scribble_sources >= 0, ErrorCode::ConfigError,
          "data.num_scribble_sources must be non-negative");
}

TrainConfig parse_train_config(const std::string& json_text) {
  const json parsed = json::parse(json_text, nullptr, false, /*ignore_comments=*/true);
  require(!parsed.is_discarded(), ErrorCode::ConfigError, "config is not valid JSON");
  return config_from_json(parsed);
}

std::string train_config_to_json(const TrainConfig& config) { return to_tree(config).dump(2); }

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str());
}

void save_train_config(const TrainConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot write config file: " + path.string());
  out << train_config_to_json(config) << "\n";
  require(out.good(), ErrorCode::IoError, "failed writing config file: " + path.string());
}

TrainConfig apply_overrides(const TrainConfig& base, const std::vector<std::string>& overrides) {
  ordered_json tree = to_tree(base);
  const ordered_json schema = tree;  // keys before edits define the known set
  for (const std::string& entry : overrides) {
    const auto eq = entry.find('=');
    require(eq != std::string::npos && eq > 0, ErrorCode::ConfigError,
            "override must look like section.key=value: " + entry);
    const std::string path = entry.substr(0, eq);
    const std::string value = entry.substr(eq + 1);

    // Walk the dotted path against the schema so typos fail loudly.
    const ordered_json* node = &schema;
    ordered_json* target = &tree;
    size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
      require(node->is_object() && node->contains(key), ErrorCode::ConfigError,
              "unknown config key: " + path);
      node = &node->at(key);
      target = &(*target)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    require(!node->is_object(), ErrorCode::ConfigError,
            "override path names a section, not a value: " + path);

    const json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded() || parsed.is_object() || parsed.is_array()) {
      *target = value;  // unquoted strings (paths, names) arrive verbatim
    } else {
      *target = parsed;
    }
  }
  TrainConfig config;
  check_unknown(tree, to_tree(config), "");
  from_tree(tree, config);
  return config;
}

}  // namespace medcl
