#include "csta/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "../vendor/json.hpp"

namespace csta {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// line of the first `"key"` that is followed by a colon, for error messages
int key_line(const std::string& text, const std::string& key) {
  const std::string quoted = "\"" + key + "\"";
  std::size_t at = 0;
  while ((at = text.find(quoted, at)) != std::string::npos) {
    std::size_t after = at + quoted.size();
    while (after < text.size() && (text[after] == ' ' || text[after] == '\t')) ++after;
    if (after < text.size() && text[after] == ':') {
      return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(at), '\n'));
    }
    at = after;
  }
  return 0;
}

[[noreturn]] void reject_key(const std::string& text, const std::string& section,
                             const std::string& key) {
  const std::string where = section.empty() ? key : section + "." + key;
  const int line = key_line(text, key);
  throw std::invalid_argument("config: unknown key \"" + where + "\"" +
                              (line > 0 ? " (line " + std::to_string(line) + ")" : ""));
}

void expect_keys(const json& obj, const std::string& text, const std::string& section,
                 std::initializer_list<const char*> known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) reject_key(text, section, it.key());
  }
}

template <typename T>
void take(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj.at(key).get<T>();
}

}  // namespace

ExperimentConfig default_experiment_config() { return ExperimentConfig{}; }

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");

  expect_keys(j, json_text, "",
              {"seed", "out_dir", "corpus_dir", "tasks", "split", "model", "corpus", "train"});

  ExperimentConfig c;
  take(j, "seed", c.seed);
  take(j, "out_dir", c.out_dir);
  take(j, "corpus_dir", c.corpus_dir);
  take(j, "tasks", c.tasks);
  take(j, "split", c.split);

  if (j.contains("model")) {
    const json& m = j.at("model");
    expect_keys(m, json_text, "model",
                {"embed_dim", "heads", "blocks", "frames", "frame_size", "patch_size", "mlp_ratio",
                 "bottleneck", "concat_axis"});
    take(m, "embed_dim", c.model.embed_dim);
    take(m, "heads", c.model.heads);
    take(m, "blocks", c.model.blocks);
    take(m, "frames", c.model.frames);
    take(m, "frame_size", c.model.frame_size);
    take(m, "patch_size", c.model.patch_size);
    take(m, "mlp_ratio", c.model.mlp_ratio);
    take(m, "bottleneck", c.model.bottleneck);
    take(m, "concat_axis", c.model.concat_axis);
  }

  // the experiment seed drives everything unless a section pins its own
  c.corpus.seed = c.seed;
  c.train.seed = c.seed;

  if (j.contains("corpus")) {
    const json& s = j.at("corpus");
    expect_keys(s, json_text, "corpus",
                {"frames", "frame_size", "classes", "train_per_class", "test_per_class", "seed"});
    take(s, "frames", c.corpus.frames);
    take(s, "frame_size", c.corpus.frame_size);
    take(s, "classes", c.corpus.classes);
    take(s, "train_per_class", c.corpus.train_per_class);
    take(s, "test_per_class", c.corpus.test_per_class);
    take(s, "seed", c.corpus.seed);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    expect_keys(t, json_text, "train",
                {"epochs", "finetune_epochs", "exemplars_per_class", "lr_task0", "lr_adapters",
                 "lr_finetune", "momentum", "clip_norm", "batch_size", "lambda1", "lambda2",
                 "mu1", "mu2", "mu3", "k", "k1", "cache_capacity", "probe_batch",
                 "probe_cadence", "seed", "sep_ada", "relation_recovery", "compensation",
                 "mlp_adapter", "finetune", "normalize_sims", "kl_reversed"});
    take(t, "epochs", c.train.epochs);
    take(t, "finetune_epochs", c.train.finetune_epochs);
    take(t, "exemplars_per_class", c.train.exemplars_per_class);
    take(t, "lr_task0", c.train.lr_task0);
    take(t, "lr_adapters", c.train.lr_adapters);
    take(t, "lr_finetune", c.train.lr_finetune);
    take(t, "momentum", c.train.momentum);
    take(t, "clip_norm", c.train.clip_norm);
    take(t, "batch_size", c.train.batch_size);
    take(t, "lambda1", c.train.lambda1);
    take(t, "lambda2", c.train.lambda2);
    take(t, "mu1", c.train.mu1);
    take(t, "mu2", c.train.mu2);
    take(t, "mu3", c.train.mu3);
    take(t, "k", c.train.k);
    take(t, "k1", c.train.k1);
    take(t, "cache_capacity", c.train.cache_capacity);
    take(t, "probe_batch", c.train.probe_batch);
    take(t, "probe_cadence", c.train.probe_cadence);
    take(t, "seed", c.train.seed);
    take(t, "sep_ada", c.train.sep_ada);
    take(t, "relation_recovery", c.train.relation_recovery);
    take(t, "compensation", c.train.compensation);
    take(t, "mlp_adapter", c.train.mlp_adapter);
    take(t, "finetune", c.train.finetune);
    take(t, "normalize_sims", c.train.normalize_sims);
    take(t, "kl_reversed", c.train.kl_reversed);
  }

  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string experiment_config_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["corpus_dir"] = c.corpus_dir;
  j["tasks"] = c.tasks;
  j["split"] = c.split;
  j["model"] = {{"embed_dim", c.model.embed_dim},   {"heads", c.model.heads},
                {"blocks", c.model.blocks},         {"frames", c.model.frames},
                {"frame_size", c.model.frame_size}, {"patch_size", c.model.patch_size},
                {"mlp_ratio", c.model.mlp_ratio},   {"bottleneck", c.model.bottleneck},
                {"concat_axis", c.model.concat_axis}};
  j["corpus"] = {{"frames", c.corpus.frames},
                 {"frame_size", c.corpus.frame_size},
                 {"classes", c.corpus.classes},
                 {"train_per_class", c.corpus.train_per_class},
                 {"test_per_class", c.corpus.test_per_class},
                 {"seed", c.corpus.seed}};
  j["train"] = {{"epochs", c.train.epochs},
                {"finetune_epochs", c.train.finetune_epochs},
                {"exemplars_per_class", c.train.exemplars_per_class},
                {"lr_task0", c.train.lr_task0},
                {"lr_adapters", c.train.lr_adapters},
                {"lr_finetune", c.train.lr_finetune},
                {"momentum", c.train.momentum},
                {"clip_norm", c.train.clip_norm},
                {"batch_size", c.train.batch_size},
                {"lambda1", c.train.lambda1},
                {"lambda2", c.train.lambda2},
                {"mu1", c.train.mu1},
                {"mu2", c.train.mu2},
                {"mu3", c.train.mu3},
                {"k", c.train.k},
                {"k1", c.train.k1},
                {"cache_capacity", c.train.cache_capacity},
                {"probe_batch", c.train.probe_batch},
                {"probe_cadence", c.train.probe_cadence},
                {"seed", c.train.seed},
                {"sep_ada", c.train.sep_ada},
                {"relation_recovery", c.train.relation_recovery},
                {"compensation", c.train.compensation},
                {"mlp_adapter", c.train.mlp_adapter},
                {"finetune", c.train.finetune},
                {"normalize_sims", c.train.normalize_sims},
                {"kl_reversed", c.train.kl_reversed}};
  return j.dump(2);
}

}  // namespace csta
