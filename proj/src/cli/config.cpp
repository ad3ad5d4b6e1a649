#include "xmatch/config.hpp"

#include <fstream>
#include <sstream>

#include "xmatch/error.hpp"

namespace xmatch {
namespace {

using nlohmann::json;

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key \"") + key + "\": " + e.what());
    }
  }
}

void read_path(const json& j, const char* key, std::filesystem::path& out) {
  std::string s;
  if (j.contains(key)) {
    read(j, key, s);
    out = s;
  }
}

}  // namespace

void apply_config_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (auto it = j.find("model"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config key \"model\" must be a string");
    c.kind = parse_model_kind(it->get<std::string>());
  }
  ModelConfig& m = c.model;
  read(j, "d_model", m.d_model);
  read(j, "n_heads", m.n_heads);
  read(j, "d_ff", m.d_ff);
  read(j, "L_lang", m.lang_layers);
  read(j, "L_obj", m.object_layers);
  read(j, "L_cross", m.cross_layers);
  read(j, "L_fusion", m.fusion_layers);
  read(j, "d_emb", m.d_emb);
  if (j.contains("vocab_size")) {
    read(j, "vocab_size", m.vocab_size);
    c.vocab_size_from_file = m.vocab_size == 0;
  }
  read(j, "max_len", m.max_len);
  read(j, "N_obj", m.max_objects);
  read(j, "d_feat", m.feature_dim);
  read(j, "dropout", m.dropout);
  read(j, "freeze_encoders", m.freeze_encoders);
  read(j, "lowercase", c.lowercase);
  read(j, "lr", c.optim.adam.lr);
  read(j, "beta1", c.optim.adam.beta1);
  read(j, "beta2", c.optim.adam.beta2);
  read(j, "eps", c.optim.adam.eps);
  read(j, "batch_size", c.optim.batch_size);
  read(j, "steps", c.optim.steps);
  read(j, "warmup_steps", c.optim.warmup_steps);
  read(j, "linear_decay", c.optim.linear_decay);
  if (j.contains("seed")) {
    std::uint64_t seed = 0;
    read(j, "seed", seed);
    c.seed = seed;
  }
  read_path(j, "vocab", c.vocab);
  read_path(j, "features", c.features);
  read_path(j, "train_pairs", c.train_pairs);
  read_path(j, "pool", c.pool);
  read_path(j, "checkpoint", c.checkpoint);
  read_path(j, "loss_log", c.loss_log);
  read_path(j, "report", c.report);
  if (auto it = j.find("eval_pairs"); it != j.end()) {
    c.eval_sets.clear();
    const json list = it->is_array() ? *it : json::array({*it});
    for (const json& e : list) {
      if (e.is_string()) {
        c.eval_sets.push_back(parse_eval_set(e.get<std::string>()));
      } else if (e.is_object() && e.contains("path")) {
        EvalSetSpec spec;
        spec.path = e.at("path").get<std::string>();
        spec.name = e.contains("name") ? e.at("name").get<std::string>() : spec.path.stem().string();
        c.eval_sets.push_back(std::move(spec));
      } else {
        throw ConfigError("config key \"eval_pairs\" entries must be strings or {name, path} objects");
      }
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  RunConfig c;
  apply_config_json(c, j);
  return c;
}

EvalSetSpec parse_eval_set(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) return EvalSetSpec{std::filesystem::path(text).stem().string(), text};
  if (eq == 0 || eq + 1 == text.size()) throw ConfigError("eval set must look like name=path: " + text);
  return EvalSetSpec{text.substr(0, eq), text.substr(eq + 1)};
}

void RunConfig::validate_for_train() const {
  if (!seed) throw ConfigError("train requires an explicit --seed");
  if (optim.steps < 1) throw ConfigError("steps must be at least 1");
  if (optim.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (kind == ModelKind::kDual && optim.batch_size < 2) {
    throw ConfigError("the dual encoder's contrastive loss needs batch_size >= 2");
  }
  if (vocab.empty() || features.empty() || train_pairs.empty() || checkpoint.empty()) {
    throw ConfigError("train needs vocab, features, train_pairs and checkpoint paths");
  }
  model.validate();
  const auto out = std::filesystem::weakly_canonical(checkpoint);
  std::vector<std::filesystem::path> inputs{vocab, features, train_pairs, pool, loss_log, report};
  for (const auto& e : eval_sets) inputs.push_back(e.path);
  for (const auto& p : inputs) {
    if (!p.empty() && std::filesystem::weakly_canonical(p) == out) {
      throw ConfigError("path " + p.string() + " collides with the checkpoint output");
    }
  }
}

json model_config_json(ModelKind kind, const ModelConfig& m, const OptimConfig& o, bool lowercase) {
  return json{{"model", std::string(model_kind_name(kind))},
              {"d_model", m.d_model},
              {"n_heads", m.n_heads},
              {"d_ff", m.d_ff},
              {"L_lang", m.lang_layers},
              {"L_obj", m.object_layers},
              {"L_cross", m.cross_layers},
              {"L_fusion", m.fusion_layers},
              {"d_emb", m.d_emb},
              {"vocab_size", m.vocab_size},
              {"max_len", m.max_len},
              {"N_obj", m.max_objects},
              {"d_feat", m.feature_dim},
              {"seed", m.seed},
              {"dropout", m.dropout},
              {"freeze_encoders", m.freeze_encoders},
              {"lowercase", lowercase},
              {"lr", o.adam.lr},
              {"beta1", o.adam.beta1},
              {"beta2", o.adam.beta2},
              {"eps", o.adam.eps},
              {"batch_size", o.batch_size},
              {"steps", o.steps},
              {"warmup_steps", o.warmup_steps},
              {"linear_decay", o.linear_decay}};
}

ModelConfig model_config_from_json(const json& j) {
  RunConfig c;
  apply_config_json(c, j);
  if (auto it = j.find("seed"); it != j.end()) c.model.seed = it->get<std::uint64_t>();
  return c.model;
}

}  // namespace xmatch
