#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmatch/adam.hpp"
#include "xmatch/matcher.hpp"

namespace xmatch {

struct OptimConfig {
  AdamOptions adam;
  std::size_t batch_size = 8;
  std::size_t steps = 500;
  // Linear learning-rate ramp from lr/warmup_steps to lr; 0 disables it.
  std::size_t warmup_steps = 0;
  // After warmup, decay the learning rate linearly to zero at the last step.
  bool linear_decay = false;
};

struct EvalSetSpec {
  std::string name;
  std::filesystem::path path;
};

// Everything a CLI command needs. JSON keys: model, d_model, n_heads, d_ff,
// L_lang, L_obj, L_cross, L_fusion, d_emb, vocab_size, max_len, N_obj,
// d_feat, dropout, freeze_encoders, lowercase, lr, beta1, beta2, eps,
// batch_size, steps, warmup_steps, linear_decay, seed, vocab, features, train_pairs, eval_pairs, pool,
// checkpoint, loss_log, report.
struct RunConfig {
  ModelKind kind = ModelKind::kCross;
  ModelConfig model;
  OptimConfig optim;
  bool lowercase = true;
  // vocab_size of 0 means "take it from the vocabulary file".
  bool vocab_size_from_file = true;
  std::optional<std::uint64_t> seed;

  std::filesystem::path vocab;
  std::filesystem::path features;
  std::filesystem::path train_pairs;
  std::vector<EvalSetSpec> eval_sets;
  std::filesystem::path pool;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::filesystem::path report;

  // Requirements of `train`: a seed, steps >= 1, input files set and no input
  // path equal to the checkpoint output.
  void validate_for_train() const;
};

// Overlays the keys present in `j` onto `config`.
void apply_config_json(RunConfig& config, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// "name=path" or a bare path (the name is then the file stem).
EvalSetSpec parse_eval_set(const std::string& text);

// Model and optimizer settings recorded in checkpoint headers.
nlohmann::json model_config_json(ModelKind kind, const ModelConfig& model, const OptimConfig& optim,
                                 bool lowercase);
// Inverse of model_config_json for the model part.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace xmatch
