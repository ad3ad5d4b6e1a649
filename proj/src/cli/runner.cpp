#include "xmatch/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "xmatch/adam.hpp"
#include "xmatch/error.hpp"

namespace xmatch {
namespace {

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
  return seed + 0x9E3779B97F4A7C15ULL * (epoch + 1);
}

Tokenizer tokenizer_from_header(const Checkpoint& ckpt, const std::filesystem::path& vocab_path) {
  const auto j = nlohmann::json::parse(ckpt.config_json);
  const bool lowercase = j.value("lowercase", true);
  return Tokenizer(load_vocab(vocab_path), lowercase);
}

}  // namespace

double learning_rate(const OptimConfig& optim, std::size_t step) {
  const double lr = optim.adam.lr;
  const auto s = static_cast<double>(step);
  if (step < optim.warmup_steps) return lr * (s + 1.0) / static_cast<double>(optim.warmup_steps);
  if (!optim.linear_decay) return lr;
  const auto span = static_cast<double>(optim.steps - optim.warmup_steps);
  return lr * (span - (s - static_cast<double>(optim.warmup_steps))) / span;
}

std::vector<double> train_matcher(Matcher& model, const std::vector<LabeledPair>& pairs,
                                  const FeatureStore& store, const Tokenizer& tokenizer,
                                  const OptimConfig& optim, std::uint64_t seed,
                                  const StepCallback& on_step) {
  if (optim.steps < 1) throw ConfigError("steps must be at least 1");
  const bool contrastive = model.kind() == ModelKind::kDual;
  std::vector<LabeledPair> usable;
  for (const auto& p : pairs) {
    if (!contrastive || p.label == 1) usable.push_back(p);
  }
  if (usable.size() < (contrastive ? 2u : 1u)) {
    throw ConfigError(contrastive ? "contrastive training needs at least two positive pairs"
                                  : "no training pairs");
  }
  require_resolvable(usable, store);
  std::vector<Example> examples;
  examples.reserve(usable.size());
  for (const auto& p : usable) examples.push_back(make_example(p, tokenizer, store, model.config()));

  ParameterSet& params = model.parameters();
  Adam adam(params, optim.adam);
  std::vector<double> losses;
  losses.reserve(optim.steps);
  std::vector<Example> batch;
  for (std::uint64_t epoch = 0; losses.size() < optim.steps; ++epoch) {
    const auto batches = make_batches(usable, store, optim.batch_size, epoch_seed(seed, epoch));
    for (const auto& indices : batches) {
      if (losses.size() >= optim.steps) break;
      if (contrastive && indices.size() < 2) continue;
      batch.clear();
      for (std::size_t i : indices) batch.push_back(examples[i]);
      adam.set_learning_rate(learning_rate(optim, losses.size()));
      params.zero_grad();
      Tape tape;
      const Var loss = model.loss(tape, batch);
      tape.backward(loss);
      adam.step();
      const double value = loss.value()[0];
      if (!std::isfinite(value)) throw NumericError("training loss became non-finite");
      losses.push_back(value);
      if (on_step) on_step(losses.size(), value);
    }
  }
  params.zero_grad();
  return losses;
}

PairScorer make_pair_scorer(const Matcher& model, const Tokenizer& tokenizer,
                            const FeatureStore& store) {
  return [&model, &tokenizer, &store](const LabeledPair& pair) {
    const Example ex = make_example(pair, tokenizer, store, model.config());
    return model.score_value(ex.tokens, ex.objects);
  };
}

std::vector<RankedImage> rank_pool(std::string_view phrase, const CandidatePool& pool,
                                   const Matcher& model, const Tokenizer& tokenizer,
                                   const FeatureStore& store) {
  validate_pool(pool);
  const TokenSequence tokens = tokenizer.encode(phrase, model.config().max_len);
  std::vector<RankedImage> ranked;
  ranked.reserve(pool.image_ids.size());
  for (const auto& id : pool.image_ids) {
    const auto it = store.find(id);
    if (it == store.end()) throw LoadError("pool references unknown image \"" + id + "\"");
    ranked.push_back({id, model.score_value(tokens, make_object_input(it->second, model.config().max_objects))});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedImage& a, const RankedImage& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.image_id < b.image_id;
  });
  return ranked;
}

GradCheckResult gradcheck_model(Matcher& model, std::span<const Example> batch,
                                const GradCheckOptions& options) {
  return grad_check(model.parameters(), [&](Tape& tape) { return model.loss(tape, batch); }, options);
}

TrainOutcome run_train(const RunConfig& config, const StepCallback& on_step) {
  config.validate_for_train();
  Tokenizer tokenizer(load_vocab(config.vocab), config.lowercase);
  ModelConfig mc = config.model;
  mc.seed = *config.seed;
  if (config.vocab_size_from_file) mc.vocab_size = tokenizer.vocab().size();
  const FeatureStore store = load_features(config.features, {mc.max_objects, mc.feature_dim});
  const auto pairs = load_pairs(config.train_pairs);
  require_resolvable(pairs, store);

  auto model = make_matcher(config.kind, mc);
  TrainOutcome outcome;
  outcome.losses = train_matcher(*model, pairs, store, tokenizer, config.optim, *config.seed, on_step);
  const std::string header = model_config_json(config.kind, mc, config.optim, config.lowercase).dump();
  outcome.checkpoint = checkpoint_from(*model, header);
  save_checkpoint(config.checkpoint, outcome.checkpoint);
  if (!config.loss_log.empty()) {
    std::ofstream log(config.loss_log, std::ios::binary);
    if (!log) throw LoadError("cannot write loss log " + config.loss_log.string());
    char buf[64];
    log << "step,loss\n";
    for (std::size_t i = 0; i < outcome.losses.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, outcome.losses[i]);
      log << buf;
    }
  }
  return outcome;
}

std::vector<EvalRow> run_eval(const std::vector<NamedCheckpoint>& checkpoints,
                              const RunConfig& config) {
  if (checkpoints.empty()) throw ConfigError("eval needs at least one checkpoint");
  if (config.eval_sets.empty()) throw ConfigError("eval needs at least one eval set");
  if (config.vocab.empty() || config.features.empty()) throw ConfigError("eval needs vocab and features paths");
  std::vector<std::pair<std::string, std::vector<LabeledPair>>> sets;
  for (const auto& e : config.eval_sets) sets.emplace_back(e.name, load_pairs(e.path));
  std::vector<EvalRow> rows;
  for (const auto& named : checkpoints) {
    const Checkpoint ckpt = load_checkpoint(named.path);
    const auto model = matcher_from_checkpoint(ckpt);
    const Tokenizer tokenizer = tokenizer_from_header(ckpt, config.vocab);
    const FeatureStore store =
        load_features(config.features, {model->config().max_objects, model->config().feature_dim});
    const PairScorer scorer = make_pair_scorer(*model, tokenizer, store);
    for (const auto& [name, pairs] : sets) {
      require_resolvable(pairs, store);
      rows.push_back(evaluate(named.name, name, pairs, scorer));
    }
  }
  return rows;
}

std::vector<RankedImage> run_rank(const std::filesystem::path& checkpoint, const RunConfig& config,
                                  std::string_view phrase) {
  if (config.vocab.empty() || config.features.empty() || config.pool.empty()) {
    throw ConfigError("rank needs vocab, features and pool paths");
  }
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto model = matcher_from_checkpoint(ckpt);
  const Tokenizer tokenizer = tokenizer_from_header(ckpt, config.vocab);
  const FeatureStore store =
      load_features(config.features, {model->config().max_objects, model->config().feature_dim});
  return rank_pool(phrase, load_pool(config.pool), *model, tokenizer, store);
}

}  // namespace xmatch
