#pragma once

// Orchestration behind the CLI subcommands: training loops, pool ranking,
// evaluation over checkpoints and model gradient checks.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmatch/checkpoint.hpp"
#include "xmatch/config.hpp"
#include "xmatch/grad_check.hpp"
#include "xmatch/matcher.hpp"
#include "xmatch/metrics.hpp"

namespace xmatch {

// Learning rate for the 0-based optimizer step under the configured schedule.
double learning_rate(const OptimConfig& optim, std::size_t step);

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Runs optim.steps Adam steps over shuffled mini-batches (reshuffled every
// epoch, deterministic in `seed`) and returns the per-step mean batch
// loss. The dual encoder trains contrastively on the positive pairs only
// and skips batches holding fewer than two of them.
std::vector<double> train_matcher(Matcher& model, const std::vector<LabeledPair>& pairs,
                                  const FeatureStore& store, const Tokenizer& tokenizer,
                                  const OptimConfig& optim, std::uint64_t seed,
                                  const StepCallback& on_step = {});

PairScorer make_pair_scorer(const Matcher& model, const Tokenizer& tokenizer,
                            const FeatureStore& store);

struct RankedImage {
  std::string image_id;
  double score = 0.0;
};

// Pool images ordered by descending score, ties by ascending image id.
std::vector<RankedImage> rank_pool(std::string_view phrase, const CandidatePool& pool,
                                   const Matcher& model, const Tokenizer& tokenizer,
                                   const FeatureStore& store);

// Finite-difference check of the model's training loss on `batch`.
GradCheckResult gradcheck_model(Matcher& model, std::span<const Example> batch,
                                const GradCheckOptions& options = {});

struct TrainOutcome {
  Checkpoint checkpoint;
  std::vector<double> losses;
};

// Loads the configured files, trains, writes the checkpoint and (when set)
// the loss log as "step,loss" lines.
TrainOutcome run_train(const RunConfig& config, const StepCallback& on_step = {});

struct NamedCheckpoint {
  std::string name;
  std::filesystem::path path;
};

// One row per (checkpoint, eval set).
std::vector<EvalRow> run_eval(const std::vector<NamedCheckpoint>& checkpoints,
                              const RunConfig& config);

std::vector<RankedImage> run_rank(const std::filesystem::path& checkpoint, const RunConfig& config,
                                  std::string_view phrase);

}  // namespace xmatch
