// Command-line front end: gen-data, tokenize, train, eval, rank, gradcheck.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmatch/error.hpp"
#include "xmatch/kernels.hpp"
#include "xmatch/runner.hpp"
#include "xmatch/synth.hpp"

namespace fs = std::filesystem;
using namespace xmatch;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
  std::string config;
  std::string model;
  std::optional<std::uint64_t> seed;
  std::string vocab;
  std::string features;
  std::string train_pairs;
  std::vector<std::string> eval_sets;
  std::string pool;
  std::string checkpoint;
  std::string loss_log;
  std::string report;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::size_t> warmup;
  bool freeze_encoders = false;
  bool linear_decay = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--model", f.model, "cross | early | dual");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--vocab", f.vocab, "Vocabulary file");
  cmd->add_option("--features", f.features, "Image feature JSONL");
  cmd->add_option("--train", f.train_pairs, "Training pairs JSONL");
  cmd->add_option("--eval-set", f.eval_sets, "Eval pairs as name=path or path (repeatable)");
  cmd->add_option("--pool", f.pool, "Candidate pool JSON");
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint path");
  cmd->add_option("--loss-log", f.loss_log, "Per-step loss CSV output");
  cmd->add_option("--report", f.report, "JSON report output");
  cmd->add_option("--steps", f.steps, "Optimizer steps");
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size");
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--warmup", f.warmup, "Linear learning-rate warmup steps");
  cmd->add_flag("--freeze-encoders", f.freeze_encoders, "Train the head only");
  cmd->add_flag("--linear-decay", f.linear_decay, "Decay the learning rate linearly to zero");
}

RunConfig build_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.model.empty()) c.kind = parse_model_kind(f.model);
  if (f.seed) c.seed = *f.seed;
  if (!f.vocab.empty()) c.vocab = f.vocab;
  if (!f.features.empty()) c.features = f.features;
  if (!f.train_pairs.empty()) c.train_pairs = f.train_pairs;
  if (!f.eval_sets.empty()) {
    c.eval_sets.clear();
    for (const auto& e : f.eval_sets) c.eval_sets.push_back(parse_eval_set(e));
  }
  if (!f.pool.empty()) c.pool = f.pool;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (!f.loss_log.empty()) c.loss_log = f.loss_log;
  if (!f.report.empty()) c.report = f.report;
  if (f.steps) c.optim.steps = *f.steps;
  if (f.batch_size) c.optim.batch_size = *f.batch_size;
  if (f.lr) c.optim.adam.lr = *f.lr;
  if (f.warmup) c.optim.warmup_steps = *f.warmup;
  if (f.freeze_encoders) c.model.freeze_encoders = true;
  if (f.linear_decay) c.optim.linear_decay = true;
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
}

int cmd_gen_data(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir) {
  const SynthSpec spec = spec_path.empty() ? default_synth_spec() : load_synth_spec(spec_path);
  validate_synth_spec(spec);
  const SynthCorpus corpus = synth_generate(spec, seed);
  fs::create_directories(out_dir);
  write_corpus(corpus, spec, seed, out_dir);
  std::printf("wrote %zu images, %zu train pairs, %zu eval pairs, pool of %zu to %s\n",
              corpus.images.size(), corpus.train.size(), corpus.eval.size(),
              corpus.pool.image_ids.size(), out_dir.c_str());
  return kExitOk;
}

int cmd_tokenize(const std::string& vocab_path, const std::string& phrase, std::size_t max_len,
                 bool keep_case) {
  const Tokenizer tokenizer(load_vocab(vocab_path), !keep_case);
  const TokenSequence seq = tokenizer.encode(phrase, max_len);
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (!seq.mask[i]) break;
    std::printf("%s\t%d\n", tokenizer.vocab().token(seq.ids[i]).c_str(), seq.ids[i]);
  }
  return kExitOk;
}

int cmd_train(const RunConfig& config) {
  const TrainOutcome outcome = run_train(config);
  std::printf("trained %s for %zu steps, final loss %.6f, checkpoint %s\n",
              std::string(model_kind_name(config.kind)).c_str(), outcome.losses.size(),
              outcome.losses.back(), config.checkpoint.c_str());
  return kExitOk;
}

int cmd_eval(const RunConfig& config, const std::vector<std::string>& extra_checkpoints) {
  std::vector<NamedCheckpoint> checkpoints;
  auto add = [&](const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      checkpoints.push_back({fs::path(text).stem().string(), text});
    } else {
      checkpoints.push_back({text.substr(0, eq), text.substr(eq + 1)});
    }
  };
  if (!config.checkpoint.empty() && extra_checkpoints.empty()) add(config.checkpoint.string());
  for (const auto& c : extra_checkpoints) add(c);
  const auto rows = run_eval(checkpoints, config);
  std::fputs(format_report_table(rows).c_str(), stdout);
  if (!config.report.empty()) write_text(config.report, report_json(rows).dump(2) + "\n");
  return kExitOk;
}

int cmd_rank(const RunConfig& config, const std::string& phrase) {
  if (config.checkpoint.empty()) throw ConfigError("rank needs --checkpoint");
  for (const auto& r : run_rank(config.checkpoint, config, phrase)) {
    std::printf("%s\t%.17g\n", r.image_id.c_str(), r.score);
  }
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& config, std::size_t batch, std::size_t max_per_tensor,
                  double tolerance) {
  const std::uint64_t seed = config.seed.value_or(0);
  const SynthCorpus corpus = synth_generate(default_synth_spec(), seed);
  const Tokenizer tokenizer(Vocabulary(corpus.vocab_tokens), config.lowercase);
  ModelConfig mc = config.model;
  mc.seed = seed;
  mc.vocab_size = tokenizer.vocab().size();
  FeatureStore store;
  for (const auto& r : corpus.images) store.emplace(r.image_id, r);
  auto model = make_matcher(config.kind, mc);
  std::vector<Example> examples;
  for (const auto& p : corpus.train) {
    if (examples.size() == batch) break;
    if (config.kind == ModelKind::kDual && p.label != 1) continue;
    examples.push_back(make_example(p, tokenizer, store, mc));
  }
  GradCheckOptions opts;
  opts.max_per_tensor = max_per_tensor;
  opts.seed = seed;
  const GradCheckResult r = gradcheck_model(*model, examples, opts);
  const bool ok = r.max_rel_error < tolerance;
  std::printf("%s %s: max relative error %.3e over %zu components (worst %s[%zu])\n",
              ok ? "PASS" : "FAIL", std::string(model_kind_name(config.kind)).c_str(),
              r.max_rel_error, r.checked, r.worst_parameter.c_str(), r.worst_index);
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal phrase/image relevance matcher"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "xmatch 1.0");
  std::string kernels;
  app.add_option("--kernels", kernels, "scalar | avx2 (default: best available)");

  std::string spec_path, out_dir;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic rule corpus");
  gen->add_option("--spec", spec_path, "JSON synthesis spec overriding the defaults");
  gen->add_option("--seed", gen_seed, "RNG seed")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string tok_vocab, tok_phrase;
  std::size_t tok_max_len = 16;
  bool tok_keep_case = false;
  auto* tok = app.add_subcommand("tokenize", "Print WordPiece pieces and ids");
  tok->add_option("--vocab", tok_vocab, "Vocabulary file")->required();
  tok->add_option("--max-len", tok_max_len, "Sequence length including [CLS]/[SEP]");
  tok->add_flag("--keep-case", tok_keep_case, "Disable lowercasing");
  tok->add_option("phrase", tok_phrase, "Phrase to tokenize")->required();

  CommonFlags train_flags, eval_flags, rank_flags, gc_flags;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train, train_flags);

  std::vector<std::string> eval_checkpoints;
  auto* eval = app.add_subcommand("eval", "Report AUC/F1 for checkpoints on eval sets");
  add_common(eval, eval_flags);
  eval->add_option("--with", eval_checkpoints, "Checkpoint as name=path or path (repeatable)");

  std::string rank_phrase;
  auto* rank = app.add_subcommand("rank", "Rank pool images for a phrase");
  add_common(rank, rank_flags);
  rank->add_option("phrase", rank_phrase, "Search phrase")->required();

  std::size_t gc_batch = 4, gc_sample = 0;
  double gc_tol = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  add_common(gc, gc_flags);
  gc->add_option("--batch", gc_batch, "Examples in the checked batch");
  gc->add_option("--sample", gc_sample, "Components per tensor (0 = all)");
  gc->add_option("--tolerance", gc_tol, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!kernels.empty()) {
      if (kernels == "scalar") {
        kernels::select(kernels::Isa::kScalar);
      } else if (kernels == "avx2") {
        kernels::select(kernels::Isa::kAvx2);
      } else {
        throw ConfigError("unknown kernel set \"" + kernels + "\"");
      }
    }
    if (*gen) return cmd_gen_data(spec_path, gen_seed, out_dir);
    if (*tok) return cmd_tokenize(tok_vocab, tok_phrase, tok_max_len, tok_keep_case);
    if (*train) return cmd_train(build_config(train_flags));
    if (*eval) return cmd_eval(build_config(eval_flags), eval_checkpoints);
    if (*rank) return cmd_rank(build_config(rank_flags), rank_phrase);
    if (*gc) return cmd_gradcheck(build_config(gc_flags), gc_batch, gc_sample, gc_tol);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitUsage;
}
