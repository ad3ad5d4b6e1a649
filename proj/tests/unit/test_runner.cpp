#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "support/helpers.hpp"
#include "xmatch/error.hpp"
#include "xmatch/runner.hpp"
#include "xmatch/synth.hpp"

using namespace xmatch;
namespace tst = xmatch::testing;

namespace {

const std::filesystem::path kTmp = XMATCH_TEST_TMP;

// Scores an image by the first feature of its first object.
class FirstFeatureMatcher : public Matcher {
 public:
  explicit FirstFeatureMatcher(const ModelConfig& c) : Matcher(c) {}
  ModelKind kind() const override { return ModelKind::kCross; }
  Var score(Tape& tape, const TokenSequence&, const ObjectInput& objects) const override {
    return tape.constant(Tensor({1, 1}, objects.feats.at(0, 0)));
  }
};

struct SmallCorpus {
  std::filesystem::path dir;
  SynthSpec spec;
};

SmallCorpus small_corpus(const std::string& name) {
  SmallCorpus c{tst::fresh_dir(kTmp / name), default_synth_spec()};
  c.spec.n_train = 48;
  c.spec.n_eval = 24;
  write_corpus(synth_generate(c.spec, 3), c.spec, 3, c.dir);
  return c;
}

RunConfig train_config(const SmallCorpus& corpus, ModelKind kind, const std::string& out) {
  RunConfig rc;
  rc.kind = kind;
  rc.model.d_model = 16;
  rc.model.n_heads = 2;
  rc.model.d_ff = 24;
  rc.model.lang_layers = rc.model.object_layers = rc.model.cross_layers = 1;
  rc.model.fusion_layers = 2;
  rc.optim.steps = 12;
  rc.optim.batch_size = 8;
  rc.seed = 5;
  rc.vocab = corpus.dir / "vocab.txt";
  rc.features = corpus.dir / "features.jsonl";
  rc.train_pairs = corpus.dir / "train.jsonl";
  rc.eval_sets = {{"eval", corpus.dir / "eval.jsonl"}};
  rc.pool = corpus.dir / "pool.json";
  rc.checkpoint = corpus.dir / (out + ".ckpt");
  rc.loss_log = corpus.dir / (out + ".csv");
  return rc;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  OptimConfig o;
  o.adam.lr = 1e-3;
  o.steps = 10;
  CHECK(learning_rate(o, 0) == 1e-3);
  CHECK(learning_rate(o, 9) == 1e-3);
  o.linear_decay = true;
  CHECK(learning_rate(o, 0) == 1e-3);
  CHECK(std::abs(learning_rate(o, 5) - 5e-4) < 1e-18);
  CHECK(std::abs(learning_rate(o, 9) - 1e-4) < 1e-18);
  o.warmup_steps = 4;
  CHECK(std::abs(learning_rate(o, 0) - 2.5e-4) < 1e-18);
  CHECK(std::abs(learning_rate(o, 3) - 1e-3) < 1e-18);
  CHECK(std::abs(learning_rate(o, 4) - 1e-3) < 1e-18);
  CHECK(std::abs(learning_rate(o, 7) - 5e-4) < 1e-18);
  for (std::size_t s = 0; s < o.steps; ++s) CHECK(learning_rate(o, s) > 0.0);
}

TEST_CASE("training is deterministic in the seed and writes a loss log") {
  const SmallCorpus corpus = small_corpus("det");
  for (ModelKind kind : {ModelKind::kCross, ModelKind::kEarly, ModelKind::kDual}) {
    const std::string name(model_kind_name(kind));
    CAPTURE(name);
    std::size_t callbacks = 0;
    const TrainOutcome a = run_train(train_config(corpus, kind, name + "_a"),
                                     [&](std::size_t, double) { ++callbacks; });
    const TrainOutcome b = run_train(train_config(corpus, kind, name + "_b"));
    CHECK(a.losses.size() == 12);
    CHECK(callbacks == 12);
    CHECK(a.losses == b.losses);
    CHECK(tst::read_bytes(corpus.dir / (name + "_a.ckpt")) == tst::read_bytes(corpus.dir / (name + "_b.ckpt")));
    CHECK(tst::read_bytes(corpus.dir / (name + "_a.csv")) == tst::read_bytes(corpus.dir / (name + "_b.csv")));
    for (double l : a.losses) CHECK(std::isfinite(l));

    std::ifstream log(corpus.dir / (name + "_a.csv"));
    std::string line;
    std::size_t lines = 0;
    std::getline(log, line);
    CHECK(line == "step,loss");
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 12);

    RunConfig other = train_config(corpus, kind, name + "_c");
    other.seed = 6;
    CHECK(run_train(other).losses != a.losses);
  }
}

TEST_CASE("train configuration errors") {
  const SmallCorpus corpus = small_corpus("errors");
  RunConfig rc = train_config(corpus, ModelKind::kCross, "x");
  rc.optim.steps = 0;
  CHECK_THROWS_WITH_AS(run_train(rc), doctest::Contains("steps"), ConfigError);

  rc = train_config(corpus, ModelKind::kCross, "x");
  rc.seed.reset();
  CHECK_THROWS_WITH_AS(run_train(rc), doctest::Contains("seed"), ConfigError);

  rc = train_config(corpus, ModelKind::kCross, "x");
  rc.checkpoint = rc.train_pairs;
  CHECK_THROWS_WITH_AS(run_train(rc), doctest::Contains("collides"), ConfigError);
  CHECK_FALSE(tst::read_bytes(rc.train_pairs).empty());

  rc = train_config(corpus, ModelKind::kDual, "x");
  rc.optim.batch_size = 1;
  CHECK_THROWS_AS(run_train(rc), ConfigError);

  rc = train_config(corpus, ModelKind::kCross, "x");
  rc.model.n_heads = 3;
  CHECK_THROWS_AS(run_train(rc), ConfigError);

  rc = train_config(corpus, ModelKind::kCross, "x");
  rc.features = corpus.dir / "absent.jsonl";
  CHECK_THROWS_AS(run_train(rc), LoadError);
}

TEST_CASE("config JSON overlay") {
  RunConfig rc;
  apply_config_json(rc, nlohmann::json::parse(R"({"model": "dual", "d_model": 16, "steps": 3, "seed": 9,
      "eval_pairs": ["a/x.jsonl", {"name": "held", "path": "b.jsonl"}], "linear_decay": true})"));
  CHECK(rc.kind == ModelKind::kDual);
  CHECK(rc.model.d_model == 16);
  CHECK(rc.optim.steps == 3);
  CHECK(rc.seed == 9u);
  CHECK(rc.optim.linear_decay);
  REQUIRE(rc.eval_sets.size() == 2);
  CHECK(rc.eval_sets[0].name == "x");
  CHECK(rc.eval_sets[1].name == "held");
  CHECK_THROWS_AS(apply_config_json(rc, nlohmann::json::parse(R"({"steps": "many"})")), ConfigError);
  CHECK_THROWS_AS(apply_config_json(rc, nlohmann::json::parse(R"({"model": "clip"})")), ConfigError);
  CHECK(parse_eval_set("held=some/path.jsonl").name == "held");
  CHECK(parse_eval_set("some/path.jsonl").name == "path");
  CHECK_THROWS_AS(parse_eval_set("=x"), ConfigError);

  const ModelConfig m = model_config_from_json(model_config_json(ModelKind::kEarly, rc.model, rc.optim, true));
  CHECK(m.d_model == 16);
  CHECK(m.fusion_layers == rc.model.fusion_layers);
}

TEST_CASE("pool ranking") {
  const Vocabulary vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "race"});
  const Tokenizer tok(vocab);
  const FirstFeatureMatcher m(tst::tiny_config());
  FeatureStore store;
  auto image = [&](const std::string& id, double first) {
    ImageRecord r;
    r.image_id = id;
    DetectedObject o;
    o.box = {0.0, 0.0, 1.0, 1.0};
    o.feat = {first, 0.0, 0.0, 0.0};
    r.objects.push_back(o);
    store[id] = r;
  };
  image("c", 0.3);
  image("a", 0.9);
  image("b", 0.3);
  image("d", -1.0);

  const auto one = rank_pool("race", {{"c"}}, m, tok, store);
  REQUIRE(one.size() == 1);
  CHECK(one[0].image_id == "c");

  const auto ranked = rank_pool("race", {{"d", "b", "c", "a"}}, m, tok, store);
  REQUIRE(ranked.size() == 4);
  CHECK(ranked[0].image_id == "a");
  CHECK(ranked[1].image_id == "b");  // tie with c, broken by id
  CHECK(ranked[2].image_id == "c");
  CHECK(ranked[3].image_id == "d");
  CHECK(ranked[0].score == 0.9);

  const auto shuffled = rank_pool("race", {{"a", "c", "d", "b"}}, m, tok, store);
  for (std::size_t i = 0; i < 4; ++i) CHECK(shuffled[i].image_id == ranked[i].image_id);

  CHECK_THROWS_WITH_AS(rank_pool("race", {{"a", "zz"}}, m, tok, store), doctest::Contains("zz"), LoadError);
  CHECK_THROWS_AS(rank_pool("race", {{}}, m, tok, store), Error);
}

TEST_CASE("eval and rank through checkpoints") {
  const SmallCorpus corpus = small_corpus("eval");
  const RunConfig rc = train_config(corpus, ModelKind::kCross, "model");
  run_train(rc);
  const auto rows = run_eval({{"cross", rc.checkpoint}, {"again", rc.checkpoint}}, rc);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].model == "cross");
  CHECK(rows[0].dataset == "eval");
  CHECK(rows[0].auc == rows[1].auc);
  CHECK(rows[0].n_pos + rows[0].n_neg == corpus.spec.n_eval);

  const auto ranked = run_rank(rc.checkpoint, rc, "anything");
  CHECK(ranked.size() == corpus.spec.pool_size);
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].score >= ranked[i].score);

  RunConfig missing = rc;
  missing.eval_sets.clear();
  CHECK_THROWS_AS(run_eval({{"cross", rc.checkpoint}}, missing), ConfigError);
}

TEST_CASE("sampled model gradient check") {
  CrossModalMatcher m(tst::tiny_config(3));
  std::mt19937_64 rng(4);
  std::vector<Example> batch{{tst::random_tokens(rng, m.config(), 4), tst::random_objects(rng, m.config(), 2), 1.0},
                             {tst::random_tokens(rng, m.config(), 5), tst::random_objects(rng, m.config(), 3), 0.0}};
  const GradCheckResult full = gradcheck_model(m, batch);
  const GradCheckResult sampled = gradcheck_model(m, batch, {1e-5, 3, 7});
  CHECK(full.checked == m.parameters().scalar_count());
  CHECK(sampled.checked < full.checked);
  CHECK(sampled.checked > 0);
  CHECK(full.max_rel_error < 1e-6);
  CHECK(sampled.max_rel_error <= full.max_rel_error);
}
