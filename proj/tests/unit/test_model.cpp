#include <doctest.h>

#include <bit>
#include <cmath>
#include <memory>
#include <random>

#include "support/helpers.hpp"
#include "support/model_helpers.hpp"
#include "xmatch/adam.hpp"
#include "xmatch/error.hpp"
#include "xmatch/grad_check.hpp"
#include "xmatch/kernels.hpp"
#include "xmatch/matcher.hpp"
#include "xmatch/ops.hpp"

using namespace xmatch;
namespace tst = xmatch::testing;

namespace {

// Hand count from the architecture listing.
std::size_t closed_form_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, ln = 2 * d;
  const std::size_t text = c.vocab_size * d + c.max_len * d + ln;
  const std::size_t objects = (c.feature_dim * d + d) + ln + (4 * d + d) + ln;
  const std::size_t attention = 4 * (d * d + d) + ln;
  const std::size_t ffn = (d * c.d_ff + c.d_ff) + (c.d_ff * d + d) + ln;
  const std::size_t layer = attention + ffn;
  const std::size_t cross = attention + 2 * attention + 2 * ffn;
  const std::size_t head = (d * d + d) + ln + (d + 1);
  return text + objects + (c.lang_layers + c.object_layers) * layer + c.cross_layers * cross + head;
}

std::unique_ptr<CrossModalMatcher> perturbed(const ModelConfig& c, std::uint64_t seed) {
  auto m = std::make_unique<CrossModalMatcher>(c);
  tst::perturb_parameters(*m, seed);
  return m;
}

void zero(Parameter& p) { p.value.fill(0.0); }

}  // namespace

TEST_CASE("initialization is deterministic under the seed") {
  const CrossModalMatcher a(tst::desk_config(3)), b(tst::desk_config(3)), c(tst::desk_config(4));
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters().all()[i]->value == b.parameters().all()[i]->value);
    any_diff = any_diff || !(a.parameters().all()[i]->value == c.parameters().all()[i]->value);
  }
  CHECK(any_diff);
  const Parameter* w = a.parameters().find("model.lang.0.self.attn.query.weight");
  REQUIRE(w != nullptr);
  double sq = 0.0;
  for (double v : w->value.data()) sq += v * v;
  CHECK(std::sqrt(sq / static_cast<double>(w->value.size())) == doctest::Approx(0.02).epsilon(0.1));
  CHECK(a.parameters().find("model.lang.0.self.attn.query.bias")->value == Tensor({32}, 0.0));
  CHECK(a.parameters().find("model.head.ln.gamma")->value == Tensor({32}, 1.0));
}

TEST_CASE("parameter count matches the closed form") {
  const ModelConfig desk = tst::desk_config();
  const CrossModalMatcher m(desk);
  CHECK(m.parameters().scalar_count() == closed_form_count(desk));
  CHECK(closed_form_count(desk) == 81281);
  ModelConfig other = desk;
  other.d_model = 16;
  other.n_heads = 2;
  other.cross_layers = 3;
  other.vocab_size = 100;
  CHECK(CrossModalMatcher(other).parameters().scalar_count() == closed_form_count(other));
}

TEST_CASE("invalid configurations are rejected") {
  ModelConfig c = tst::desk_config();
  c.d_model = 30;
  CHECK_THROWS_AS(CrossModalMatcher{c}, ConfigError);
  c = tst::desk_config();
  c.max_len = 1;
  CHECK_THROWS_AS(CrossModalMatcher{c}, ConfigError);
  c = tst::desk_config();
  c.dropout = 0.1;
  CHECK_THROWS_AS(CrossModalMatcher{c}, ConfigError);
  c = tst::desk_config();
  c.cross_layers = 0;
  CHECK_THROWS_AS(CrossModalMatcher{c}, ConfigError);
  CHECK_THROWS_AS(parse_model_kind("clip"), ConfigError);
  CHECK(parse_model_kind("early") == ModelKind::kEarly);
  CHECK(model_kind_name(ModelKind::kDual) == "dual");
}

TEST_CASE("text embedding") {
  CrossModalMatcher m(tst::desk_config());
  const ModelConfig& c = m.config();
  std::mt19937_64 rng(1);
  TokenSequence a = tst::random_tokens(rng, c, 8), b = a;
  b.ids[5] = (b.ids[5] + 1) % 60 + 4;
  Tape tape(false);
  const Tensor ea = m.embed_text(tape, a).value(), eb = m.embed_text(tape, b).value();
  CHECK(ea.shape() == Shape{c.max_len, c.d_model});
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t k = 0; k < c.d_model; ++k) CHECK(ea.at(r, k) == eb.at(r, k));
  }
  bool differs = false;
  for (std::size_t k = 0; k < c.d_model; ++k) differs = differs || ea.at(5, k) != eb.at(5, k);
  CHECK(differs);

  zero(m.text_embedding().word_table());
  zero(m.text_embedding().position_table());
  Parameter& beta = m.text_embedding().norm().beta();
  for (double& v : beta.value.data()) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  Tape fresh(false);
  const Tensor z = m.embed_text(fresh, a).value();
  for (std::size_t r = 0; r < c.max_len; ++r) {
    for (std::size_t k = 0; k < c.d_model; ++k) CHECK(z.at(r, k) == beta.value[k]);
  }
  TokenSequence bad = a;
  bad.ids[1] = static_cast<std::int32_t>(c.vocab_size);
  CHECK_THROWS_AS(m.embed_text(fresh, bad), ShapeError);
}

TEST_CASE("object embedding") {
  const auto pm = perturbed(tst::desk_config(), 5);
  CrossModalMatcher& m = *pm;
  const ModelConfig& c = m.config();
  std::mt19937_64 rng(2);
  ObjectInput in = tst::random_objects(rng, c, 4);
  for (std::size_t k = 0; k < c.feature_dim; ++k) in.feats.at(2, k) = in.feats.at(0, k);
  for (std::size_t k = 0; k < 4; ++k) in.boxes.at(2, k) = in.boxes.at(0, k);
  Tape tape(false);
  const Tensor e = m.embed_objects(tape, in).value();
  for (std::size_t k = 0; k < c.d_model; ++k) CHECK(e.at(0, k) == e.at(2, k));

  const ObjectInput swapped = tst::permute_objects(in, {1, 0, 2, 3});
  const Tensor es = m.embed_objects(tape, swapped).value();
  for (std::size_t k = 0; k < c.d_model; ++k) {
    CHECK(es.at(0, k) == e.at(1, k));
    CHECK(es.at(1, k) == e.at(0, k));
    CHECK(es.at(3, k) == e.at(3, k));
  }

  ObjectInput blank = in;
  blank.feats.fill(0.0);
  blank.boxes.fill(0.0);
  for (Parameter* p : m.parameters().all()) {
    if (p->name.find("object_embed") != std::string::npos && p->name.ends_with(".bias")) zero(*p);
  }
  Tape fresh(false);
  const Tensor eb = m.embed_objects(fresh, blank).value();
  const Tensor& bf = m.object_embedding().feature_norm().beta().value;
  const Tensor& bp = m.object_embedding().box_norm().beta().value;
  for (std::size_t k = 0; k < c.d_model; ++k) CHECK(std::abs(eb.at(1, k) - (bf[k] + bp[k]) / 2.0) < 1e-15);
}

TEST_CASE("language encoder ignores masked positions") {
  const auto pm = perturbed(tst::desk_config(), 6);
  CrossModalMatcher& m = *pm;
  const ModelConfig& c = m.config();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = tst::uniform_index(rng, 2, c.max_len - 1);
    const TokenSequence full = tst::random_tokens(rng, c, n);
    const TokenSequence noisy = tst::scramble_padding(rng, full, c.vocab_size);
    const TokenSequence trimmed = full.without_padding();
    Tape tape(false);
    const Tensor a = m.encode_language(tape, m.embed_text(tape, trimmed), trimmed.mask_values()).value();
    const Tensor b = m.encode_language(tape, m.embed_text(tape, noisy), noisy.mask_values()).value();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < c.d_model; ++k) CHECK(std::abs(a.at(r, k) - b.at(r, k)) < 1e-10);
    }
  }
  // One valid token: its output depends on nothing else.
  TokenSequence one = tst::random_tokens(rng, c, 2);
  one.mask[1] = 0;
  one.true_length = 1;
  TokenSequence other = tst::scramble_padding(rng, one, c.vocab_size);
  Tape tape(false);
  const Tensor x = m.encode_language(tape, m.embed_text(tape, one), one.mask_values()).value();
  const Tensor y = m.encode_language(tape, m.embed_text(tape, other), other.mask_values()).value();
  for (std::size_t k = 0; k < c.d_model; ++k) CHECK(std::abs(x.at(0, k) - y.at(0, k)) < 1e-10);
}

TEST_CASE("object encoder is permutation equivariant") {
  const auto pm = perturbed(tst::desk_config(), 7);
  CrossModalMatcher& m = *pm;
  const ModelConfig& c = m.config();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const ObjectInput in = tst::random_objects(rng, c, c.max_objects);
    const auto order = tst::random_permutation(rng, c.max_objects);
    const ObjectInput p = tst::permute_objects(in, order);
    Tape tape(false);
    const Tensor a = m.encode_objects(tape, m.embed_objects(tape, in), in.mask).value();
    const Tensor b = m.encode_objects(tape, m.embed_objects(tape, p), p.mask).value();
    for (std::size_t i = 0; i < c.max_objects; ++i) {
      for (std::size_t k = 0; k < c.d_model; ++k) CHECK(std::abs(b.at(i, k) - a.at(order[i], k)) < 1e-10);
    }
  }
}

TEST_CASE("cross encoder with zeroed cross-attention outputs reduces to a text-only transformer") {
  const auto pm = perturbed(tst::desk_config(), 8);
  CrossModalMatcher& m = *pm;
  const ModelConfig& c = m.config();
  for (const auto& layer : m.cross_layers()) {
    zero(layer.cross_attention().attention().output().weight());
    zero(layer.cross_attention().attention().output().bias());
  }
  // Reference stack built from the text-stream parameters alone.
  ParameterSet ref_params;
  std::vector<TransformerLayer> ref = transformer_stack(ref_params, "ref", c.cross_layers, c.d_model,
                                                        c.n_heads, c.d_ff);
  for (Parameter* p : ref_params.all()) {
    std::string name = p->name.substr(4);  // "<i>.self..." or "<i>.ffn..."
    const std::size_t dot = name.find('.');
    const std::string layer = name.substr(0, dot), rest = name.substr(dot + 1);
    const std::string src = rest.rfind("self.", 0) == 0 ? "text_self." + rest.substr(5)
                                                        : "text_ffn." + rest.substr(4);
    p->value = m.parameters().at("model.cross." + layer + "." + src).value;
  }
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const TokenSequence tokens = tst::random_tokens(rng, c, tst::uniform_index(rng, 2, c.max_len));
    const ObjectInput objects = tst::random_objects(rng, c, tst::uniform_index(rng, 1, c.max_objects));
    const ObjectInput other = tst::random_objects(rng, c, tst::uniform_index(rng, 1, c.max_objects));
    const std::vector<double> tm = tokens.mask_values();
    Tape tape(false);
    const Var text = m.encode_language(tape, m.embed_text(tape, tokens), tm);
    const Var obj = m.encode_objects(tape, m.embed_objects(tape, objects), objects.mask);
    const Var obj2 = m.encode_objects(tape, m.embed_objects(tape, other), other.mask);
    const Tensor got = m.encode_cross(tape, text, obj, tm, objects.mask).first.value();
    const Tensor got2 = m.encode_cross(tape, text, obj2, tm, other.mask).first.value();

    Var x = text;
    for (std::size_t i = 0; i < c.cross_layers; ++i) {
      const LayerNorm& ln = m.cross_layers()[i].cross_attention().norm();
      x = ops::layer_norm(x, tape.parameter(ln.gamma()), tape.parameter(ln.beta()));
      x = ref[i].forward(tape, x, tm);
    }
    const Tensor want = x.value();
    CHECK(got.shape() == text.shape());
    for (std::size_t j = 0; j < got.size(); ++j) {
      CHECK(std::abs(got[j] - want[j]) < 1e-10);
      CHECK(got[j] == got2[j]);
    }
  }
}

TEST_CASE("cross encoder keeps shapes and ignores object order in the text stream") {
  const auto pm = perturbed(tst::desk_config(), 10);
  CrossModalMatcher& m = *pm;
  const ModelConfig& c = m.config();
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const TokenSequence tokens = tst::random_tokens(rng, c, tst::uniform_index(rng, 2, c.max_len));
    const ObjectInput objects = tst::random_objects(rng, c, c.max_objects);
    const ObjectInput permuted = tst::permute_objects(objects, tst::random_permutation(rng, c.max_objects));
    const std::vector<double> tm = tokens.mask_values();
    Tape tape(false);
    const Var text = m.encode_language(tape, m.embed_text(tape, tokens), tm);
    const Var obj = m.encode_objects(tape, m.embed_objects(tape, objects), objects.mask);
    const Var objp = m.encode_objects(tape, m.embed_objects(tape, permuted), permuted.mask);
    const auto [t1, o1] = m.encode_cross(tape, text, obj, tm, objects.mask);
    const auto [t2, o2] = m.encode_cross(tape, text, objp, tm, permuted.mask);
    CHECK(t1.shape() == text.shape());
    CHECK(o1.shape() == obj.shape());
    for (std::size_t j = 0; j < t1.value().size(); ++j) CHECK(std::abs(t1.value()[j] - t2.value()[j]) < 1e-10);
  }
}

TEST_CASE("head structure") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    ParameterSet ps;
    ClassificationHead head(ps, "h", 32);
    ps.initialize(static_cast<std::uint64_t>(trial), 1.0);
    Tape tape(false);
    const Var pooled = tape.constant(tst::random_tensor(rng, {1, 32}, -10, 10));
    const double r = head.forward(tape, pooled).value()[0];
    CHECK(r > 0.0);
    CHECK(r < 1.0);
  }

  ParameterSet ps;
  ClassificationHead head(ps, "h", 16);
  ps.initialize(3, 0.5);
  Tape tape(false);
  const Var pooled = tape.constant(tst::random_tensor(rng, {1, 16}, -2, 2));

  // Manual composition of the five stages.
  auto manual = [&](bool use_gelu) {
    Var h = ops::linear(pooled, tape.parameter(head.first().weight()), tape.parameter(head.first().bias()));
    if (use_gelu) h = ops::gelu(h);
    h = ops::layer_norm(h, tape.parameter(head.norm().gamma()), tape.parameter(head.norm().beta()));
    h = ops::linear(h, tape.parameter(head.last().weight()), tape.parameter(head.last().bias()));
    return ops::sigmoid(h).value()[0];
  };
  const double r = head.forward(tape, pooled).value()[0];
  CHECK(r == manual(true));
  CHECK(std::abs(r - manual(false)) > 1e-6);

  double previous = r;
  for (int step = 0; step < 5; ++step) {
    head.last().bias().value[0] += 0.25;
    Tape t(false);
    const double next = head.forward(t, t.constant(pooled.value())).value()[0];
    CHECK(next > previous);
    previous = next;
  }

  zero(head.last().weight());
  zero(head.last().bias());
  Tape t(false);
  CHECK(head.forward(t, t.constant(pooled.value())).value()[0] == 0.5);
}

TEST_CASE("zeroing the final head linear gives exactly one half") {
  const auto pm = perturbed(tst::desk_config(), 13);
  CrossModalMatcher& m = *pm;
  zero(m.classification_head().last().weight());
  zero(m.classification_head().last().bias());
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenSequence t = tst::random_tokens(rng, m.config(), tst::uniform_index(rng, 2, 16));
    const ObjectInput o = tst::random_objects(rng, m.config(), tst::uniform_index(rng, 1, 4));
    CHECK(m.score_value(t, o) == 0.5);
  }
}

TEST_CASE("score symmetry and padding invariance") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const auto pm = perturbed(tst::desk_config(static_cast<std::uint64_t>(trial)), 100 + trial);
    const CrossModalMatcher& m = *pm;
    const ModelConfig& c = m.config();
    const TokenSequence tokens = tst::random_tokens(rng, c, tst::uniform_index(rng, 2, c.max_len));
    const std::size_t n = tst::uniform_index(rng, 1, c.max_objects);
    const ObjectInput objects = tst::random_objects(rng, c, n);
    const double r = m.score_value(tokens, objects);

    const ObjectInput permuted = tst::permute_objects(objects, tst::random_permutation(rng, c.max_objects));
    CHECK(std::abs(m.score_value(tokens, permuted) - r) < 1e-10);

    const ObjectInput exact = objects.valid_only();
    CHECK(std::abs(m.score_value(tokens, exact) - r) < 1e-10);

    const ObjectInput spread = tst::spread_objects(rng, objects, c.max_objects);
    const TokenSequence noisy = tst::scramble_padding(rng, tokens, c.vocab_size);
    CHECK(std::abs(tst::cross_full_length_score(m, noisy, spread) - r) < 1e-10);
    CHECK(std::abs(tst::cross_full_length_score(m, tokens, objects) - r) < 1e-10);
  }
}

TEST_CASE("scores are reproducible and kernel-independent") {
  std::mt19937_64 rng(16);
  const ModelConfig c = tst::desk_config(21);
  const TokenSequence t = tst::random_tokens(rng, c, 9);
  const ObjectInput o = tst::random_objects(rng, c, 3);
  const double a = CrossModalMatcher(c).score_value(t, o);
  const double b = CrossModalMatcher(c).score_value(t, o);
  CHECK(std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b));

  if (kernels::avx2_table() != nullptr && kernels::cpu_supports(kernels::Isa::kAvx2)) {
    const kernels::Isa before = kernels::active().isa;
    const auto pm = perturbed(c, 22);
    const CrossModalMatcher& m = *pm;
    kernels::select(kernels::Isa::kScalar);
    const double s = m.score_value(t, o);
    kernels::select(kernels::Isa::kAvx2);
    const double v = m.score_value(t, o);
    kernels::select(before);
    CHECK(std::abs(s - v) < 1e-12);
  }
}

TEST_CASE("freezing the encoders leaves only the head trainable") {
  CrossModalMatcher m(tst::tiny_config());
  m.set_freeze_encoders(true);
  std::vector<Tensor> before;
  for (const Parameter* p : m.parameters().all()) before.push_back(p->value);
  std::mt19937_64 rng(17);
  std::vector<Example> batch;
  for (int i = 0; i < 2; ++i) {
    batch.push_back({tst::random_tokens(rng, m.config(), 4), tst::random_objects(rng, m.config(), 2),
                     static_cast<double>(i)});
  }
  Adam adam(m.parameters(), {});
  Tape tape;
  tape.backward(m.loss(tape, batch));
  adam.step();
  const auto params = m.parameters().all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    CAPTURE(params[i]->name);
    const bool head = params[i]->name.rfind("model.head.", 0) == 0;
    CHECK(params[i]->frozen == !head);
    if (!head) CHECK(params[i]->value == before[i]);
  }
  bool head_moved = false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    head_moved = head_moved || !(params[i]->value == before[i]);
  }
  CHECK(head_moved);
  m.set_freeze_encoders(false);
  for (const Parameter* p : m.parameters().all()) CHECK_FALSE(p->frozen);
}

TEST_CASE("full gradient check at tiny dimensions") {
  CrossModalMatcher m(tst::tiny_config(31));
  tst::perturb_parameters(m, 32, 0.2);
  std::mt19937_64 rng(33);
  std::vector<Example> batch;
  for (int i = 0; i < 3; ++i) {
    batch.push_back({tst::random_tokens(rng, m.config(), tst::uniform_index(rng, 2, 6)),
                     tst::random_objects(rng, m.config(), tst::uniform_index(rng, 1, 3)),
                     static_cast<double>(i % 2)});
  }
  const GradCheckResult r = grad_check(m.parameters(), [&](Tape& t) { return m.loss(t, batch); });
  CAPTURE(r.worst_parameter);
  CHECK(r.checked == m.parameters().scalar_count());
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("make_example pads and validates") {
  const Vocabulary vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "race"});
  const Tokenizer tok(vocab);
  std::mt19937_64 rng(1);
  FeatureStore store;
  store["a"] = tst::random_record(rng, 2, 4, "a");
  const ModelConfig c = tst::tiny_config();
  const Example ex = make_example({"race", "a", 1, std::nullopt}, tok, store, c);
  CHECK(ex.tokens.ids.size() == c.max_len);
  CHECK(ex.objects.count() == c.max_objects);
  CHECK(ex.label == 1.0);
  CHECK_THROWS_AS(make_example({"race", "b", 1, std::nullopt}, tok, store, c), LoadError);
  ModelConfig small = c;
  small.vocab_size = 3;
  CHECK_THROWS_AS(make_example({"race", "a", 1, std::nullopt}, tok, store, small), ConfigError);
}
