#include <doctest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "support/helpers.hpp"
#include "support/model_helpers.hpp"
#include "xmatch/checkpoint.hpp"
#include "xmatch/config.hpp"
#include "xmatch/error.hpp"

using namespace xmatch;
namespace tst = xmatch::testing;

namespace {

const std::filesystem::path kTmp = XMATCH_TEST_TMP;

std::string config_for(const Matcher& m) {
  return model_config_json(m.kind(), m.config(), OptimConfig{}, true).dump();
}

std::uint32_t read_u32(const std::string& bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
  return v;
}

}  // namespace

TEST_CASE("every model kind round-trips bit for bit") {
  tst::fresh_dir(kTmp);
  std::mt19937_64 rng(1);
  for (ModelKind kind : {ModelKind::kCross, ModelKind::kEarly, ModelKind::kDual}) {
    CAPTURE(model_kind_name(kind));
    ModelConfig c = tst::tiny_config(9);
    auto m = make_matcher(kind, c);
    tst::perturb_parameters(*m, 10);
    m->parameters().all()[0]->value[0] = -0.0;
    m->parameters().all()[0]->value[1] = 4.9e-324;
    const auto path = kTmp / (std::string(model_kind_name(kind)) + ".ckpt");
    save_checkpoint(path, checkpoint_from(*m, config_for(*m)));

    const auto restored = matcher_from_checkpoint(load_checkpoint(path));
    CHECK(restored->kind() == kind);
    const auto a = m->parameters().all();
    const auto b = restored->parameters().all();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->name == b[i]->name);
      REQUIRE(a[i]->value.shape() == b[i]->value.shape());
      for (std::size_t k = 0; k < a[i]->value.size(); ++k) {
        CHECK(std::bit_cast<std::uint64_t>(a[i]->value[k]) == std::bit_cast<std::uint64_t>(b[i]->value[k]));
      }
    }
    const TokenSequence t = tst::random_tokens(rng, c, 4);
    const ObjectInput o = tst::random_objects(rng, c, 2);
    CHECK(std::bit_cast<std::uint64_t>(m->score_value(t, o)) ==
          std::bit_cast<std::uint64_t>(restored->score_value(t, o)));

    // Saving the restored model reproduces the file.
    const auto again = kTmp / (std::string(model_kind_name(kind)) + ".again.ckpt");
    save_checkpoint(again, checkpoint_from(*restored, config_for(*restored)));
    CHECK(tst::read_bytes(path) == tst::read_bytes(again));
  }
}

TEST_CASE("header layout") {
  const CrossModalMatcher m(tst::tiny_config());
  std::ostringstream out;
  const Checkpoint ckpt = checkpoint_from(m, "{\"x\":1}");
  write_checkpoint(out, ckpt);
  const std::string bytes = out.str();
  CHECK(bytes.substr(0, 4) == "XMCK");
  CHECK(read_u32(bytes, 4) == kCheckpointVersion);
  CHECK(static_cast<unsigned char>(bytes[8]) == static_cast<unsigned char>(ModelKind::kCross));
  CHECK(read_u32(bytes, 9) == 7);
  CHECK(bytes.substr(13, 7) == "{\"x\":1}");
  CHECK(read_u32(bytes, 20) == m.parameters().size());
  const std::string first = m.parameters().all()[0]->name;
  CHECK(read_u32(bytes, 24) == first.size());
  CHECK(bytes.substr(28, first.size()) == first);

  std::size_t expected = 4 + 4 + 1 + 4 + 7 + 4;
  for (const Parameter* p : m.parameters().all()) {
    expected += 4 + p->name.size() + 1 + 4 * p->value.rank() + 8 * p->value.size();
  }
  CHECK(bytes.size() == expected);
}

TEST_CASE("damaged files are rejected") {
  const CrossModalMatcher m(tst::tiny_config());
  std::ostringstream out;
  write_checkpoint(out, checkpoint_from(m, "{}"));
  const std::string good = out.str();
  auto read = [](const std::string& bytes) {
    std::istringstream in(bytes);
    return read_checkpoint(in);
  };
  CHECK_NOTHROW(read(good));

  std::string bad_magic = good;
  bad_magic[0] = 'Y';
  CHECK_THROWS_WITH_AS(read(bad_magic), doctest::Contains("magic"), LoadError);

  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_WITH_AS(read(bad_version), doctest::Contains("version"), LoadError);

  std::string bad_kind = good;
  bad_kind[8] = 7;
  CHECK_THROWS_AS(read(bad_kind), LoadError);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1}) {
    CAPTURE(cut);
    CHECK_THROWS_AS(read(good.substr(0, cut)), LoadError);
  }
  CHECK_THROWS_WITH_AS(read(good + "x"), doctest::Contains("trailing"), LoadError);
  CHECK_THROWS_AS(load_checkpoint(kTmp / "does_not_exist.ckpt"), LoadError);
}

TEST_CASE("applying a checkpoint checks kind, names and shapes") {
  const CrossModalMatcher cross(tst::tiny_config());
  const Checkpoint ckpt = checkpoint_from(cross, config_for(cross));

  EarlyFusionMatcher early(tst::tiny_config());
  CHECK_THROWS_WITH_AS(apply_checkpoint(ckpt, early), doctest::Contains("cross"), LoadError);

  CrossModalMatcher target(tst::tiny_config(2));
  Checkpoint renamed = ckpt;
  renamed.entries[3].name = "model.bogus";
  CHECK_THROWS_WITH_AS(apply_checkpoint(renamed, target), doctest::Contains("model.bogus"), LoadError);

  Checkpoint reshaped = ckpt;
  reshaped.entries[0].value = Tensor({1, 1});
  CHECK_THROWS_WITH_AS(apply_checkpoint(reshaped, target), doctest::Contains(reshaped.entries[0].name.c_str()),
                       LoadError);

  Checkpoint shortened = ckpt;
  shortened.entries.pop_back();
  CHECK_THROWS_WITH_AS(apply_checkpoint(shortened, target), doctest::Contains("missing"), LoadError);

  Checkpoint extended = ckpt;
  extended.entries.push_back({"model.extra", Tensor({2})});
  CHECK_THROWS_WITH_AS(apply_checkpoint(extended, target), doctest::Contains("model.extra"), LoadError);

  // A failed apply leaves the model untouched.
  const Tensor before = target.parameters().all()[0]->value;
  CHECK_THROWS(apply_checkpoint(reshaped, target));
  CHECK(target.parameters().all()[0]->value == before);

  apply_checkpoint(ckpt, target);
  CHECK(target.parameters().all()[5]->value == cross.parameters().all()[5]->value);

  Checkpoint bad_json = ckpt;
  bad_json.config_json = "{not json";
  CHECK_THROWS_AS(matcher_from_checkpoint(bad_json), LoadError);
}
