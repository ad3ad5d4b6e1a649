#include "xmatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xmatch/error.hpp"
#include "xmatch/tokenizer.hpp"

namespace xmatch {
namespace {

using nlohmann::json;

std::string padded_id(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return prefix + buf;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

class Generator {
 public:
  Generator(const SynthSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {}

  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }
  double normal() { return normal_(rng_); }

  void make_prototypes() {
    const std::size_t n = spec_.code_count(), d = spec_.feature_dim;
    const double min_sep = spec_.prototype_scale;
    for (std::size_t c = 0; c < n; ++c) {
      std::vector<double> best;
      double best_sep = -1.0;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<double> v(d);
        for (double& x : v) x = spec_.prototype_scale * normal();
        double sep = std::numeric_limits<double>::infinity();
        for (const auto& p : prototypes_) sep = std::min(sep, std::sqrt(squared_distance(v, p)));
        if (sep > best_sep) {
          best_sep = sep;
          best = std::move(v);
        }
        if (best_sep >= min_sep) break;
      }
      prototypes_.push_back(std::move(best));
    }
  }

  int nearest_code(const std::vector<double>& feat) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < prototypes_.size(); ++c) {
      const double d = squared_distance(feat, prototypes_[c]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    return best;
  }

  DetectedObject make_object(int code) {
    DetectedObject o;
    const double x1 = uniform(0.0, 0.8), y1 = uniform(0.0, 0.8);
    o.box = {x1, y1, uniform(x1 + 0.05, 1.0), uniform(y1 + 0.05, 1.0)};
    const auto& proto = prototypes_[static_cast<std::size_t>(code)];
    // Resample until the noisy feature still decodes to its own code.
    do {
      o.feat = proto;
      for (double& v : o.feat) v += spec_.noise * normal();
    } while (nearest_code(o.feat) != code);
    return o;
  }

  // Returns the image and the codes of its objects.
  std::pair<ImageRecord, std::vector<int>> make_image(const std::string& id,
                                                      const std::vector<int>& allowed) {
    const std::size_t count = spec_.min_objects + uniform_index(spec_.max_objects - spec_.min_objects + 1);
    ImageRecord rec{id, {}};
    std::vector<int> codes;
    for (std::size_t i = 0; i < count; ++i) {
      const int code = allowed[uniform_index(allowed.size())];
      codes.push_back(code);
      rec.objects.push_back(make_object(code));
    }
    return {std::move(rec), std::move(codes)};
  }

  std::string phrase_for(int code) {
    const auto& words = spec_.code_words[static_cast<std::size_t>(code)];
    std::string phrase;
    if (!spec_.leading_words.empty() && coin(spec_.leading_prob)) {
      phrase = spec_.leading_words[uniform_index(spec_.leading_words.size())] + " ";
    }
    phrase += words[uniform_index(words.size())];
    if (!spec_.trailing_words.empty() && coin(spec_.trailing_prob)) {
      phrase += " " + spec_.trailing_words[uniform_index(spec_.trailing_words.size())];
    }
    return phrase;
  }

  // n pairs over ceil(n / 2) fresh images: one positive and one negative
  // phrase per image.
  std::vector<LabeledPair> make_split(const std::string& prefix, std::size_t n,
                                      std::vector<ImageRecord>& images) {
    std::vector<int> all_codes(spec_.code_count());
    for (std::size_t c = 0; c < all_codes.size(); ++c) all_codes[c] = static_cast<int>(c);
    std::vector<LabeledPair> pairs;
    const std::size_t n_images = (n + 1) / 2;
    for (std::size_t i = 0; i < n_images; ++i) {
      auto [rec, codes] = make_image(padded_id(prefix, i), all_codes);
      const std::string app = "app-" + std::to_string(i % std::max<std::size_t>(1, spec_.n_apps));
      const std::set<int> present(codes.begin(), codes.end());
      std::vector<int> absent;
      for (int c : all_codes) {
        if (!present.count(c)) absent.push_back(c);
      }
      for (int label = 1; label >= 0 && pairs.size() < n; --label) {
        const int code = label == 1 ? codes[uniform_index(codes.size())]
                                    : absent[uniform_index(absent.size())];
        pairs.push_back(LabeledPair{phrase_for(code), rec.image_id, label, app});
      }
      images.push_back(std::move(rec));
    }
    return pairs;
  }

  const std::vector<std::vector<double>>& prototypes() const { return prototypes_; }

 private:
  const SynthSpec& spec_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::vector<std::vector<double>> prototypes_;
};

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("synth spec field ") + key + ": " + e.what());
    }
  }
}

}  // namespace

SynthSpec default_synth_spec() {
  SynthSpec s;
  s.code_words = {{"puzzle", "puzzler"}, {"race", "racer"}, {"farm", "farmer"},
                  {"shoot", "shooter"}, {"card", "cards"}};
  s.leading_words = {"fun", "free", "best", "new", "top", "classic", "offline", "online", "kids"};
  s.trailing_words = {"game", "games", "app", "apps", "simulator", "3d", "play"};
  s.vocab_tokens = {
      "puzzle", "race", "farm", "shoot", "card", "word", "chess", "cook",
      "##r", "##er", "##s", "##board", "##ing",
      "fun", "free", "best", "new", "top", "classic", "offline", "online", "kids",
      "game", "app", "play", "sim", "##ulator", "3", "##d",
      "!", "?", ",", ".", "-", "&", "'",
      "music", "photo", "editor", "chat", "video", "news", "weather", "fitness",
      "travel", "shop", "bank", "map", "camera", "radio", "clock", "calendar",
      "mail", "notes", "##y", "##ly", "##ed", "##est", "a", "the"};
  return s;
}

SynthSpec parse_synth_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("synth spec: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
  SynthSpec s = default_synth_spec();
  read_field(j, "code_words", s.code_words);
  read_field(j, "leading_words", s.leading_words);
  read_field(j, "trailing_words", s.trailing_words);
  read_field(j, "vocab_tokens", s.vocab_tokens);
  read_field(j, "n_train", s.n_train);
  read_field(j, "n_eval", s.n_eval);
  read_field(j, "pool_size", s.pool_size);
  read_field(j, "n_apps", s.n_apps);
  read_field(j, "min_objects", s.min_objects);
  read_field(j, "max_objects", s.max_objects);
  read_field(j, "feature_dim", s.feature_dim);
  read_field(j, "prototype_scale", s.prototype_scale);
  read_field(j, "noise", s.noise);
  read_field(j, "leading_prob", s.leading_prob);
  read_field(j, "trailing_prob", s.trailing_prob);
  validate_synth_spec(s);
  return s;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open synth spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synth_spec(ss.str());
}

void validate_synth_spec(const SynthSpec& spec) {
  if (spec.code_count() < 2) throw ConfigError("synth spec needs at least two codes");
  if (spec.min_objects < 1 || spec.min_objects > spec.max_objects) {
    throw ConfigError("synth spec needs 1 <= min_objects <= max_objects");
  }
  if (spec.max_objects >= spec.code_count()) {
    throw ConfigError("synth spec needs more codes than max_objects so every image has a negative code");
  }
  if (spec.feature_dim == 0) throw ConfigError("synth spec feature_dim must be positive");
  if (spec.pool_size == 0) throw ConfigError("synth spec pool_size must be positive");
  if (spec.n_train == 0 || spec.n_eval == 0) throw ConfigError("synth spec needs train and eval pairs");
  if (!(spec.noise >= 0.0) || !(spec.prototype_scale > 0.0)) {
    throw ConfigError("synth spec noise must be >= 0 and prototype_scale > 0");
  }
  std::vector<std::string> tokens{std::string(kPadToken), std::string(kUnkToken),
                                  std::string(kClsToken), std::string(kSepToken)};
  tokens.insert(tokens.end(), spec.vocab_tokens.begin(), spec.vocab_tokens.end());
  Vocabulary vocab = [&] {
    try {
      return Vocabulary(tokens);
    } catch (const LoadError& e) {
      throw ConfigError(std::string("synth spec vocabulary: ") + e.what());
    }
  }();
  std::set<std::string> keys;
  auto check_words = [&](const std::vector<std::string>& words) {
    for (const auto& w : words) {
      for (const auto& piece : Tokenizer(vocab).tokenize(w)) {
        if (piece == kUnkToken) throw ConfigError("synth spec word \"" + w + "\" is not covered by the vocabulary");
      }
    }
  };
  for (const auto& words : spec.code_words) {
    if (words.empty()) throw ConfigError("synth spec code without key words");
    check_words(words);
    for (const auto& w : words) {
      if (pre_tokenize(w).size() != 1) throw ConfigError("synth spec key word \"" + w + "\" must be a single word");
      if (!keys.insert(pre_tokenize(w)[0]).second) throw ConfigError("synth spec key word \"" + w + "\" listed twice");
    }
  }
  for (const auto* list : {&spec.leading_words, &spec.trailing_words}) {
    check_words(*list);
    for (const auto& w : *list) {
      for (const auto& piece : pre_tokenize(w)) {
        if (keys.count(piece)) throw ConfigError("synth spec filler \"" + w + "\" contains a key word");
      }
    }
  }
}

SynthCorpus synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  validate_synth_spec(spec);
  Generator gen(spec, seed);
  gen.make_prototypes();

  SynthCorpus corpus;
  corpus.vocab_tokens = {std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                         std::string(kSepToken)};
  corpus.vocab_tokens.insert(corpus.vocab_tokens.end(), spec.vocab_tokens.begin(), spec.vocab_tokens.end());
  for (std::size_t c = 0; c < spec.code_count(); ++c) {
    for (const auto& w : spec.code_words[c]) corpus.word_codes[pre_tokenize(w)[0]] = static_cast<int>(c);
  }
  corpus.prototypes = gen.prototypes();

  corpus.train = gen.make_split("train-", spec.n_train, corpus.images);
  corpus.eval = gen.make_split("eval-", spec.n_eval, corpus.images);

  // Pool: exactly one image contains the query code.
  const int query_code = static_cast<int>(gen.uniform_index(spec.code_count()));
  corpus.pool_query = gen.phrase_for(query_code);
  std::vector<int> others;
  for (int c = 0; c < static_cast<int>(spec.code_count()); ++c) {
    if (c != query_code) others.push_back(c);
  }
  const std::size_t hit = gen.uniform_index(spec.pool_size);
  for (std::size_t i = 0; i < spec.pool_size; ++i) {
    auto [rec, codes] = gen.make_image(padded_id("pool-", i), others);
    if (i == hit) {
      const std::size_t slot = gen.uniform_index(rec.objects.size());
      rec.objects[slot] = gen.make_object(query_code);
    }
    corpus.pool.image_ids.push_back(rec.image_id);
    corpus.images.push_back(std::move(rec));
  }
  return corpus;
}

void write_corpus(const SynthCorpus& corpus, const SynthSpec& spec, std::uint64_t seed,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_vocab(dir / "vocab.txt", Vocabulary(corpus.vocab_tokens));
  write_features(dir / "features.jsonl", corpus.images);
  write_pairs(dir / "train.jsonl", corpus.train);
  write_pairs(dir / "eval.jsonl", corpus.eval);
  write_pool(dir / "pool.json", corpus.pool);

  json manifest = json::object();
  manifest["seed"] = seed;
  manifest["rule"] = "label = 1 iff the code of the phrase's key word is among the image's object codes";
  manifest["codes"] = spec.code_count();
  manifest["prototypes"] = corpus.prototypes;
  manifest["word_codes"] = corpus.word_codes;
  manifest["pool_query"] = corpus.pool_query;
  manifest["feature_dim"] = spec.feature_dim;
  manifest["max_objects"] = spec.max_objects;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw LoadError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

}  // namespace xmatch
