#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "xmatch/data.hpp"
#include "xmatch/matcher.hpp"
#include "xmatch/tensor.hpp"
#include "xmatch/tokenizer.hpp"

namespace xmatch::testing {

inline std::filesystem::path fresh_dir(const std::filesystem::path& path) {
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
  return path;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Small enough for exhaustive finite-difference checks.
inline ModelConfig tiny_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.lang_layers = 1;
  c.object_layers = 1;
  c.cross_layers = 1;
  c.fusion_layers = 2;
  c.d_emb = 4;
  c.vocab_size = 12;
  c.max_len = 6;
  c.max_objects = 3;
  c.feature_dim = 4;
  c.seed = seed;
  return c;
}

// Desk-scale defaults with the given seed.
inline ModelConfig desk_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.seed = seed;
  return c;
}

// Random token ids in [4, vocab) between [CLS]=2 and [SEP]=3, padded with 0.
inline TokenSequence random_tokens(std::mt19937_64& rng, const ModelConfig& c,
                                   std::size_t true_length) {
  TokenSequence seq;
  seq.ids.assign(c.max_len, 0);
  seq.mask.assign(c.max_len, 0);
  seq.true_length = true_length;
  for (std::size_t i = 0; i < true_length; ++i) {
    seq.ids[i] = static_cast<std::int32_t>(uniform_index(rng, 4, c.vocab_size - 1));
    seq.mask[i] = 1;
  }
  seq.ids[0] = 2;
  seq.ids[true_length - 1] = 3;
  return seq;
}

inline ImageRecord random_record(std::mt19937_64& rng, std::size_t n_objects, std::size_t feature_dim,
                                 const std::string& id = "img") {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  ImageRecord rec;
  rec.image_id = id;
  for (std::size_t i = 0; i < n_objects; ++i) {
    DetectedObject o;
    double a = unit(rng), b = unit(rng), c = unit(rng), d = unit(rng);
    o.box = {std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
    for (std::size_t j = 0; j < feature_dim; ++j) o.feat.push_back(normal(rng));
    rec.objects.push_back(std::move(o));
  }
  return rec;
}

inline ObjectInput random_objects(std::mt19937_64& rng, const ModelConfig& c, std::size_t n_valid) {
  return make_object_input(random_record(rng, n_valid, c.feature_dim), c.max_objects);
}

// Rows of `objects` reordered by `order` (a permutation of the valid rows).
inline ObjectInput permute_objects(const ObjectInput& objects, const std::vector<std::size_t>& order) {
  ObjectInput out = objects;
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = 0; j < 4; ++j) out.boxes.at(i, j) = objects.boxes.at(order[i], j);
    for (std::size_t j = 0; j < objects.feats.cols(); ++j) {
      out.feats.at(i, j) = objects.feats.at(order[i], j);
    }
    out.mask[i] = objects.mask[order[i]];
  }
  return out;
}

// Fills the padded rows of `objects` with arbitrary values; the mask keeps
// them invisible.
inline ObjectInput scramble_padding(std::mt19937_64& rng, ObjectInput objects) {
  std::normal_distribution<double> normal(0.0, 3.0);
  for (std::size_t i = 0; i < objects.count(); ++i) {
    if (objects.mask[i] != 0.0) continue;
    for (std::size_t j = 0; j < 4; ++j) objects.boxes.at(i, j) = normal(rng);
    for (std::size_t j = 0; j < objects.feats.cols(); ++j) objects.feats.at(i, j) = normal(rng);
  }
  return objects;
}

inline TokenSequence scramble_padding(std::mt19937_64& rng, TokenSequence tokens,
                                      std::size_t vocab_size) {
  for (std::size_t i = tokens.true_length; i < tokens.max_len(); ++i) {
    tokens.ids[i] = static_cast<std::int32_t>(uniform_index(rng, 0, vocab_size - 1));
  }
  return tokens;
}

// Hand-traced WordPiece conformance cases over `conformance_vocab()`.
struct TokenizerCase {
  std::string name;
  std::string phrase;
  std::size_t max_len;
  std::vector<std::string> expected;  // full sequence up to and including [SEP]
};

inline Vocabulary conformance_vocab() {
  return Vocabulary({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "play", "##er", "##ers", "##ing",
                     "fun", "game", "games", "##s", "!", ",", ".", "un", "##able", "a", "##a",
                     "##b", "x", "##x", "caf\xC3\xA9", "puzzle"});
}

inline std::vector<TokenizerCase> conformance_cases() {
  const std::string long_word(101, 'a');
  return {
      {"continuation", "player", 6, {"[CLS]", "play", "##er", "[SEP]"}},
      {"longest continuation wins", "players", 8, {"[CLS]", "play", "##ers", "[SEP]"}},
      {"suffix ing", "playing", 8, {"[CLS]", "play", "##ing", "[SEP]"}},
      {"whole word", "play", 8, {"[CLS]", "play", "[SEP]"}},
      {"punctuation split", "Fun Game!", 8, {"[CLS]", "fun", "game", "!", "[SEP]"}},
      {"whole word beats prefix", "games", 8, {"[CLS]", "games", "[SEP]"}},
      {"prefix then continuation", "gamess", 8, {"[CLS]", "games", "##s", "[SEP]"}},
      {"no match", "xyzzy", 8, {"[CLS]", "[UNK]", "[SEP]"}},
      {"late failure", "playerz", 8, {"[CLS]", "[UNK]", "[SEP]"}},
      {"empty", "", 8, {"[CLS]", "[SEP]"}},
      {"whitespace only", " \t\n ", 8, {"[CLS]", "[SEP]"}},
      {"mixed punctuation", "fun, fun.", 8, {"[CLS]", "fun", ",", "fun", ".", "[SEP]"}},
      {"two pieces", "unable", 8, {"[CLS]", "un", "##able", "[SEP]"}},
      {"uppercase", "PLAYER", 8, {"[CLS]", "play", "##er", "[SEP]"}},
      {"truncate words", "play play play play play play", 6,
       {"[CLS]", "play", "play", "play", "play", "[SEP]"}},
      {"truncate inside word", "players games", 4, {"[CLS]", "play", "##ers", "[SEP]"}},
      {"repeated continuation", "aaa", 8, {"[CLS]", "a", "##a", "##a", "[SEP]"}},
      {"over-long word", long_word, 8, {"[CLS]", "[UNK]", "[SEP]"}},
      {"latin-1 lowercase", "CAF\xC3\x89", 8, {"[CLS]", "caf\xC3\xA9", "[SEP]"}},
      {"ideographic space", "fun\xE3\x80\x80game", 8, {"[CLS]", "fun", "game", "[SEP]"}},
  };
}

// Empty when the case passes, otherwise a description of the difference.
inline std::string check_tokenizer_case(const TokenizerCase& c, const Vocabulary& vocab) {
  const TokenSequence seq = encode(c.phrase, vocab, c.max_len);
  std::string problems;
  if (seq.true_length != c.expected.size()) {
    problems += "true_length " + std::to_string(seq.true_length) + " != " +
                std::to_string(c.expected.size()) + "; ";
  }
  if (seq.ids.size() != c.max_len || seq.mask.size() != c.max_len) problems += "length; ";
  for (std::size_t i = 0; i < c.max_len && i < seq.ids.size() && i < seq.mask.size(); ++i) {
    const bool valid = i < c.expected.size();
    const std::int32_t want = valid ? vocab.id(c.expected[i]) : vocab.pad_id();
    if (seq.ids[i] != want) {
      problems += "position " + std::to_string(i) + " is " + vocab.token(seq.ids[i]) + "; ";
    }
    if (seq.mask[i] != (valid ? 1 : 0)) problems += "mask " + std::to_string(i) + "; ";
  }
  return problems;
}

}  // namespace xmatch::testing
