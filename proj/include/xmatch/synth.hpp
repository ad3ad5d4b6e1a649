#pragma once

// Synthetic (phrase, image, label) corpora for desk-scale experiments.
// Every phrase carries exactly one key word; each key word maps to a code,
// each detected object is drawn around the prototype feature vector of a
// code, and a pair is relevant iff the phrase's code appears among the
// image's object codes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xmatch/data.hpp"

namespace xmatch {

struct SynthSpec {
  // code_words[c] lists the key words that map to code c.
  std::vector<std::vector<std::string>> code_words;
  // Optional filler words placed before/after the key word with the given
  // probabilities.
  std::vector<std::string> leading_words;
  std::vector<std::string> trailing_words;
  // Vocabulary entries after the four specials.
  std::vector<std::string> vocab_tokens;

  std::size_t n_train = 400;
  std::size_t n_eval = 100;
  std::size_t pool_size = 8;
  std::size_t n_apps = 4;
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  std::size_t feature_dim = 8;
  double prototype_scale = 1.0;
  double noise = 0.1;
  double leading_prob = 0.0;
  double trailing_prob = 0.0;

  std::size_t code_count() const { return code_words.size(); }
};

// Built-in 5-code, ~64-token setup.
SynthSpec default_synth_spec();
// Reads a JSON object whose keys override default_synth_spec().
SynthSpec parse_synth_spec(const std::string& json_text);
SynthSpec load_synth_spec(const std::filesystem::path& path);
// Throws ConfigError on an unusable spec (e.g. too few codes for negatives).
void validate_synth_spec(const SynthSpec& spec);

struct SynthCorpus {
  std::vector<std::string> vocab_tokens;  // full vocabulary, specials first
  std::vector<ImageRecord> images;        // train, eval, then pool images
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> eval;
  CandidatePool pool;
  std::string pool_query;
  std::vector<std::vector<double>> prototypes;
  std::map<std::string, int> word_codes;
};

SynthCorpus synth_generate(const SynthSpec& spec, std::uint64_t seed);

// Writes vocab.txt, features.jsonl, train.jsonl, eval.jsonl, pool.json and
// manifest.json (prototypes, word->code map, pool query) into `dir`.
void write_corpus(const SynthCorpus& corpus, const SynthSpec& spec, std::uint64_t seed,
                  const std::filesystem::path& dir);

}  // namespace xmatch
