#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xmatch/autograd.hpp"
#include "xmatch/data.hpp"
#include "xmatch/layers.hpp"
#include "xmatch/parameter.hpp"
#include "xmatch/tokenizer.hpp"

namespace xmatch {

enum class ModelKind : std::uint8_t { kCross = 0, kEarly = 1, kDual = 2 };

std::string_view model_kind_name(ModelKind kind);
// Accepts "cross", "early" or "dual"; throws ConfigError otherwise.
ModelKind parse_model_kind(std::string_view name);

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t lang_layers = 2;
  std::size_t object_layers = 2;
  std::size_t cross_layers = 2;
  // Depth of the single-stream early-fusion baseline.
  std::size_t fusion_layers = 4;
  // Shared embedding width of the dual encoder.
  std::size_t d_emb = 8;
  std::size_t vocab_size = 64;
  std::size_t max_len = 16;
  std::size_t max_objects = 4;
  std::size_t feature_dim = 8;
  std::uint64_t seed = 0;
  // Only 0 is supported; kept so configs can carry the field.
  double dropout = 0.0;
  bool freeze_encoders = false;

  // Throws ConfigError on zero extents, d_model % n_heads != 0, max_len < 2
  // or a nonzero dropout.
  void validate() const;
};

// One (phrase, image, label) triple prepared for a model.
struct Example {
  TokenSequence tokens;
  ObjectInput objects;
  double label = 0.0;
};

// Common surface of the three model kinds.
class Matcher {
 public:
  explicit Matcher(ModelConfig config);
  virtual ~Matcher() = default;
  Matcher(const Matcher&) = delete;
  Matcher& operator=(const Matcher&) = delete;

  virtual ModelKind kind() const = 0;

  // Relevance of one (phrase, image) pair recorded on `tape` as a [1 x 1]
  // value: a probability for the classifiers, a cosine for the dual encoder.
  virtual Var score(Tape& tape, const TokenSequence& tokens, const ObjectInput& objects) const = 0;
  // Training objective, averaged over the batch.
  virtual Var loss(Tape& tape, std::span<const Example> batch) const;

  // Forward-only convenience wrapper around score().
  double score_value(const TokenSequence& tokens, const ObjectInput& objects) const;

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // Marks every encoder parameter frozen (or unfrozen); only the task head
  // (or the dual encoder's projections and temperature) keeps training.
  void set_freeze_encoders(bool freeze);
  virtual bool is_encoder_parameter(const std::string& name) const;

 protected:
  // Draws fresh parameters from config().seed; called by derived constructors
  // once all parameters are registered.
  void initialize_parameters();

  ModelConfig config_;
  ParameterSet params_;
};

// The mid-fusion matcher: per-modality encoders followed by a cross-modal
// encoder and a classification head on the text-stream [CLS] vector.
class CrossModalMatcher : public Matcher {
 public:
  explicit CrossModalMatcher(const ModelConfig& config);

  ModelKind kind() const override { return ModelKind::kCross; }
  Var score(Tape& tape, const TokenSequence& tokens, const ObjectInput& objects) const override;

  Var embed_text(Tape& tape, const TokenSequence& tokens) const;
  Var embed_objects(Tape& tape, const ObjectInput& objects) const;
  Var encode_language(Tape& tape, Var text, std::span<const double> mask) const;
  Var encode_objects(Tape& tape, Var objects, std::span<const double> mask) const;
  std::pair<Var, Var> encode_cross(Tape& tape, Var text, Var objects,
                                   std::span<const double> text_mask,
                                   std::span<const double> object_mask) const;
  // Returns the [1 x 1] probability for a [1 x d_model] pooled vector.
  Var head(Tape& tape, Var pooled) const;

  const TextEmbedding& text_embedding() const { return text_embed_; }
  const ObjectEmbedding& object_embedding() const { return object_embed_; }
  const std::vector<TransformerLayer>& language_layers() const { return lang_; }
  const std::vector<CrossModalLayer>& cross_layers() const { return cross_; }
  const ClassificationHead& classification_head() const { return head_; }

 private:
  TextEmbedding text_embed_;
  ObjectEmbedding object_embed_;
  std::vector<TransformerLayer> lang_;
  std::vector<TransformerLayer> obj_;
  std::vector<CrossModalLayer> cross_;
  ClassificationHead head_;
};

std::unique_ptr<Matcher> make_matcher(ModelKind kind, const ModelConfig& config);

// Tokenizes and pads one pair for a model with the given configuration.
Example make_example(const LabeledPair& pair, const Tokenizer& tokenizer,
                     const FeatureStore& store, const ModelConfig& config);

}  // namespace xmatch
