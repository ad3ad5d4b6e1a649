#pragma once

// Comparison models: a single-stream early-fusion transformer and a
// CLIP-style dual encoder whose only text/image interaction is a cosine.

#include <span>
#include <vector>

#include "xmatch/matcher.hpp"

namespace xmatch {

// [fusion CLS] + text tokens + projected objects, each position tagged
// with a learned modality-segment embedding, through one transformer stack.
// Sequence length is (text length) + (object count) + 1.
class EarlyFusionMatcher : public Matcher {
 public:
  explicit EarlyFusionMatcher(const ModelConfig& config);

  ModelKind kind() const override { return ModelKind::kEarly; }
  Var score(Tape& tape, const TokenSequence& tokens, const ObjectInput& objects) const override;
  // Hidden states of the joint sequence [fusion_cls; text; objects], one row
  // per position including padded ones.
  Var encode(Tape& tape, const TokenSequence& tokens, const ObjectInput& objects) const;

  const std::vector<TransformerLayer>& layers() const { return layers_; }

 private:
  TextEmbedding text_embed_;
  ObjectEmbedding object_embed_;
  Parameter* cls_;
  Parameter* segment_;
  std::vector<TransformerLayer> layers_;
  ClassificationHead head_;
};

inline constexpr double kMinTemperature = 1.0;
inline constexpr double kMaxTemperature = 100.0;

class DualEncoder : public Matcher {
 public:
  explicit DualEncoder(const ModelConfig& config);

  ModelKind kind() const override { return ModelKind::kDual; }
  // Cosine similarity of the two unit embeddings.
  Var score(Tape& tape, const TokenSequence& tokens, const ObjectInput& objects) const override;
  // Symmetric contrastive loss over the batch's positive pairs; every
  // off-diagonal (text, image) combination is treated as a negative. Labels
  // are ignored. Throws ShapeError for fewer than two examples.
  Var loss(Tape& tape, std::span<const Example> batch) const override;
  bool is_encoder_parameter(const std::string& name) const override;

  // [1 x d_emb] unit vectors.
  Var embed_text(Tape& tape, const TokenSequence& tokens) const;
  Var embed_image(Tape& tape, const ObjectInput& objects) const;
  // Cosine of two unit embeddings, [1 x 1].
  static Var similarity(Var text_embedding, Var image_embedding);
  // exp(log-temperature) clamped to [kMinTemperature, kMaxTemperature].
  Var temperature(Tape& tape) const;

  // Shallow interaction: an image embedding computed once can be scored
  // against any number of phrases.
  Tensor precompute_image(const ObjectInput& objects) const;
  double score_precomputed(const TokenSequence& tokens, const Tensor& image_embedding) const;

  Parameter& log_temperature() const { return *log_temperature_; }

 private:
  TextEmbedding text_embed_;
  std::vector<TransformerLayer> text_layers_;
  ObjectEmbedding object_embed_;
  std::vector<TransformerLayer> object_layers_;
  Parameter* text_proj_;
  Parameter* image_proj_;
  Parameter* log_temperature_;
};

}  // namespace xmatch
