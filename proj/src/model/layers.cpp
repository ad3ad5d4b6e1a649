#include "xmatch/layers.hpp"

#include <numeric>

#include "xmatch/error.hpp"
#include "xmatch/ops.hpp"

namespace xmatch {

Linear::Linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out)
    : weight_(&params.add(prefix + ".weight", {in, out}, InitKind::kNormal)),
      bias_(&params.add(prefix + ".bias", {out}, InitKind::kZeros)) {}

Var Linear::forward(Tape& tape, Var x) const {
  return ops::linear(x, tape.parameter(*weight_), tape.parameter(*bias_));
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& prefix, std::size_t dim)
    : gamma_(&params.add(prefix + ".gamma", {dim}, InitKind::kOnes)),
      beta_(&params.add(prefix + ".beta", {dim}, InitKind::kZeros)) {}

Var LayerNorm::forward(Tape& tape, Var x) const {
  return ops::layer_norm(x, tape.parameter(*gamma_), tape.parameter(*beta_));
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& prefix,
                                       std::size_t d_model, std::size_t n_heads)
    : query_(params, prefix + ".query", d_model, d_model),
      key_(params, prefix + ".key", d_model, d_model),
      value_(params, prefix + ".value", d_model, d_model),
      output_(params, prefix + ".output", d_model, d_model),
      n_heads_(n_heads) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
}

Var MultiHeadAttention::forward(Tape& tape, Var x, Var context,
                                std::span<const double> context_mask) const {
  const Var q = query_.forward(tape, x);
  const Var k = key_.forward(tape, context);
  const Var v = value_.forward(tape, context);
  const std::size_t head_dim = q.value().cols() / n_heads_;
  std::vector<Var> heads;
  heads.reserve(n_heads_);
  for (std::size_t h = 0; h < n_heads_; ++h) {
    const std::size_t start = h * head_dim;
    heads.push_back(ops::attention(ops::slice(q, 1, start, head_dim), ops::slice(k, 1, start, head_dim),
                                   ops::slice(v, 1, start, head_dim), context_mask));
  }
  const Var merged = n_heads_ == 1 ? heads.front() : ops::concat(heads, 1);
  return output_.forward(tape, merged);
}

AttentionSublayer::AttentionSublayer(ParameterSet& params, const std::string& prefix,
                                     std::size_t d_model, std::size_t n_heads)
    : attn_(params, prefix + ".attn", d_model, n_heads), ln_(params, prefix + ".ln", d_model) {}

Var AttentionSublayer::forward(Tape& tape, Var x, Var context,
                               std::span<const double> context_mask) const {
  return ln_.forward(tape, ops::add(x, attn_.forward(tape, x, context, context_mask)));
}

FeedForwardSublayer::FeedForwardSublayer(ParameterSet& params, const std::string& prefix,
                                         std::size_t d_model, std::size_t d_ff)
    : in_(params, prefix + ".in", d_model, d_ff),
      out_(params, prefix + ".out", d_ff, d_model),
      ln_(params, prefix + ".ln", d_model) {}

Var FeedForwardSublayer::forward(Tape& tape, Var x) const {
  const Var hidden = ops::gelu(in_.forward(tape, x));
  return ln_.forward(tape, ops::add(x, out_.forward(tape, hidden)));
}

TransformerLayer::TransformerLayer(ParameterSet& params, const std::string& prefix,
                                   std::size_t d_model, std::size_t n_heads, std::size_t d_ff)
    : self_(params, prefix + ".self", d_model, n_heads),
      ffn_(params, prefix + ".ffn", d_model, d_ff) {}

Var TransformerLayer::forward(Tape& tape, Var x, std::span<const double> mask) const {
  return ffn_.forward(tape, self_.forward(tape, x, x, mask));
}

std::vector<TransformerLayer> transformer_stack(ParameterSet& params, const std::string& prefix,
                                                std::size_t count, std::size_t d_model,
                                                std::size_t n_heads, std::size_t d_ff) {
  std::vector<TransformerLayer> layers;
  layers.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    layers.emplace_back(params, prefix + "." + std::to_string(i), d_model, n_heads, d_ff);
  }
  return layers;
}

CrossModalLayer::CrossModalLayer(ParameterSet& params, const std::string& prefix,
                                 std::size_t d_model, std::size_t n_heads, std::size_t d_ff)
    : cross_(params, prefix + ".cross", d_model, n_heads),
      text_self_(params, prefix + ".text_self", d_model, n_heads),
      object_self_(params, prefix + ".object_self", d_model, n_heads),
      text_ffn_(params, prefix + ".text_ffn", d_model, d_ff),
      object_ffn_(params, prefix + ".object_ffn", d_model, d_ff) {}

std::pair<Var, Var> CrossModalLayer::forward(Tape& tape, Var text, Var objects,
                                             std::span<const double> text_mask,
                                             std::span<const double> object_mask) const {
  const Var text_x = cross_.forward(tape, text, objects, object_mask);
  const Var obj_x = cross_.forward(tape, objects, text, text_mask);
  const Var text_s = text_self_.forward(tape, text_x, text_x, text_mask);
  const Var obj_s = object_self_.forward(tape, obj_x, obj_x, object_mask);
  return {text_ffn_.forward(tape, text_s), object_ffn_.forward(tape, obj_s)};
}

TextEmbedding::TextEmbedding(ParameterSet& params, const std::string& prefix,
                             std::size_t vocab_size, std::size_t max_len, std::size_t d_model)
    : word_(&params.add(prefix + ".word", {vocab_size, d_model}, InitKind::kNormal)),
      position_(&params.add(prefix + ".position", {max_len, d_model}, InitKind::kNormal)),
      ln_(params, prefix + ".ln", d_model),
      max_len_(max_len) {}

Var TextEmbedding::forward(Tape& tape, std::span<const std::int32_t> ids) const {
  if (ids.size() > max_len_) {
    throw ShapeError("token sequence of length " + std::to_string(ids.size()) +
                     " exceeds max_len " + std::to_string(max_len_));
  }
  std::vector<std::int32_t> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  const Var words = ops::embedding_lookup(tape.parameter(*word_), ids);
  const Var pos = ops::embedding_lookup(tape.parameter(*position_), positions);
  return ln_.forward(tape, ops::add(words, pos));
}

ObjectEmbedding::ObjectEmbedding(ParameterSet& params, const std::string& prefix,
                                 std::size_t d_feat, std::size_t d_model)
    : feat_proj_(params, prefix + ".feat_proj", d_feat, d_model),
      feat_ln_(params, prefix + ".feat_ln", d_model),
      box_proj_(params, prefix + ".box_proj", 4, d_model),
      box_ln_(params, prefix + ".box_ln", d_model) {}

Var ObjectEmbedding::forward(Tape& tape, const ObjectInput& objects) const {
  const Var feats = tape.constant(objects.feats);
  const Var boxes = tape.constant(objects.boxes);
  const Var f = feat_ln_.forward(tape, feat_proj_.forward(tape, feats));
  const Var b = box_ln_.forward(tape, box_proj_.forward(tape, boxes));
  return ops::scale(ops::add(f, b), 0.5);
}

ClassificationHead::ClassificationHead(ParameterSet& params, const std::string& prefix,
                                       std::size_t d_model)
    : linear1_(params, prefix + ".linear1", d_model, d_model),
      ln_(params, prefix + ".ln", d_model),
      linear2_(params, prefix + ".linear2", d_model, 1) {}

Var ClassificationHead::forward(Tape& tape, Var pooled) const {
  const Var h = ln_.forward(tape, ops::gelu(linear1_.forward(tape, pooled)));
  return ops::sigmoid(linear2_.forward(tape, h));
}

}  // namespace xmatch
