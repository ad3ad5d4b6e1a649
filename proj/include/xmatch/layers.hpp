#pragma once

// Transformer building blocks shared by the matcher and the baselines.
// Blocks hold pointers into a ParameterSet owned by the enclosing model and
// register their parameters under a dotted name prefix.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xmatch/autograd.hpp"
#include "xmatch/data.hpp"
#include "xmatch/parameter.hpp"

namespace xmatch {

// y = x W + b with W stored [in x out].
class Linear {
 public:
  Linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out);
  Var forward(Tape& tape, Var x) const;

  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }

 private:
  Parameter* weight_;
  Parameter* bias_;
};

class LayerNorm {
 public:
  LayerNorm(ParameterSet& params, const std::string& prefix, std::size_t dim);
  Var forward(Tape& tape, Var x) const;

  Parameter& gamma() const { return *gamma_; }
  Parameter& beta() const { return *beta_; }

 private:
  Parameter* gamma_;
  Parameter* beta_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention(ParameterSet& params, const std::string& prefix, std::size_t d_model,
                     std::size_t n_heads);
  // Queries come from x, keys and values from context; context positions
  // with a zero mask entry are never attended to.
  Var forward(Tape& tape, Var x, Var context, std::span<const double> context_mask) const;

  const Linear& output() const { return output_; }

 private:
  Linear query_, key_, value_, output_;
  std::size_t n_heads_;
};

// Post-LN residual attention: LN(x + MHA(x, context)).
class AttentionSublayer {
 public:
  AttentionSublayer(ParameterSet& params, const std::string& prefix, std::size_t d_model,
                    std::size_t n_heads);
  Var forward(Tape& tape, Var x, Var context, std::span<const double> context_mask) const;

  const MultiHeadAttention& attention() const { return attn_; }
  const LayerNorm& norm() const { return ln_; }

 private:
  MultiHeadAttention attn_;
  LayerNorm ln_;
};

// Post-LN residual feed-forward: LN(h + W2 GELU(W1 h)).
class FeedForwardSublayer {
 public:
  FeedForwardSublayer(ParameterSet& params, const std::string& prefix, std::size_t d_model,
                      std::size_t d_ff);
  Var forward(Tape& tape, Var x) const;

 private:
  Linear in_, out_;
  LayerNorm ln_;
};

// Self-attention followed by feed-forward.
class TransformerLayer {
 public:
  TransformerLayer(ParameterSet& params, const std::string& prefix, std::size_t d_model,
                   std::size_t n_heads, std::size_t d_ff);
  Var forward(Tape& tape, Var x, std::span<const double> mask) const;

  const AttentionSublayer& self_attention() const { return self_; }

 private:
  AttentionSublayer self_;
  FeedForwardSublayer ffn_;
};

// `count` layers named prefix.0, prefix.1, ...
std::vector<TransformerLayer> transformer_stack(ParameterSet& params, const std::string& prefix,
                                                std::size_t count, std::size_t d_model,
                                                std::size_t n_heads, std::size_t d_ff);

// One cross-modal layer: bidirectional cross-attention through a single
// shared attention sublayer (text attends to objects, objects attend to
// text), then per-stream self-attention, then per-stream feed-forward.
class CrossModalLayer {
 public:
  CrossModalLayer(ParameterSet& params, const std::string& prefix, std::size_t d_model,
                  std::size_t n_heads, std::size_t d_ff);
  std::pair<Var, Var> forward(Tape& tape, Var text, Var objects, std::span<const double> text_mask,
                              std::span<const double> object_mask) const;

  const AttentionSublayer& cross_attention() const { return cross_; }
  const AttentionSublayer& text_self_attention() const { return text_self_; }
  const FeedForwardSublayer& text_feed_forward() const { return text_ffn_; }

 private:
  AttentionSublayer cross_;
  AttentionSublayer text_self_, object_self_;
  FeedForwardSublayer text_ffn_, object_ffn_;
};

// LN(word[ids] + position[0 .. n-1]).
class TextEmbedding {
 public:
  TextEmbedding(ParameterSet& params, const std::string& prefix, std::size_t vocab_size,
                std::size_t max_len, std::size_t d_model);
  Var forward(Tape& tape, std::span<const std::int32_t> ids) const;

  Parameter& word_table() const { return *word_; }
  Parameter& position_table() const { return *position_; }
  const LayerNorm& norm() const { return ln_; }

 private:
  Parameter* word_;
  Parameter* position_;
  LayerNorm ln_;
  std::size_t max_len_;
};

// (LN(feat W_f + b_f) + LN(box W_p + b_p)) / 2 per object, no position term.
class ObjectEmbedding {
 public:
  ObjectEmbedding(ParameterSet& params, const std::string& prefix, std::size_t d_feat,
                  std::size_t d_model);
  Var forward(Tape& tape, const ObjectInput& objects) const;

  const LayerNorm& feature_norm() const { return feat_ln_; }
  const LayerNorm& box_norm() const { return box_ln_; }

 private:
  Linear feat_proj_;
  LayerNorm feat_ln_;
  Linear box_proj_;
  LayerNorm box_ln_;
};

// linear -> GELU -> layer norm -> linear -> sigmoid, producing [1 x 1].
class ClassificationHead {
 public:
  ClassificationHead(ParameterSet& params, const std::string& prefix, std::size_t d_model);
  Var forward(Tape& tape, Var pooled) const;

  const Linear& first() const { return linear1_; }
  const LayerNorm& norm() const { return ln_; }
  const Linear& last() const { return linear2_; }

 private:
  Linear linear1_;
  LayerNorm ln_;
  Linear linear2_;
};

}  // namespace xmatch
