#include "xmatch/baselines.hpp"
#include "xmatch/ops.hpp"

namespace xmatch {

namespace {
constexpr std::int32_t kTextSegment = 0;
constexpr std::int32_t kImageSegment = 1;
}  // namespace

EarlyFusionMatcher::EarlyFusionMatcher(const ModelConfig& config)
    : Matcher(config),
      text_embed_(params_, "model.text_embed", config_.vocab_size, config_.max_len, config_.d_model),
      object_embed_(params_, "model.object_embed", config_.feature_dim, config_.d_model),
      cls_(&params_.add("model.fusion_cls", {1, config_.d_model}, InitKind::kNormal)),
      segment_(&params_.add("model.segment", {2, config_.d_model}, InitKind::kNormal)),
      layers_(transformer_stack(params_, "model.fusion", config_.fusion_layers, config_.d_model,
                                config_.n_heads, config_.d_ff)),
      head_(params_, "model.head", config_.d_model) {
  initialize_parameters();
}

Var EarlyFusionMatcher::score(Tape& tape, const TokenSequence& tokens,
                              const ObjectInput& objects) const {
  const Var seq = encode(tape, tokens.without_padding(), objects.valid_only());
  return head_.forward(tape, ops::slice(seq, 0, 0, 1));
}

Var EarlyFusionMatcher::encode(Tape& tape, const TokenSequence& tokens,
                               const ObjectInput& objects) const {
  const Var text = text_embed_.forward(tape, tokens.ids);
  const Var obj = object_embed_.forward(tape, objects);
  const std::size_t n_text = tokens.ids.size(), n_obj = objects.count();

  std::vector<std::int32_t> segments(1 + n_text, kTextSegment);
  segments.resize(1 + n_text + n_obj, kImageSegment);
  std::vector<double> mask;
  mask.reserve(segments.size());
  mask.push_back(1.0);
  mask.insert(mask.end(), tokens.mask.begin(), tokens.mask.end());
  mask.insert(mask.end(), objects.mask.begin(), objects.mask.end());

  Var seq = ops::concat({tape.parameter(*cls_), text, obj}, 0);
  seq = ops::add(seq, ops::embedding_lookup(tape.parameter(*segment_), segments));
  for (const auto& layer : layers_) seq = layer.forward(tape, seq, mask);
  return seq;
}

}  // namespace xmatch
