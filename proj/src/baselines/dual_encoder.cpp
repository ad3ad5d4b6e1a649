#include <cmath>

#include "xmatch/baselines.hpp"
#include "xmatch/error.hpp"
#include "xmatch/ops.hpp"

namespace xmatch {

DualEncoder::DualEncoder(const ModelConfig& config)
    : Matcher(config),
      text_embed_(params_, "model.text_embed", config_.vocab_size, config_.max_len, config_.d_model),
      text_layers_(transformer_stack(params_, "model.lang", config_.lang_layers, config_.d_model,
                                     config_.n_heads, config_.d_ff)),
      object_embed_(params_, "model.object_embed", config_.feature_dim, config_.d_model),
      object_layers_(transformer_stack(params_, "model.obj", config_.object_layers, config_.d_model,
                                       config_.n_heads, config_.d_ff)),
      text_proj_(&params_.add("model.proj.text", {config_.d_model, config_.d_emb}, InitKind::kNormal)),
      image_proj_(&params_.add("model.proj.image", {config_.d_model, config_.d_emb}, InitKind::kNormal)),
      // CLIP's initial temperature of 1 / 0.07, stored on log scale.
      log_temperature_(&params_.add("model.logit_scale", {}, InitKind::kConstant, std::log(1.0 / 0.07))) {
  initialize_parameters();
}

bool DualEncoder::is_encoder_parameter(const std::string& name) const {
  return name.rfind("model.proj.", 0) != 0 && name != "model.logit_scale";
}

Var DualEncoder::embed_text(Tape& tape, const TokenSequence& padded) const {
  const TokenSequence tokens = padded.without_padding();
  const std::vector<double> mask = tokens.mask_values();
  Var h = text_embed_.forward(tape, tokens.ids);
  for (const auto& layer : text_layers_) h = layer.forward(tape, h, mask);
  return ops::l2_normalize_rows(ops::matmul(ops::slice(h, 0, 0, 1), tape.parameter(*text_proj_)));
}

Var DualEncoder::embed_image(Tape& tape, const ObjectInput& padded) const {
  const ObjectInput objects = padded.valid_only();
  Var h = object_embed_.forward(tape, objects);
  for (const auto& layer : object_layers_) h = layer.forward(tape, h, objects.mask);
  return ops::l2_normalize_rows(
      ops::matmul(ops::masked_mean_rows(h, objects.mask), tape.parameter(*image_proj_)));
}

Var DualEncoder::similarity(Var text_embedding, Var image_embedding) {
  return ops::matmul_nt(text_embedding, image_embedding);
}

Var DualEncoder::temperature(Tape& tape) const {
  return ops::clamp(ops::exp(tape.parameter(*log_temperature_)), kMinTemperature, kMaxTemperature);
}

Var DualEncoder::score(Tape& tape, const TokenSequence& tokens, const ObjectInput& objects) const {
  return similarity(embed_text(tape, tokens), embed_image(tape, objects));
}

Var DualEncoder::loss(Tape& tape, std::span<const Example> batch) const {
  if (batch.size() < 2) throw ShapeError("contrastive loss needs at least two pairs");
  std::vector<Var> texts, images;
  for (const Example& ex : batch) {
    texts.push_back(embed_text(tape, ex.tokens));
    images.push_back(embed_image(tape, ex.objects));
  }
  const Var logits = ops::mul_scalar(ops::matmul_nt(ops::concat(texts, 0), ops::concat(images, 0)),
                                     temperature(tape));
  return ops::contrastive_loss(logits);
}

Tensor DualEncoder::precompute_image(const ObjectInput& objects) const {
  Tape tape(false);
  return embed_image(tape, objects).value();
}

double DualEncoder::score_precomputed(const TokenSequence& tokens, const Tensor& image_embedding) const {
  Tape tape(false);
  return similarity(embed_text(tape, tokens), tape.constant(image_embedding)).value()[0];
}

}  // namespace xmatch
