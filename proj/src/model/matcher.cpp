#include "xmatch/matcher.hpp"

#include "xmatch/baselines.hpp"
#include "xmatch/error.hpp"
#include "xmatch/ops.hpp"

namespace xmatch {

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kCross:
      return "cross";
    case ModelKind::kEarly:
      return "early";
    case ModelKind::kDual:
      return "dual";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "cross") return ModelKind::kCross;
  if (name == "early") return ModelKind::kEarly;
  if (name == "dual") return ModelKind::kDual;
  throw ConfigError("unknown model kind \"" + std::string(name) + "\" (expected cross, early or dual)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(lang_layers, "L_lang");
  positive(object_layers, "L_obj");
  positive(cross_layers, "L_cross");
  positive(fusion_layers, "L_fusion");
  positive(d_emb, "d_emb");
  positive(vocab_size, "vocab_size");
  positive(max_objects, "N_obj");
  positive(feature_dim, "d_feat");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (dropout != 0.0) throw ConfigError("dropout is not supported; set it to 0");
}

Matcher::Matcher(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

Var Matcher::loss(Tape& tape, std::span<const Example> batch) const {
  if (batch.empty()) throw ShapeError("loss over an empty batch");
  std::vector<Var> probs;
  std::vector<double> labels;
  probs.reserve(batch.size());
  for (const Example& ex : batch) {
    probs.push_back(score(tape, ex.tokens, ex.objects));
    labels.push_back(ex.label);
  }
  const Var p = probs.size() == 1 ? probs.front() : ops::concat(probs, 0);
  return ops::bce_loss(p, labels);
}

double Matcher::score_value(const TokenSequence& tokens, const ObjectInput& objects) const {
  Tape tape(false);
  return score(tape, tokens, objects).value()[0];
}

bool Matcher::is_encoder_parameter(const std::string& name) const {
  return name.rfind("model.head.", 0) != 0;
}

void Matcher::set_freeze_encoders(bool freeze) {
  config_.freeze_encoders = freeze;
  for (Parameter* p : params_.all()) p->frozen = freeze && is_encoder_parameter(p->name);
}

void Matcher::initialize_parameters() {
  params_.initialize(config_.seed);
  set_freeze_encoders(config_.freeze_encoders);
}

CrossModalMatcher::CrossModalMatcher(const ModelConfig& config)
    : Matcher(config),
      text_embed_(params_, "model.text_embed", config_.vocab_size, config_.max_len, config_.d_model),
      object_embed_(params_, "model.object_embed", config_.feature_dim, config_.d_model),
      lang_(transformer_stack(params_, "model.lang", config_.lang_layers, config_.d_model,
                              config_.n_heads, config_.d_ff)),
      obj_(transformer_stack(params_, "model.obj", config_.object_layers, config_.d_model,
                             config_.n_heads, config_.d_ff)),
      cross_([this] {
        std::vector<CrossModalLayer> layers;
        for (std::size_t i = 0; i < config_.cross_layers; ++i) {
          layers.emplace_back(params_, "model.cross." + std::to_string(i), config_.d_model,
                              config_.n_heads, config_.d_ff);
        }
        return layers;
      }()),
      head_(params_, "model.head", config_.d_model) {
  initialize_parameters();
}

Var CrossModalMatcher::embed_text(Tape& tape, const TokenSequence& tokens) const {
  return text_embed_.forward(tape, tokens.ids);
}

Var CrossModalMatcher::embed_objects(Tape& tape, const ObjectInput& objects) const {
  return object_embed_.forward(tape, objects);
}

Var CrossModalMatcher::encode_language(Tape& tape, Var text, std::span<const double> mask) const {
  for (const auto& layer : lang_) text = layer.forward(tape, text, mask);
  return text;
}

Var CrossModalMatcher::encode_objects(Tape& tape, Var objects, std::span<const double> mask) const {
  for (const auto& layer : obj_) objects = layer.forward(tape, objects, mask);
  return objects;
}

std::pair<Var, Var> CrossModalMatcher::encode_cross(Tape& tape, Var text, Var objects,
                                                    std::span<const double> text_mask,
                                                    std::span<const double> object_mask) const {
  for (const auto& layer : cross_) {
    std::tie(text, objects) = layer.forward(tape, text, objects, text_mask, object_mask);
  }
  return {text, objects};
}

Var CrossModalMatcher::head(Tape& tape, Var pooled) const { return head_.forward(tape, pooled); }

Var CrossModalMatcher::score(Tape& tape, const TokenSequence& tokens,
                             const ObjectInput& objects) const {
  const TokenSequence tok = tokens.without_padding();
  const ObjectInput in = objects.valid_only();
  const std::vector<double> text_mask = tok.mask_values();
  Var text = encode_language(tape, embed_text(tape, tok), text_mask);
  Var obj = encode_objects(tape, embed_objects(tape, in), in.mask);
  auto [text_out, obj_out] = encode_cross(tape, text, obj, text_mask, in.mask);
  (void)obj_out;
  return head(tape, ops::slice(text_out, 0, 0, 1));
}

std::unique_ptr<Matcher> make_matcher(ModelKind kind, const ModelConfig& config) {
  switch (kind) {
    case ModelKind::kCross:
      return std::make_unique<CrossModalMatcher>(config);
    case ModelKind::kEarly:
      return std::make_unique<EarlyFusionMatcher>(config);
    case ModelKind::kDual:
      return std::make_unique<DualEncoder>(config);
  }
  throw ConfigError("unknown model kind");
}

Example make_example(const LabeledPair& pair, const Tokenizer& tokenizer,
                     const FeatureStore& store, const ModelConfig& config) {
  const auto it = store.find(pair.image_id);
  if (it == store.end()) throw LoadError("unknown image \"" + pair.image_id + "\"");
  if (tokenizer.vocab().size() > config.vocab_size) {
    throw ConfigError("vocabulary of " + std::to_string(tokenizer.vocab().size()) +
                      " tokens exceeds the model's vocab_size " + std::to_string(config.vocab_size));
  }
  return Example{tokenizer.encode(pair.phrase, config.max_len),
                 make_object_input(it->second, config.max_objects),
                 static_cast<double>(pair.label)};
}

}  // namespace xmatch
