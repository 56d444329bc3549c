#include "spanner/model.hpp"

#include "spanner/errors.hpp"

namespace spanner {

void ModelConfig::validate() const {
  encoder.validate();
  inference.validate();
  if (inference.hidden != encoder.hidden) {
    throw ConfigError("inference width " + std::to_string(inference.hidden) +
                      " does not match encoder width " +
                      std::to_string(encoder.hidden));
  }
  if (max_span_length < 1) throw ConfigError("max span length must be >= 1");
  if (input_tokenizer.max_length < 1 || description_tokenizer.max_length < 1) {
    throw ConfigError("max sequence lengths must be >= 1");
  }
  if (input_tokenizer.max_length > encoder.max_positions ||
      description_tokenizer.max_length > encoder.max_positions) {
    throw ConfigError("max sequence length exceeds encoder positions");
  }
}

SpanNerModel::SpanNerModel(Vocabulary vocab, ModelConfig config, std::uint64_t seed)
    : vocab_(std::move(vocab)), config_(std::move(config)), seed_(seed) {
  config_.encoder.vocab_size = vocab_.size();
  config_.inference.hidden = config_.encoder.hidden;
  config_.validate();
  std::mt19937_64 rng(seed_);
  context_encoder_ = Encoder(config_.encoder, rng, "context");
  description_encoder_ = context_encoder_.clone("description");
  description_encoder_.set_frozen(true);
  detection_ = DetectionHeads(config_.encoder.hidden, config_.detection_init_std, rng);
  inference_ = InferenceHeads(config_.inference, rng);
  cache_ = std::make_unique<ClassEmbeddingCache>(config_.description_tokenizer);
}

SpanNerModel::SpanNerModel(const SpanNerModel& other)
    : vocab_(other.vocab_),
      config_(other.config_),
      seed_(other.seed_),
      context_encoder_(other.context_encoder_),
      description_encoder_(other.description_encoder_),
      detection_(other.detection_),
      inference_(other.inference_),
      descriptions_(other.descriptions_),
      cache_(std::make_unique<ClassEmbeddingCache>(config_.description_tokenizer)) {}

SpanNerModel& SpanNerModel::operator=(const SpanNerModel& other) {
  if (this != &other) {
    SpanNerModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void SpanNerModel::set_descriptions(std::vector<ClassDescription> descriptions) {
  validate_descriptions(descriptions);
  descriptions_ = std::move(descriptions);
}

TokenSequence SpanNerModel::tokenize(std::span<const std::string> tokens) const {
  return spanner::tokenize(tokens, vocab_, config_.input_tokenizer);
}

ad::Matrix SpanNerModel::encode(const TokenSequence& tokens) const {
  return context_encoder_.encode(tokens);
}

ClassSet SpanNerModel::class_set(std::vector<ClassDescription> descriptions) const {
  return make_class_set(std::move(descriptions), *cache_, description_encoder_, vocab_);
}

ParameterList SpanNerModel::parameters() {
  ParameterList out = context_encoder_.parameters();
  for (auto* p : description_encoder_.parameters()) out.push_back(p);
  for (auto* p : detection_.parameters()) out.push_back(p);
  for (auto* p : inference_.parameters()) out.push_back(p);
  return out;
}

std::vector<const ad::Parameter*> SpanNerModel::parameters() const {
  auto list = const_cast<SpanNerModel*>(this)->parameters();
  return {list.begin(), list.end()};
}

ParameterList SpanNerModel::trainable_parameters() {
  ParameterList out;
  for (auto* p : parameters()) {
    if (!p->frozen) out.push_back(p);
  }
  return out;
}

Vocabulary build_model_vocab(const Dataset& train,
                             std::span<const ClassDescription> descriptions,
                             bool lowercase, int min_count) {
  std::vector<std::string> corpus;
  corpus.reserve(train.size() + descriptions.size());
  for (const auto& s : train.sentences) {
    std::string joined;
    for (const auto& t : s.tokens) {
      joined += t;
      joined += ' ';
    }
    corpus.push_back(std::move(joined));
  }
  for (const auto& d : descriptions) corpus.push_back(d.text);
  return build_vocab(corpus, min_count, lowercase);
}

SpanNerModel create_model(const Dataset& train,
                          std::vector<ClassDescription> descriptions,
                          const ModelConfig& config, std::uint64_t seed) {
  SpanNerModel model(build_model_vocab(train, descriptions,
                                       config.input_tokenizer.lowercase),
                     config, seed);
  model.set_descriptions(std::move(descriptions));
  return model;
}

}  // namespace spanner
