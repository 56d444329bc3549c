#pragma once

#include "spanner/class_inference.hpp"
#include "spanner/dataset.hpp"
#include "spanner/encoder.hpp"
#include "spanner/span_detector.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace spanner {

struct ModelConfig {
  EncoderConfig encoder;  // vocab_size is filled from the vocabulary
  InferenceConfig inference;
  TokenizerOptions input_tokenizer{128, true};
  TokenizerOptions description_tokenizer{32, true};
  int max_span_length = 10;
  double detection_init_std = 0.02;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Context encoder + detection heads + inference heads, plus the frozen
// description encoder (a copy of the context encoder's initial weights).
class SpanNerModel {
 public:
  SpanNerModel(Vocabulary vocab, ModelConfig config, std::uint64_t seed);

  SpanNerModel(const SpanNerModel& other);
  SpanNerModel& operator=(const SpanNerModel& other);
  SpanNerModel(SpanNerModel&&) noexcept = default;
  SpanNerModel& operator=(SpanNerModel&&) noexcept = default;

  const Vocabulary& vocab() const { return vocab_; }
  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  Encoder& context_encoder() { return context_encoder_; }
  const Encoder& context_encoder() const { return context_encoder_; }
  Encoder& description_encoder() { return description_encoder_; }
  const Encoder& description_encoder() const { return description_encoder_; }
  DetectionHeads& detection() { return detection_; }
  const DetectionHeads& detection() const { return detection_; }
  InferenceHeads& inference() { return inference_; }
  const InferenceHeads& inference() const { return inference_; }

  // Descriptions shipped with the model; callers may substitute others at
  // inference time without retraining.
  const std::vector<ClassDescription>& descriptions() const { return descriptions_; }
  void set_descriptions(std::vector<ClassDescription> descriptions);

  TokenSequence tokenize(std::span<const std::string> tokens) const;
  ad::Matrix encode(const TokenSequence& tokens) const;

  // Class set with description embeddings from the model's cache.
  ClassSet class_set(std::vector<ClassDescription> descriptions) const;
  const ClassEmbeddingCache& class_cache() const { return *cache_; }

  // Every parameter in a fixed order (checkpoint layout).
  ParameterList parameters();
  std::vector<const ad::Parameter*> parameters() const;
  ParameterList trainable_parameters();

 private:
  Vocabulary vocab_;
  ModelConfig config_;
  std::uint64_t seed_;
  Encoder context_encoder_;
  Encoder description_encoder_;
  DetectionHeads detection_;
  InferenceHeads inference_;
  std::vector<ClassDescription> descriptions_;
  std::unique_ptr<ClassEmbeddingCache> cache_;
};

// Vocabulary over the training sentences and every description text, so
// classes that only appear at test time are still tokenizable.
Vocabulary build_model_vocab(const Dataset& train,
                             std::span<const ClassDescription> descriptions,
                             bool lowercase = true, int min_count = 1);

SpanNerModel create_model(const Dataset& train,
                          std::vector<ClassDescription> descriptions,
                          const ModelConfig& config, std::uint64_t seed);

}  // namespace spanner
