#pragma once

// Entity class inference from natural-language class descriptions.
//
// A span [i, j] becomes a mention vector e = W_entity * mean(x_i..x_j). Each
// class description is embedded once by the frozen description encoder; the
// mention attends over those description tokens (multi-head, mention as the
// single query) to build a class representation adapted to the mention, and
// p(c | e) = sigmoid(<e, adapted>).

#include "spanner/autodiff.hpp"
#include "spanner/encoder.hpp"
#include "spanner/layers.hpp"
#include "spanner/span_detector.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace spanner {

struct ClassDescription {
  std::string name;
  std::string text;

  friend bool operator==(const ClassDescription&, const ClassDescription&) = default;
};

// ConfigError on empty/duplicate names or empty text.
void validate_descriptions(std::span<const ClassDescription> classes);

enum class ClassAggregation {
  kAttention,  // mention-conditioned multi-head attention over the description
  kMeanPool,   // plain average of description token embeddings
};

struct InferenceConfig {
  int hidden = 64;  // must equal the encoder width
  int attention_hidden = 300;
  int heads = 4;
  double attention_dropout = 0.2;
  ClassAggregation aggregation = ClassAggregation::kAttention;
  double init_std = 0.02;

  void validate() const;
  friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

struct InferenceHeads {
  InferenceHeads() = default;
  InferenceHeads(const InferenceConfig& config, std::mt19937_64& rng);

  ParameterList parameters();
  int width() const { return config.hidden; }

  InferenceConfig config;
  ad::Parameter entity;  // h x h, e = entity * x
  Linear query;          // h -> attention_hidden
  Linear key;
  Linear value;
  Linear output;         // attention_hidden -> h
};

struct MentionRepresentation {
  Eigen::RowVectorXd vector;
  SpanCandidate span;
};

struct AttentionResult {
  Eigen::RowVectorXd output;              // adapted class representation, width h
  std::vector<Eigen::VectorXd> weights;   // per head, over description tokens
};

MentionRepresentation mention_representation(const ad::Matrix& embeddings,
                                             const SpanCandidate& span,
                                             const InferenceHeads& heads);

// Description tokens -> K x h via the frozen encoder. Truncated to
// max_length tokens (with a warning).
ad::Matrix encode_class(const ClassDescription& description,
                        const Encoder& frozen_encoder, const Vocabulary& vocab,
                        const TokenizerOptions& options);

AttentionResult class_attention(const MentionRepresentation& mention,
                                const ad::Matrix& class_embeddings,
                                const InferenceHeads& heads);

// Aggregated class representation per the configured aggregation mode.
Eigen::RowVectorXd adapt_class(const MentionRepresentation& mention,
                               const ad::Matrix& class_embeddings,
                               const InferenceHeads& heads);

double class_matching_score(const MentionRepresentation& mention,
                            const Eigen::RowVectorXd& adapted);
double class_probability(const MentionRepresentation& mention,
                         const Eigen::RowVectorXd& adapted);

// Thread-safe memo of description embeddings keyed by description text.
// Valid because the description encoder never changes: callers must pass the
// same frozen encoder and vocabulary on every call.
class ClassEmbeddingCache {
 public:
  explicit ClassEmbeddingCache(TokenizerOptions options) : options_(options) {}

  std::shared_ptr<const ad::Matrix> get(const ClassDescription& description,
                                        const Encoder& frozen_encoder,
                                        const Vocabulary& vocab) const;
  std::size_t size() const;
  void clear();

 private:
  TokenizerOptions options_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const ad::Matrix>> entries_;
};

// A class set with its (cached) description embeddings.
struct ClassSet {
  std::vector<ClassDescription> descriptions;
  std::vector<std::shared_ptr<const ad::Matrix>> embeddings;

  std::size_t size() const { return descriptions.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  std::vector<std::string> names() const;
};

ClassSet make_class_set(std::vector<ClassDescription> descriptions,
                        const ClassEmbeddingCache& cache,
                        const Encoder& frozen_encoder, const Vocabulary& vocab);

// Raw matching scores <e, adapted_c> for every class in the set.
Eigen::VectorXd class_matching_scores(const MentionRepresentation& mention,
                                      const ClassSet& classes,
                                      const InferenceHeads& heads);

// (1/|C|) sum_c BCE(p(c|e), y_c) with y_c = 1 iff c is the gold class;
// nullopt gold means a negative span (all labels 0). DataError if the gold
// class is not in the set.
double entity_loss(const MentionRepresentation& mention, const ClassSet& classes,
                   const std::optional<std::string>& gold_class,
                   const InferenceHeads& heads);

// Graph counterparts used for training.

// M x h mention matrix for the given spans.
ad::Var mention_representations(ad::Tape& tape, const ad::Var& embeddings,
                                std::span<const SpanCandidate> spans,
                                InferenceHeads& heads);

// M x C raw matching scores. class_embeddings holds one K_c x h Var per class
// (constants when cached, or live frozen-encoder outputs). Attention-weight
// dropout is active iff rng is non-null.
ad::Var class_matching_scores(ad::Tape& tape, const ad::Var& mentions,
                              std::span<const ad::Var> class_embeddings,
                              InferenceHeads& heads, std::mt19937_64* rng);

}  // namespace spanner
