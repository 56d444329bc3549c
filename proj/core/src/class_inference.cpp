#include "spanner/class_inference.hpp"

#include "spanner/errors.hpp"

#include <cmath>
#include <set>

namespace spanner {

void validate_descriptions(std::span<const ClassDescription> classes) {
  std::set<std::string> seen;
  for (const auto& c : classes) {
    if (c.name.empty()) throw ConfigError("class description with empty name");
    if (split_whitespace(c.text).empty()) {
      throw ConfigError("class '" + c.name + "' has an empty description");
    }
    if (!seen.insert(c.name).second) {
      throw ConfigError("duplicate class name: " + c.name);
    }
  }
}

void InferenceConfig::validate() const {
  if (hidden <= 0 || attention_hidden <= 0 || heads <= 0) {
    throw ConfigError("inference config: sizes must be positive");
  }
  if (attention_hidden % heads != 0) {
    throw ConfigError("inference config: heads must divide attention hidden width");
  }
  if (attention_dropout < 0.0 || attention_dropout >= 1.0) {
    throw ConfigError("inference config: attention dropout must be in [0, 1)");
  }
}

InferenceHeads::InferenceHeads(const InferenceConfig& cfg, std::mt19937_64& rng)
    : config(cfg) {
  config.validate();
  const int h = config.hidden, a = config.attention_hidden;
  const double sd = config.init_std;
  entity = ad::Parameter("inference.entity", normal_matrix(h, h, sd, rng));
  query = Linear("inference.attention.query", h, a, sd, rng);
  key = Linear("inference.attention.key", h, a, sd, rng);
  value = Linear("inference.attention.value", h, a, sd, rng);
  output = Linear("inference.attention.output", a, h, sd, rng);
}

ParameterList InferenceHeads::parameters() {
  return {&entity,       &query.weight, &query.bias,  &key.weight,   &key.bias,
          &value.weight, &value.bias,   &output.weight, &output.bias};
}

MentionRepresentation mention_representation(const ad::Matrix& embeddings,
                                             const SpanCandidate& span,
                                             const InferenceHeads& heads) {
  const int n = static_cast<int>(embeddings.rows());
  if (span.start < 0 || span.end < span.start || span.end >= n) {
    throw DataError("mention span [" + std::to_string(span.start) + ", " +
                    std::to_string(span.end) + "] out of bounds for " +
                    std::to_string(n) + " tokens");
  }
  if (embeddings.cols() != heads.width()) {
    throw ConfigError("mention_representation: width mismatch");
  }
  const Eigen::RowVectorXd mean =
      embeddings.middleRows(span.start, span.length()).colwise().mean();
  return MentionRepresentation{mean * heads.entity.value.transpose(), span};
}

ad::Matrix encode_class(const ClassDescription& description,
                        const Encoder& frozen_encoder, const Vocabulary& vocab,
                        const TokenizerOptions& options) {
  const TokenSequence tokens = tokenize(description.text, vocab, options);
  if (tokens.ids.empty()) {
    throw DataError("class '" + description.name + "' has an empty description");
  }
  return frozen_encoder.encode(tokens);
}

AttentionResult class_attention(const MentionRepresentation& mention,
                                const ad::Matrix& class_embeddings,
                                const InferenceHeads& heads) {
  const auto& cfg = heads.config;
  if (mention.vector.size() != cfg.hidden || class_embeddings.cols() != cfg.hidden) {
    throw ConfigError("class_attention: width mismatch");
  }
  const ad::Matrix q = heads.query.apply(mention.vector);
  const ad::Matrix k = heads.key.apply(class_embeddings);
  const ad::Matrix v = heads.value.apply(class_embeddings);
  const int hw = cfg.attention_hidden / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hw));

  AttentionResult result;
  ad::Matrix concat(1, cfg.attention_hidden);
  for (int h = 0; h < cfg.heads; ++h) {
    const int off = h * hw;
    Eigen::VectorXd logits =
        k.middleCols(off, hw) * q.row(0).segment(off, hw).transpose() * scale;
    Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
    w /= w.sum();
    concat.row(0).segment(off, hw) = w.transpose() * v.middleCols(off, hw);
    result.weights.push_back(std::move(w));
  }
  result.output = heads.output.apply(concat).row(0);
  return result;
}

Eigen::RowVectorXd adapt_class(const MentionRepresentation& mention,
                               const ad::Matrix& class_embeddings,
                               const InferenceHeads& heads) {
  if (heads.config.aggregation == ClassAggregation::kMeanPool) {
    if (class_embeddings.cols() != heads.width()) {
      throw ConfigError("adapt_class: width mismatch");
    }
    return class_embeddings.colwise().mean();
  }
  return class_attention(mention, class_embeddings, heads).output;
}

double class_matching_score(const MentionRepresentation& mention,
                            const Eigen::RowVectorXd& adapted) {
  if (mention.vector.size() != adapted.size()) {
    throw ConfigError("class_matching_score: width mismatch");
  }
  return mention.vector.dot(adapted);
}

double class_probability(const MentionRepresentation& mention,
                         const Eigen::RowVectorXd& adapted) {
  return sigmoid(class_matching_score(mention, adapted));
}

std::shared_ptr<const ad::Matrix> ClassEmbeddingCache::get(
    const ClassDescription& description, const Encoder& frozen_encoder,
    const Vocabulary& vocab) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(description.text); it != entries_.end()) {
      return it->second;
    }
  }
  auto computed = std::make_shared<const ad::Matrix>(
      encode_class(description, frozen_encoder, vocab, options_));
  std::lock_guard lock(mutex_);
  // First writer wins so every reader sees the same object.
  return entries_.try_emplace(description.text, std::move(computed)).first->second;
}

std::size_t ClassEmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void ClassEmbeddingCache::clear() {
  std::lock_guard lock(mutex_);
  entries_.clear();
}

std::optional<std::size_t> ClassSet::index_of(const std::string& name) const {
  for (std::size_t k = 0; k < descriptions.size(); ++k) {
    if (descriptions[k].name == name) return k;
  }
  return std::nullopt;
}

std::vector<std::string> ClassSet::names() const {
  std::vector<std::string> out;
  for (const auto& d : descriptions) out.push_back(d.name);
  return out;
}

ClassSet make_class_set(std::vector<ClassDescription> descriptions,
                        const ClassEmbeddingCache& cache,
                        const Encoder& frozen_encoder, const Vocabulary& vocab) {
  validate_descriptions(descriptions);
  ClassSet set;
  for (const auto& d : descriptions) {
    set.embeddings.push_back(cache.get(d, frozen_encoder, vocab));
  }
  set.descriptions = std::move(descriptions);
  return set;
}

Eigen::VectorXd class_matching_scores(const MentionRepresentation& mention,
                                      const ClassSet& classes,
                                      const InferenceHeads& heads) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(classes.size()));
  for (std::size_t c = 0; c < classes.size(); ++c) {
    out(static_cast<Eigen::Index>(c)) = class_matching_score(
        mention, adapt_class(mention, *classes.embeddings[c], heads));
  }
  return out;
}

double entity_loss(const MentionRepresentation& mention, const ClassSet& classes,
                   const std::optional<std::string>& gold_class,
                   const InferenceHeads& heads) {
  if (classes.size() == 0) throw ConfigError("entity_loss: empty class set");
  std::optional<std::size_t> gold;
  if (gold_class) {
    gold = classes.index_of(*gold_class);
    if (!gold) throw DataError("gold class '" + *gold_class + "' not in class set");
  }
  const Eigen::VectorXd scores = class_matching_scores(mention, classes, heads);
  double total = 0.0;
  for (Eigen::Index c = 0; c < scores.size(); ++c) {
    const double y = gold && static_cast<std::size_t>(c) == *gold ? 1.0 : 0.0;
    total += bce_with_logit(scores(c), y);
  }
  return total / static_cast<double>(scores.size());
}

ad::Var mention_representations(ad::Tape& tape, const ad::Var& embeddings,
                                std::span<const SpanCandidate> spans,
                                InferenceHeads& heads) {
  std::vector<std::pair<int, int>> ranges;
  ranges.reserve(spans.size());
  for (const auto& s : spans) ranges.emplace_back(s.start, s.end);
  return ad::matmul_nt(ad::range_means(embeddings, ranges),
                       tape.parameter(heads.entity));
}

ad::Var class_matching_scores(ad::Tape& tape, const ad::Var& mentions,
                              std::span<const ad::Var> class_embeddings,
                              InferenceHeads& heads, std::mt19937_64* rng) {
  if (class_embeddings.empty()) throw ConfigError("empty class set");
  const auto& cfg = heads.config;
  std::vector<ad::Var> columns;
  columns.reserve(class_embeddings.size());
  if (cfg.aggregation == ClassAggregation::kMeanPool) {
    for (const ad::Var& emb : class_embeddings) {
      columns.push_back(ad::matmul_nt(mentions, ad::mean_rows(emb)));
    }
  } else {
    const ad::Var q = heads.query(tape, mentions);
    const double rate = rng != nullptr ? cfg.attention_dropout : 0.0;
    for (const ad::Var& emb : class_embeddings) {
      ad::Var attended = multi_head_attention(
          q, heads.key(tape, emb), heads.value(tape, emb), cfg.heads, rate, rng);
      columns.push_back(ad::rowwise_dot(mentions, heads.output(tape, attended)));
    }
  }
  if (columns.size() == 1) return columns.front();
  return ad::concat_cols(columns);
}

}  // namespace spanner
