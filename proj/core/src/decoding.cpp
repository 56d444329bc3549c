#include "spanner/decoding.hpp"

#include "spanner/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>

namespace spanner {
namespace {

void check_scores(std::span<const ScoredSpan> spans, const Eigen::MatrixXd& raw,
                  std::span<const std::string> classes) {
  if (classes.empty()) throw ConfigError("decoding needs at least one class");
  if (raw.rows() != static_cast<Eigen::Index>(spans.size()) ||
      raw.cols() != static_cast<Eigen::Index>(classes.size())) {
    throw std::invalid_argument("class score matrix does not match spans x classes");
  }
}

}  // namespace

void DecodingConfig::validate() const {
  for (double t : {boundary_threshold, match_threshold, class_threshold}) {
    if (!std::isfinite(t)) throw ConfigError("decoding thresholds must be finite");
  }
  if (std::isnan(gamma)) throw ConfigError("gamma must not be NaN");
  if (max_span_length < 1) throw ConfigError("max span length must be >= 1");
}

std::vector<ScoredSpan> extract_consensus_spans(const TokenScores& scores,
                                                const DecodingConfig& config) {
  const int n = scores.size();
  std::vector<int> starts, ends;
  for (int i = 0; i < n; ++i) {
    if (token_probability(scores.start(i)) > config.boundary_threshold) starts.push_back(i);
    if (token_probability(scores.end(i)) > config.boundary_threshold) ends.push_back(i);
  }
  std::vector<ScoredSpan> out;
  for (int i : starts) {
    for (int j : ends) {
      if (j < i || j - i >= config.max_span_length) continue;
      const SpanCandidate span{i, j};
      const double logit = span_match_logit(span, scores);
      const double p = sigmoid(logit);
      if (p > config.match_threshold) out.push_back({span, logit, p});
    }
  }
  return out;
}

std::vector<TypedSpanPrediction> decode_few_shot(std::span<const ScoredSpan> spans,
                                                 const Eigen::MatrixXd& raw_scores,
                                                 std::span<const std::string> classes,
                                                 const DecodingConfig& config) {
  check_scores(spans, raw_scores, classes);
  std::vector<TypedSpanPrediction> out;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    int best = -1;
    double best_p = 0.0;
    for (Eigen::Index c = 0; c < raw_scores.cols(); ++c) {
      const double p = sigmoid(raw_scores(static_cast<Eigen::Index>(k), c));
      if (p > config.class_threshold && (best < 0 || p > best_p)) {
        best = static_cast<int>(c);
        best_p = p;
      }
    }
    if (best < 0) continue;
    const double raw = raw_scores(static_cast<Eigen::Index>(k), best);
    out.push_back({spans[k].span, classes[best], spans[k].p_match, best_p,
                   log_sigmoid(spans[k].match_logit) + log_sigmoid(raw)});
  }
  return out;
}

std::vector<TypedSpanPrediction> decode_zero_shot(std::span<const ScoredSpan> spans,
                                                  const Eigen::MatrixXd& raw_scores,
                                                  std::span<const std::string> classes,
                                                  const DecodingConfig& config) {
  check_scores(spans, raw_scores, classes);
  std::vector<TypedSpanPrediction> out;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const Eigen::RowVectorXd row = raw_scores.row(static_cast<Eigen::Index>(k));
    Eigen::Index best = 0;
    const double top = row.maxCoeff(&best);
    const double log_norm = top + std::log((row.array() - top).exp().sum());
    const double log_softmax = row(best) - log_norm;
    const double joint = log_sigmoid(spans[k].match_logit) + log_softmax;
    if (!(joint > config.gamma)) continue;
    out.push_back({spans[k].span, classes[best], spans[k].p_match, std::exp(log_softmax),
                   joint});
  }
  return out;
}

std::vector<TypedSpanPrediction> resolve_overlaps(std::vector<TypedSpanPrediction> predictions,
                                                  OverlapPolicy policy) {
  if (policy == OverlapPolicy::kAllowNested) return predictions;
  std::stable_sort(predictions.begin(), predictions.end(),
                   [](const TypedSpanPrediction& a, const TypedSpanPrediction& b) {
                     if (a.joint_score != b.joint_score) return a.joint_score > b.joint_score;
                     return a.span < b.span;
                   });
  std::vector<TypedSpanPrediction> kept;
  for (auto& p : predictions) {
    const bool clash = std::any_of(kept.begin(), kept.end(), [&](const auto& k) {
      return k.span.overlaps(p.span);
    });
    if (!clash) kept.push_back(std::move(p));
  }
  std::sort(kept.begin(), kept.end(),
            [](const auto& a, const auto& b) { return a.span < b.span; });
  return kept;
}

ScoredSentence score_sentence(const SpanNerModel& model, std::span<const std::string> tokens,
                              const ClassSet& classes, const DecodingConfig& config) {
  ScoredSentence out;
  out.class_scores.resize(0, static_cast<Eigen::Index>(classes.size()));
  if (tokens.empty()) return out;
  const TokenSequence seq = model.tokenize(tokens);
  out.token_count = static_cast<int>(seq.size());
  const ad::Matrix emb = model.encode(seq);
  const TokenScores scores = score_tokens(emb, model.detection());
  out.spans = extract_consensus_spans(scores, config);
  out.class_scores.resize(static_cast<Eigen::Index>(out.spans.size()),
                          static_cast<Eigen::Index>(classes.size()));
  for (std::size_t k = 0; k < out.spans.size(); ++k) {
    const MentionRepresentation mention =
        mention_representation(emb, out.spans[k].span, model.inference());
    out.class_scores.row(static_cast<Eigen::Index>(k)) =
        class_matching_scores(mention, classes, model.inference()).transpose();
  }
  return out;
}

std::vector<ScoredSentence> score_corpus(const SpanNerModel& model, const Dataset& data,
                                         const ClassSet& classes,
                                         const DecodingConfig& config) {
  config.validate();
  std::vector<ScoredSentence> out;
  out.reserve(data.size());
  for (const auto& s : data.sentences) {
    out.push_back(score_sentence(model, s.tokens, classes, config));
  }
  return out;
}

std::vector<TypedSpanPrediction> decode(const ScoredSentence& scored,
                                        std::span<const std::string> classes,
                                        DecodeMode mode, const DecodingConfig& config) {
  auto typed = mode == DecodeMode::kFewShot
                   ? decode_few_shot(scored.spans, scored.class_scores, classes, config)
                   : decode_zero_shot(scored.spans, scored.class_scores, classes, config);
  return resolve_overlaps(std::move(typed), config.overlap);
}

Eigen::VectorXd score_span_classes(const SpanNerModel& model,
                                   std::span<const std::string> tokens,
                                   const SpanCandidate& span, const ClassSet& classes) {
  const ad::Matrix emb = model.encode(model.tokenize(tokens));
  return class_matching_scores(mention_representation(emb, span, model.inference()),
                               classes, model.inference());
}

void write_predictions_jsonl(std::ostream& out, const Dataset& data,
                             const std::vector<std::vector<TypedSpanPrediction>>& predictions) {
  if (predictions.size() != data.size()) {
    throw std::invalid_argument("one prediction list per sentence expected");
  }
  for (std::size_t s = 0; s < data.size(); ++s) {
    nlohmann::json line;
    line["tokens"] = data.sentences[s].tokens;
    line["spans"] = nlohmann::json::array();
    for (const auto& p : predictions[s]) {
      line["spans"].push_back({{"start", p.span.start},
                               {"end", p.span.end},
                               {"class", p.label},
                               {"score", p.joint_score}});
    }
    out << line.dump() << '\n';
  }
}

Dataset predictions_to_dataset(const Dataset& data,
                               const std::vector<std::vector<TypedSpanPrediction>>& predictions) {
  if (predictions.size() != data.size()) {
    throw std::invalid_argument("one prediction list per sentence expected");
  }
  Dataset out;
  out.split = data.split;
  for (std::size_t s = 0; s < data.size(); ++s) {
    Sentence sentence{data.sentences[s].tokens, {}};
    for (const auto& p : predictions[s]) {
      sentence.spans.push_back({p.span.start, p.span.end, p.label});
    }
    out.sentences.push_back(std::move(sentence));
  }
  out.refresh_classes();
  return out;
}

}  // namespace spanner
