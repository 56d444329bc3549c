#pragma once

// Inference-time decoding. Spans are the consensus of the start, end and
// match predictions; classes come either from independent sigmoid decisions
// (few-shot) or from a softmax over the class set combined with the match
// probability and compared against a threshold gamma (zero-shot).

#include "spanner/class_inference.hpp"
#include "spanner/dataset.hpp"
#include "spanner/model.hpp"
#include "spanner/span_detector.hpp"

#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace spanner {

enum class OverlapPolicy { kFlatGreedy, kAllowNested };
enum class DecodeMode { kFewShot, kZeroShot };

struct DecodingConfig {
  static constexpr double kGammaConll = -0.4;
  static constexpr double kGammaWnut = -0.5;

  double boundary_threshold = 0.5;  // p_start / p_end
  double match_threshold = 0.5;
  double class_threshold = 0.5;     // few-shot decision boundary
  double gamma = kGammaConll;       // zero-shot joint-score threshold
  int max_span_length = 10;
  OverlapPolicy overlap = OverlapPolicy::kFlatGreedy;

  // ConfigError on NaN thresholds or max_span_length < 1. Gamma may be +-inf.
  void validate() const;
};

struct ScoredSpan {
  SpanCandidate span;
  double match_logit = 0.0;
  double p_match = 0.0;
};

// S = {i : p_start(i) > t}, E = {j : p_end(j) > t}; every (i, j) in S x E with
// i <= j and j - i < max_span_length whose p_match exceeds the match
// threshold, ordered by (start, end).
std::vector<ScoredSpan> extract_consensus_spans(const TokenScores& scores,
                                                const DecodingConfig& config);

struct TypedSpanPrediction {
  SpanCandidate span;
  std::string label;
  double p_match = 0.0;
  double class_score = 0.0;  // sigmoid (few-shot) or softmax (zero-shot) score
  double joint_score = 0.0;  // log p_match + log class_score
};

// raw_scores(k, c) is the matching score of spans[k] against class c.
std::vector<TypedSpanPrediction> decode_few_shot(std::span<const ScoredSpan> spans,
                                                 const Eigen::MatrixXd& raw_scores,
                                                 std::span<const std::string> classes,
                                                 const DecodingConfig& config);
std::vector<TypedSpanPrediction> decode_zero_shot(std::span<const ScoredSpan> spans,
                                                  const Eigen::MatrixXd& raw_scores,
                                                  std::span<const std::string> classes,
                                                  const DecodingConfig& config);

// Flat-greedy: highest joint score first, drop anything overlapping a kept
// span; result ordered by span. Allow-nested: identity.
std::vector<TypedSpanPrediction> resolve_overlaps(std::vector<TypedSpanPrediction> predictions,
                                                  OverlapPolicy policy);

// Everything decoding needs from the model for one sentence, so that
// thresholds can be swept without re-running the encoder.
struct ScoredSentence {
  std::vector<ScoredSpan> spans;
  Eigen::MatrixXd class_scores;  // spans x classes, raw matching scores
  int token_count = 0;
};

ScoredSentence score_sentence(const SpanNerModel& model, std::span<const std::string> tokens,
                              const ClassSet& classes, const DecodingConfig& config);
std::vector<ScoredSentence> score_corpus(const SpanNerModel& model, const Dataset& data,
                                         const ClassSet& classes,
                                         const DecodingConfig& config);

std::vector<TypedSpanPrediction> decode(const ScoredSentence& scored,
                                        std::span<const std::string> classes,
                                        DecodeMode mode, const DecodingConfig& config);

// Class probabilities for a given span, used when spans come from elsewhere
// (gold-span evaluation). Returns the raw matching scores.
Eigen::VectorXd score_span_classes(const SpanNerModel& model,
                                   std::span<const std::string> tokens,
                                   const SpanCandidate& span, const ClassSet& classes);

// {"tokens": [...], "spans": [{"start", "end", "class", "score"}]} per line;
// score is the joint score.
void write_predictions_jsonl(std::ostream& out, const Dataset& data,
                             const std::vector<std::vector<TypedSpanPrediction>>& predictions);
// Dataset whose spans are the predictions (for BIO output).
Dataset predictions_to_dataset(const Dataset& data,
                               const std::vector<std::vector<TypedSpanPrediction>>& predictions);

}  // namespace spanner
