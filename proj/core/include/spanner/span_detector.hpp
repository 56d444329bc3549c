#pragma once

// Class-agnostic span detection: per-token start/end/membership scores,
// span-match probability, negative span sampling and the span loss
// L_span = L_start + L_end + L_match.

#include "spanner/autodiff.hpp"
#include "spanner/layers.hpp"

#include <compare>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace spanner {

// Inclusive token range [start, end].
struct SpanCandidate {
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  bool overlaps(const SpanCandidate& o) const {
    return start <= o.end && o.start <= end;
  }
  friend auto operator<=>(const SpanCandidate&, const SpanCandidate&) = default;
};

// Linear scorers over token embeddings; each weight is an h x 1 column.
struct DetectionHeads {
  DetectionHeads() = default;
  DetectionHeads(int hidden, double init_std, std::mt19937_64& rng);

  int width() const { return static_cast<int>(start.value.rows()); }
  ParameterList parameters() { return {&start, &end, &span}; }

  ad::Parameter start;
  ad::Parameter end;
  ad::Parameter span;
};

struct TokenScores {
  Eigen::VectorXd start;
  Eigen::VectorXd end;
  Eigen::VectorXd span;

  int size() const { return static_cast<int>(start.size()); }
};

struct SpanCandidateSets {
  std::vector<SpanCandidate> positives;
  std::vector<SpanCandidate> negatives;
};

struct SpanLosses {
  double start = 0.0;
  double end = 0.0;
  double match = 0.0;
  double span = 0.0;
};

// s(i) = <w, x_i> for each of the three heads. ConfigError on width mismatch.
TokenScores score_tokens(const ad::Matrix& embeddings, const DetectionHeads& heads);

// sigmoid(score), saturating without overflow.
double token_probability(double score);

// s_start(i) + s_end(j) + sum_{t=i..j} s_span(t). DataError if out of bounds.
double span_match_logit(const SpanCandidate& span, const TokenScores& scores);
double span_match_probability(const SpanCandidate& span, const TokenScores& scores);

// All (i, j) with i <= j < n_tokens and j - i < max_span_len.
std::vector<SpanCandidate> enumerate_spans(int n_tokens, int max_span_len);

// Positives are the de-duplicated gold spans. Negatives are drawn uniformly
// without replacement from the length-capped pool minus gold; the target size
// is max(0, n_tokens - |positives|), or the whole pool if it is smaller.
SpanCandidateSets sample_negative_spans(int n_tokens,
                                        std::span<const SpanCandidate> gold,
                                        int max_span_len, std::mt19937_64& rng);

// Every non-gold span of the capped pool (the "no sampling" ablation).
SpanCandidateSets all_negative_spans(int n_tokens,
                                     std::span<const SpanCandidate> gold,
                                     int max_span_len);

// Mean BCE of start (resp. end) probabilities against gold boundary labels.
std::pair<double, double> start_end_losses(const TokenScores& scores,
                                           std::span<const SpanCandidate> gold);

// -(1/N) [sum_pos log p_match + sum_neg log(1 - p_match)], N = token count.
double match_loss(const SpanCandidateSets& sets, const TokenScores& scores);

SpanLosses span_loss(double l_start, double l_end, double l_match);

// Graph counterparts used for training.
struct TokenScoreVars {
  ad::Var start;  // N x 1
  ad::Var end;
  ad::Var span;
};

struct SpanLossVars {
  ad::Var start;
  ad::Var end;
  ad::Var match;
  ad::Var span;
};

TokenScoreVars score_tokens(ad::Tape& tape, const ad::Var& embeddings,
                            DetectionHeads& heads);

// M x 1 match logits for the given spans.
ad::Var span_match_logits(const TokenScoreVars& scores,
                          std::span<const SpanCandidate> spans);

SpanLossVars span_loss(const TokenScoreVars& scores,
                       const SpanCandidateSets& sets);

}  // namespace spanner
