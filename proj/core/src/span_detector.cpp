#include "spanner/span_detector.hpp"

#include "spanner/errors.hpp"

#include <algorithm>
#include <iterator>
#include <set>
#include <string>

namespace spanner {
namespace {

void check_bounds(const SpanCandidate& s, int n_tokens) {
  if (s.start < 0 || s.end < s.start || s.end >= n_tokens) {
    throw DataError("span [" + std::to_string(s.start) + ", " +
                    std::to_string(s.end) + "] out of bounds for " +
                    std::to_string(n_tokens) + " tokens");
  }
}

std::vector<SpanCandidate> unique_sorted(std::span<const SpanCandidate> spans) {
  std::vector<SpanCandidate> out(spans.begin(), spans.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Pool of capped spans that are not gold, in (start, end) order.
std::vector<SpanCandidate> negative_pool(int n_tokens,
                                         const std::vector<SpanCandidate>& gold,
                                         int max_span_len) {
  std::vector<SpanCandidate> pool;
  for (const auto& s : enumerate_spans(n_tokens, max_span_len)) {
    if (!std::binary_search(gold.begin(), gold.end(), s)) pool.push_back(s);
  }
  return pool;
}

Eigen::VectorXd boundary_labels(int n, std::span<const SpanCandidate> gold,
                                bool starts) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  for (const auto& s : gold) {
    check_bounds(s, n);
    y(starts ? s.start : s.end) = 1.0;
  }
  return y;
}

}  // namespace

DetectionHeads::DetectionHeads(int hidden, double init_std, std::mt19937_64& rng)
    : start("detection.start", normal_matrix(hidden, 1, init_std, rng)),
      end("detection.end", normal_matrix(hidden, 1, init_std, rng)),
      span("detection.span", normal_matrix(hidden, 1, init_std, rng)) {}

TokenScores score_tokens(const ad::Matrix& embeddings, const DetectionHeads& heads) {
  if (embeddings.cols() != heads.width()) {
    throw ConfigError("score_tokens: embedding width " +
                      std::to_string(embeddings.cols()) +
                      " does not match head width " + std::to_string(heads.width()));
  }
  TokenScores s;
  s.start = embeddings * heads.start.value.col(0);
  s.end = embeddings * heads.end.value.col(0);
  s.span = embeddings * heads.span.value.col(0);
  return s;
}

double token_probability(double score) { return sigmoid(score); }

double span_match_logit(const SpanCandidate& span, const TokenScores& scores) {
  check_bounds(span, scores.size());
  return scores.start(span.start) + scores.end(span.end) +
         scores.span.segment(span.start, span.length()).sum();
}

double span_match_probability(const SpanCandidate& span, const TokenScores& scores) {
  return sigmoid(span_match_logit(span, scores));
}

std::vector<SpanCandidate> enumerate_spans(int n_tokens, int max_span_len) {
  std::vector<SpanCandidate> out;
  for (int i = 0; i < n_tokens; ++i) {
    for (int j = i; j < n_tokens && j - i < max_span_len; ++j) out.push_back({i, j});
  }
  return out;
}

SpanCandidateSets sample_negative_spans(int n_tokens,
                                        std::span<const SpanCandidate> gold,
                                        int max_span_len, std::mt19937_64& rng) {
  for (const auto& s : gold) check_bounds(s, n_tokens);
  SpanCandidateSets sets;
  sets.positives = unique_sorted(gold);
  const auto pool = negative_pool(n_tokens, sets.positives, max_span_len);
  const auto target = static_cast<std::size_t>(
      std::max(0, n_tokens - static_cast<int>(sets.positives.size())));
  if (pool.size() <= target) {
    sets.negatives = pool;
  } else {
    std::sample(pool.begin(), pool.end(), std::back_inserter(sets.negatives),
                target, rng);
  }
  return sets;
}

SpanCandidateSets all_negative_spans(int n_tokens,
                                     std::span<const SpanCandidate> gold,
                                     int max_span_len) {
  for (const auto& s : gold) check_bounds(s, n_tokens);
  SpanCandidateSets sets;
  sets.positives = unique_sorted(gold);
  sets.negatives = negative_pool(n_tokens, sets.positives, max_span_len);
  return sets;
}

std::pair<double, double> start_end_losses(const TokenScores& scores,
                                           std::span<const SpanCandidate> gold) {
  const int n = scores.size();
  if (n == 0) return {0.0, 0.0};
  const Eigen::VectorXd ys = boundary_labels(n, gold, true);
  const Eigen::VectorXd ye = boundary_labels(n, gold, false);
  double ls = 0.0, le = 0.0;
  for (int i = 0; i < n; ++i) {
    ls += bce_with_logit(scores.start(i), ys(i));
    le += bce_with_logit(scores.end(i), ye(i));
  }
  return {ls / n, le / n};
}

double match_loss(const SpanCandidateSets& sets, const TokenScores& scores) {
  const int n = scores.size();
  if (sets.positives.empty() && sets.negatives.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : sets.positives) total += bce_with_logit(span_match_logit(s, scores), 1.0);
  for (const auto& s : sets.negatives) total += bce_with_logit(span_match_logit(s, scores), 0.0);
  return total / n;
}

SpanLosses span_loss(double l_start, double l_end, double l_match) {
  return SpanLosses{l_start, l_end, l_match, l_start + l_end + l_match};
}

TokenScoreVars score_tokens(ad::Tape& tape, const ad::Var& embeddings,
                            DetectionHeads& heads) {
  if (embeddings.cols() != heads.width()) {
    throw ConfigError("score_tokens: embedding width mismatch");
  }
  return TokenScoreVars{ad::matmul(embeddings, tape.parameter(heads.start)),
                        ad::matmul(embeddings, tape.parameter(heads.end)),
                        ad::matmul(embeddings, tape.parameter(heads.span))};
}

ad::Var span_match_logits(const TokenScoreVars& scores,
                          std::span<const SpanCandidate> spans) {
  ad::Tape& tape = *scores.start.tape();
  const int n = static_cast<int>(scores.start.rows());
  const ad::Matrix& st = scores.start.value();
  const ad::Matrix& en = scores.end.value();
  const ad::Matrix& sp = scores.span.value();
  ad::Matrix out(static_cast<Eigen::Index>(spans.size()), 1);
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const auto& s = spans[k];
    check_bounds(s, n);
    out(static_cast<Eigen::Index>(k), 0) =
        st(s.start, 0) + en(s.end, 0) + sp.col(0).segment(s.start, s.length()).sum();
  }
  const int is = scores.start.id(), ie = scores.end.id(), ip = scores.span.id();
  std::vector<SpanCandidate> sv(spans.begin(), spans.end());
  return tape.push(std::move(out), {is, ie, ip},
                   [is, ie, ip, sv = std::move(sv)](ad::Tape& t, int self) {
                     const ad::Matrix& g = t.out_grad(self);
                     const bool gs = t.requires_grad(is), ge = t.requires_grad(ie),
                                gp = t.requires_grad(ip);
                     for (std::size_t k = 0; k < sv.size(); ++k) {
                       const double gk = g(static_cast<Eigen::Index>(k), 0);
                       if (gs) t.grad_buffer(is)(sv[k].start, 0) += gk;
                       if (ge) t.grad_buffer(ie)(sv[k].end, 0) += gk;
                       if (gp) {
                         t.grad_buffer(ip).col(0).segment(sv[k].start, sv[k].length())
                             .array() += gk;
                       }
                     }
                   });
}

SpanLossVars span_loss(const TokenScoreVars& scores, const SpanCandidateSets& sets) {
  ad::Tape& tape = *scores.start.tape();
  const int n = static_cast<int>(scores.start.rows());
  const double inv_n = 1.0 / n;
  std::vector<SpanCandidate> gold = sets.positives;
  const Eigen::VectorXd ys = boundary_labels(n, gold, true);
  const Eigen::VectorXd ye = boundary_labels(n, gold, false);

  SpanLossVars out;
  out.start = ad::scale(ad::bce_with_logits_sum(scores.start, ys), inv_n);
  out.end = ad::scale(ad::bce_with_logits_sum(scores.end, ye), inv_n);

  std::vector<SpanCandidate> spans = sets.positives;
  spans.insert(spans.end(), sets.negatives.begin(), sets.negatives.end());
  if (spans.empty()) {
    out.match = tape.constant(ad::Matrix::Zero(1, 1));
  } else {
    ad::Matrix targets = ad::Matrix::Zero(static_cast<Eigen::Index>(spans.size()), 1);
    targets.topRows(static_cast<Eigen::Index>(sets.positives.size())).setOnes();
    out.match = ad::scale(
        ad::bce_with_logits_sum(span_match_logits(scores, spans), targets), inv_n);
  }
  out.span = ad::add(ad::add(out.start, out.end), out.match);
  return out;
}

}  // namespace spanner
