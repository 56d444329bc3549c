#pragma once

// Exact-match span-level precision / recall / F1, micro and per class, with
// mean and population standard deviation over repeated runs.

#include "spanner/decoding.hpp"

#include <compare>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace spanner {

struct LabeledSpan {
  int sentence = 0;
  int start = 0;
  int end = 0;
  std::string label;

  friend auto operator<=>(const LabeledSpan&, const LabeledSpan&) = default;
};

// Counts are doubles so that aggregated reports can carry means.
struct PRF {
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static PRF from_counts(double tp, double fp, double fn);
};

struct MetricSpread {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  PRF micro;
  std::map<std::string, PRF> per_class;
  int runs = 1;
  MetricSpread micro_std;
  std::map<std::string, MetricSpread> per_class_std;
};

// Both inputs are treated as sets.
EvalReport span_f1(std::span<const LabeledSpan> predicted, std::span<const LabeledSpan> gold);

// Mean and population std of every metric. Per-class entries are averaged
// over the reports that contain the class. ConfigError on an empty list.
EvalReport aggregate_runs(std::span<const EvalReport> reports);

std::vector<LabeledSpan> gold_spans(const Dataset& data);
std::vector<LabeledSpan> to_labeled_spans(
    const std::vector<std::vector<TypedSpanPrediction>>& predictions);

struct Evaluation {
  EvalReport report;
  std::vector<std::vector<TypedSpanPrediction>> predictions;
};

Evaluation evaluate(const SpanNerModel& model, const Dataset& data, const ClassSet& classes,
                    DecodeMode mode, const DecodingConfig& config);
// Decodes precomputed scores; gold taken from data.
Evaluation evaluate_scored(const std::vector<ScoredSentence>& scored, const Dataset& data,
                           std::span<const std::string> classes, DecodeMode mode,
                           const DecodingConfig& config);

// Label for a gold span, or nullopt to abstain (counted as a miss).
using SpanClassifier =
    std::function<std::optional<std::string>(std::size_t sentence, const SpanAnnotation&)>;

// Bypasses span detection: every gold span is classified and scored as a
// prediction at the gold boundaries. DataError "no gold spans" if the dataset
// has none.
EvalReport evaluate_class_inference_with_gold_spans(const Dataset& data,
                                                    const SpanClassifier& classify);
// Model classifier: few-shot uses the class decision boundary (abstaining if
// no class passes), zero-shot the softmax argmax.
EvalReport evaluate_class_inference_with_gold_spans(const Dataset& data,
                                                    const SpanNerModel& model,
                                                    const ClassSet& classes, DecodeMode mode,
                                                    const DecodingConfig& config);

// One zero-shot evaluation per gamma over precomputed scores. ConfigError on
// an empty grid.
std::vector<std::pair<double, double>> threshold_sweep(
    const std::vector<ScoredSentence>& scored, const Dataset& data,
    std::span<const std::string> classes, std::span<const double> gammas,
    const DecodingConfig& config);
// "gamma,f1" rows.
std::string sweep_csv(std::span<const std::pair<double, double>> rows);

// Gamma with the best micro F1 (first one on ties).
double best_gamma(std::span<const std::pair<double, double>> rows);

// Plain-text table: one row per class plus the micro row.
std::string format_report(const EvalReport& report);

}  // namespace spanner
