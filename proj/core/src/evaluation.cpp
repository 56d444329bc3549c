#include "spanner/evaluation.hpp"

#include "spanner/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace spanner {
namespace {

double safe_div(double a, double b) { return b > 0.0 ? a / b : 0.0; }

// Two-pass population std.
std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

std::pair<PRF, MetricSpread> aggregate(const std::vector<const PRF*>& items) {
  std::vector<double> tp, fp, fn, p, r, f;
  for (const PRF* x : items) {
    tp.push_back(x->tp);
    fp.push_back(x->fp);
    fn.push_back(x->fn);
    p.push_back(x->precision);
    r.push_back(x->recall);
    f.push_back(x->f1);
  }
  PRF mean;
  MetricSpread spread;
  mean.tp = mean_std(tp).first;
  mean.fp = mean_std(fp).first;
  mean.fn = mean_std(fn).first;
  std::tie(mean.precision, spread.precision) = mean_std(p);
  std::tie(mean.recall, spread.recall) = mean_std(r);
  std::tie(mean.f1, spread.f1) = mean_std(f);
  return {mean, spread};
}

}  // namespace

PRF PRF::from_counts(double tp, double fp, double fn) {
  PRF out;
  out.tp = tp;
  out.fp = fp;
  out.fn = fn;
  out.precision = safe_div(tp, tp + fp);
  out.recall = safe_div(tp, tp + fn);
  out.f1 = safe_div(2.0 * out.precision * out.recall, out.precision + out.recall);
  return out;
}

EvalReport span_f1(std::span<const LabeledSpan> predicted, std::span<const LabeledSpan> gold) {
  const std::set<LabeledSpan> pred(predicted.begin(), predicted.end());
  const std::set<LabeledSpan> truth(gold.begin(), gold.end());
  struct Counts {
    double tp = 0, fp = 0, fn = 0;
  };
  std::map<std::string, Counts> per;
  Counts all;
  for (const auto& p : pred) {
    if (truth.contains(p)) {
      ++per[p.label].tp;
      ++all.tp;
    } else {
      ++per[p.label].fp;
      ++all.fp;
    }
  }
  for (const auto& g : truth) {
    if (!pred.contains(g)) {
      ++per[g.label].fn;
      ++all.fn;
    }
  }
  EvalReport report;
  report.micro = PRF::from_counts(all.tp, all.fp, all.fn);
  for (const auto& [label, c] : per) {
    report.per_class[label] = PRF::from_counts(c.tp, c.fp, c.fn);
    report.per_class_std[label] = {};
  }
  return report;
}

EvalReport aggregate_runs(std::span<const EvalReport> reports) {
  if (reports.empty()) throw ConfigError("aggregate_runs needs at least one report");
  EvalReport out;
  out.runs = static_cast<int>(reports.size());
  std::vector<const PRF*> micro;
  std::map<std::string, std::vector<const PRF*>> per;
  for (const auto& r : reports) {
    micro.push_back(&r.micro);
    for (const auto& [label, prf] : r.per_class) per[label].push_back(&prf);
  }
  std::tie(out.micro, out.micro_std) = aggregate(micro);
  for (const auto& [label, items] : per) {
    std::tie(out.per_class[label], out.per_class_std[label]) = aggregate(items);
  }
  return out;
}

std::vector<LabeledSpan> gold_spans(const Dataset& data) {
  std::vector<LabeledSpan> out;
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (const auto& a : data.sentences[s].spans) {
      out.push_back({static_cast<int>(s), a.start, a.end, a.label});
    }
  }
  return out;
}

std::vector<LabeledSpan> to_labeled_spans(
    const std::vector<std::vector<TypedSpanPrediction>>& predictions) {
  std::vector<LabeledSpan> out;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    for (const auto& p : predictions[s]) {
      out.push_back({static_cast<int>(s), p.span.start, p.span.end, p.label});
    }
  }
  return out;
}

Evaluation evaluate_scored(const std::vector<ScoredSentence>& scored, const Dataset& data,
                           std::span<const std::string> classes, DecodeMode mode,
                           const DecodingConfig& config) {
  if (scored.size() != data.size()) {
    throw std::invalid_argument("scored corpus does not match dataset");
  }
  Evaluation out;
  out.predictions.reserve(scored.size());
  for (const auto& s : scored) out.predictions.push_back(decode(s, classes, mode, config));
  const auto pred = to_labeled_spans(out.predictions);
  const auto gold = gold_spans(data);
  out.report = span_f1(pred, gold);
  return out;
}

Evaluation evaluate(const SpanNerModel& model, const Dataset& data, const ClassSet& classes,
                    DecodeMode mode, const DecodingConfig& config) {
  const auto scored = score_corpus(model, data, classes, config);
  return evaluate_scored(scored, data, classes.names(), mode, config);
}

EvalReport evaluate_class_inference_with_gold_spans(const Dataset& data,
                                                    const SpanClassifier& classify) {
  std::vector<LabeledSpan> pred;
  const auto gold = gold_spans(data);
  if (gold.empty()) throw DataError("no gold spans");
  for (const auto& g : gold) {
    const auto& sentence = data.sentences[static_cast<std::size_t>(g.sentence)];
    const auto it = std::find_if(sentence.spans.begin(), sentence.spans.end(),
                                 [&](const SpanAnnotation& a) {
                                   return a.start == g.start && a.end == g.end;
                                 });
    if (auto label = classify(static_cast<std::size_t>(g.sentence), *it)) {
      pred.push_back({g.sentence, g.start, g.end, *label});
    }
  }
  return span_f1(pred, gold);
}

EvalReport evaluate_class_inference_with_gold_spans(const Dataset& data,
                                                    const SpanNerModel& model,
                                                    const ClassSet& classes, DecodeMode mode,
                                                    const DecodingConfig& config) {
  const auto names = classes.names();
  auto classify = [&](std::size_t s,
                      const SpanAnnotation& a) -> std::optional<std::string> {
    const Eigen::VectorXd raw =
        score_span_classes(model, data.sentences[s].tokens, a.span(), classes);
    Eigen::Index best = 0;
    const double top = raw.maxCoeff(&best);
    if (mode == DecodeMode::kFewShot && !(sigmoid(top) > config.class_threshold)) {
      return std::nullopt;
    }
    return names[static_cast<std::size_t>(best)];
  };
  return evaluate_class_inference_with_gold_spans(data, classify);
}

std::vector<std::pair<double, double>> threshold_sweep(
    const std::vector<ScoredSentence>& scored, const Dataset& data,
    std::span<const std::string> classes, std::span<const double> gammas,
    const DecodingConfig& config) {
  if (gammas.empty()) throw ConfigError("gamma grid is empty");
  std::vector<std::pair<double, double>> rows;
  DecodingConfig c = config;
  for (double g : gammas) {
    c.gamma = g;
    rows.emplace_back(g, evaluate_scored(scored, data, classes, DecodeMode::kZeroShot, c)
                             .report.micro.f1);
  }
  return rows;
}

std::string sweep_csv(std::span<const std::pair<double, double>> rows) {
  std::ostringstream out;
  out << "gamma,f1\n";
  out.precision(10);
  for (const auto& [g, f] : rows) out << g << ',' << f << '\n';
  return out.str();
}

double best_gamma(std::span<const std::pair<double, double>> rows) {
  if (rows.empty()) throw ConfigError("gamma grid is empty");
  auto best = rows.front();
  for (const auto& r : rows) {
    if (r.second > best.second) best = r;
  }
  return best.first;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %9s %9s %9s %8s %8s %8s\n", "class", "precision",
                "recall", "f1", "tp", "fp", "fn");
  out << line;
  auto row = [&](const std::string& name, const PRF& p, const MetricSpread* sd) {
    if (report.runs > 1 && sd != nullptr) {
      std::snprintf(line, sizeof line,
                    "%-24s %9.4f %9.4f %9.4f %8.1f %8.1f %8.1f  (f1 std %.4f)\n",
                    name.c_str(), p.precision, p.recall, p.f1, p.tp, p.fp, p.fn, sd->f1);
    } else {
      std::snprintf(line, sizeof line, "%-24s %9.4f %9.4f %9.4f %8.0f %8.0f %8.0f\n",
                    name.c_str(), p.precision, p.recall, p.f1, p.tp, p.fp, p.fn);
    }
    out << line;
  };
  for (const auto& [label, prf] : report.per_class) {
    const auto it = report.per_class_std.find(label);
    row(label, prf, it == report.per_class_std.end() ? nullptr : &it->second);
  }
  row("micro", report.micro, &report.micro_std);
  if (report.runs > 1) out << "runs: " << report.runs << '\n';
  return out.str();
}

}  // namespace spanner
