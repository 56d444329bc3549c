#include "spanner/training.hpp"

#include "spanner/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace spanner {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Independent stream per (seed, purpose, a, b).
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint32_t purpose,
                            std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    purpose,
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

enum Purpose : std::uint32_t { kShuffle = 1, kNegatives = 2, kDropout = 3 };

std::vector<ClassDescription> training_classes(const Dataset& data,
                                               const std::vector<ClassDescription>& descs) {
  std::set<std::string> have;
  for (const auto& d : descs) have.insert(d.name);
  for (const auto& c : data.classes) {
    if (!have.contains(c)) throw ConfigError("no description for class '" + c + "'");
  }
  if (data.classes.empty()) return descs;
  const std::set<std::string> wanted(data.classes.begin(), data.classes.end());
  std::vector<ClassDescription> out;
  for (const auto& d : descs) {
    if (wanted.contains(d.name)) out.push_back(d);
  }
  return out;
}

SpanCandidateSets candidate_sets(const TrainingExample& ex, NegativeSampling mode,
                                 int max_span_len, std::mt19937_64& rng) {
  const int n = static_cast<int>(ex.tokens.size());
  if (mode == NegativeSampling::kAll) return all_negative_spans(n, ex.gold, max_span_len);
  return sample_negative_spans(n, ex.gold, max_span_len, rng);
}

struct FrozenSnapshot {
  std::vector<const ad::Parameter*> params;
  std::vector<ad::Matrix> values;

  explicit FrozenSnapshot(const SpanNerModel& model) {
    for (const auto* p : model.parameters()) {
      if (p->frozen) {
        params.push_back(p);
        values.push_back(p->value);
      }
    }
  }

  void verify() const {
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& a = params[k]->value;
      const auto& b = values[k];
      if (a.size() != b.size() ||
          std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) != 0) {
        throw std::logic_error("frozen parameter changed during training: " +
                               params[k]->name);
      }
    }
  }
};

LossRecord mean_record(const LossRecord& sum, long count, int epoch, long step) {
  LossRecord r;
  r.epoch = epoch;
  r.step = step;
  const double inv = 1.0 / static_cast<double>(count);
  r.start = sum.start * inv;
  r.end = sum.end * inv;
  r.match = sum.match * inv;
  r.entity = sum.entity * inv;
  r.span = r.start + r.end + r.match;
  r.total = r.span + r.entity;
  return r;
}

}  // namespace

TrainConfig TrainConfig::paper_preset() {
  TrainConfig c;
  c.learning_rate = 1e-5;
  c.batch_size = 8;
  c.epochs = 50;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup fraction must be in [0, 1)");
  }
  if (!(max_grad_norm > 0.0)) throw ConfigError("max gradient norm must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("betas must be in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (!(encoder_lr_scale >= 0.0)) throw ConfigError("encoder lr scale must be >= 0");
  if (!(time_budget_seconds >= 0.0)) throw ConfigError("time budget must be >= 0");
}

std::vector<TrainingExample> make_examples(const SpanNerModel& model,
                                           const Dataset& data,
                                           const ClassSet& classes) {
  std::vector<TrainingExample> out;
  out.reserve(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Sentence& sentence = data.sentences[s];
    if (sentence.tokens.empty()) continue;
    TrainingExample ex;
    ex.tokens = model.tokenize(sentence.tokens);
    const int n = static_cast<int>(ex.tokens.size());
    for (const auto& a : sentence.spans) {
      if (a.end >= n) {
        warn("sentence " + std::to_string(s) + ": span beyond truncation point dropped");
        continue;
      }
      const auto c = classes.index_of(a.label);
      if (!c) throw ConfigError("no description for class '" + a.label + "'");
      ex.gold.push_back(a.span());
      ex.gold_class.push_back(static_cast<int>(*c));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

LossRecord JointLossVars::record() const {
  LossRecord r;
  r.start = start.scalar();
  r.end = end.scalar();
  r.match = match.scalar();
  r.span = span.scalar();
  r.entity = entity.scalar();
  r.total = total.scalar();
  return r;
}

JointLossVars joint_loss(ad::Tape& tape, SpanNerModel& model,
                         std::span<const TrainingExample* const> batch,
                         std::span<const SpanCandidateSets> candidate_sets,
                         const ClassSet& classes, const JointLossOptions& options) {
  if (batch.empty()) throw DataError("joint_loss: empty batch");
  if (candidate_sets.size() != batch.size()) {
    throw std::invalid_argument("joint_loss: candidate sets do not match batch");
  }
  if (classes.size() == 0) throw ConfigError("joint_loss: empty class set");
  const auto n_classes = static_cast<Eigen::Index>(classes.size());

  std::vector<ad::Var> class_embeddings;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (options.live_description_encoder) {
      const TokenSequence ids =
          tokenize(classes.descriptions[c].text, model.vocab(),
                   model.config().description_tokenizer);
      class_embeddings.push_back(
          model.description_encoder().forward(tape, ids.ids, nullptr));
    } else {
      class_embeddings.push_back(tape.constant(*classes.embeddings[c]));
    }
  }

  ad::Var start_sum, end_sum, match_sum;
  std::vector<ad::Var> mentions;
  std::vector<ad::Matrix> targets;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const TrainingExample& ex = *batch[k];
    const SpanCandidateSets& sets = candidate_sets[k];
    const ad::Var emb =
        model.context_encoder().forward(tape, ex.tokens.ids, options.dropout_rng);
    const TokenScoreVars scores = score_tokens(tape, emb, model.detection());
    const SpanLossVars sl = span_loss(scores, sets);
    start_sum = k == 0 ? sl.start : ad::add(start_sum, sl.start);
    end_sum = k == 0 ? sl.end : ad::add(end_sum, sl.end);
    match_sum = k == 0 ? sl.match : ad::add(match_sum, sl.match);

    std::vector<SpanCandidate> spans = sets.positives;
    if (options.entity_spans == EntitySpans::kGoldAndNegatives) {
      spans.insert(spans.end(), sets.negatives.begin(), sets.negatives.end());
    }
    ad::Matrix y = ad::Matrix::Zero(static_cast<Eigen::Index>(spans.size()), n_classes);
    for (std::size_t m = 0; m < sets.positives.size(); ++m) {
      for (std::size_t g = 0; g < ex.gold.size(); ++g) {
        if (ex.gold[g] == sets.positives[m]) {
          y(static_cast<Eigen::Index>(m), ex.gold_class[g]) = 1.0;
        }
      }
    }
    if (!spans.empty()) {
      mentions.push_back(mention_representations(tape, emb, spans, model.inference()));
    } else {
      mentions.emplace_back();
    }
    targets.push_back(std::move(y));
  }

  // One attention pass over every mention of the batch, then split back per
  // sentence for the per-sentence span average.
  std::vector<ad::Var> present;
  for (const auto& m : mentions) {
    if (m.valid()) present.push_back(m);
  }
  ad::Var all_scores;
  if (!present.empty()) {
    const ad::Var stacked = present.size() == 1 ? present.front() : ad::concat_rows(present);
    all_scores = class_matching_scores(tape, stacked, class_embeddings, model.inference(),
                                       options.dropout_rng);
  }
  ad::Var entity_sum = tape.constant(ad::Matrix::Zero(1, 1));
  int row = 0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (!mentions[k].valid()) continue;
    const int m = static_cast<int>(mentions[k].rows());
    std::vector<int> rows(m);
    std::iota(rows.begin(), rows.end(), row);
    row += m;
    const ad::Var part = present.size() == 1 ? all_scores : ad::gather_rows(all_scores, rows);
    const double norm = 1.0 / (static_cast<double>(m) * static_cast<double>(n_classes));
    entity_sum = ad::add(entity_sum, ad::scale(ad::bce_with_logits_sum(part, targets[k]), norm));
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  JointLossVars out;
  out.start = ad::scale(start_sum, inv_b);
  out.end = ad::scale(end_sum, inv_b);
  out.match = ad::scale(match_sum, inv_b);
  out.entity = ad::scale(entity_sum, inv_b);
  out.span = ad::add(ad::add(out.start, out.end), out.match);
  out.total = ad::add(out.span, out.entity);
  return out;
}

double lr_multiplier(long step, long total_steps, double warmup_fraction) {
  if (total_steps <= 0) throw ConfigError("lr schedule: total steps must be positive");
  if (step < 0 || step > total_steps) {
    throw ConfigError("lr schedule: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  }
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup fraction must be in [0, 1)");
  }
  // The tolerance keeps e.g. 0.01 * 300 from rounding up to 4 warmup steps.
  const auto warmup = static_cast<long>(
      std::ceil(warmup_fraction * static_cast<double>(total_steps) - 1e-9));
  if (step < warmup) return static_cast<double>(step) / static_cast<double>(warmup);
  if (warmup >= total_steps) return 0.0;
  return static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

double global_grad_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(const ParameterList& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("max gradient norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto* p : params) p->grad *= factor;
  }
  return norm;
}

AdamW::AdamW(ParameterList params, const TrainConfig& config,
             std::vector<double> lr_scales)
    : params_(std::move(params)),
      lr_scales_(std::move(lr_scales)),
      beta1_(config.beta1),
      beta2_(config.beta2),
      epsilon_(config.adam_epsilon),
      weight_decay_(config.weight_decay) {
  if (lr_scales_.empty()) lr_scales_.assign(params_.size(), 1.0);
  if (lr_scales_.size() != params_.size()) {
    throw std::invalid_argument("AdamW: one learning-rate scale per parameter expected");
  }
  state_.reserve(params_.size());
  for (const auto* p : params_) {
    state_.push_back({ad::Matrix::Zero(p->value.rows(), p->value.cols()),
                      ad::Matrix::Zero(p->value.rows(), p->value.cols())});
  }
}

void AdamW::step(double learning_rate) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Parameter& p = *params_[k];
    if (p.frozen) continue;
    AdamState& s = state_[k];
    const double lr = learning_rate * lr_scales_[k];
    s.first_moment = beta1_ * s.first_moment + (1.0 - beta1_) * p.grad;
    s.second_moment =
        beta2_ * s.second_moment + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value *= 1.0 - lr * weight_decay_;
    p.value.array() -= lr * (s.first_moment.array() / c1) /
                       ((s.second_moment.array() / c2).sqrt() + epsilon_);
  }
}

TrainResult train(SpanNerModel& model, const Dataset& data,
                  const std::vector<ClassDescription>& descriptions,
                  const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const ClassSet classes = model.class_set(training_classes(data, descriptions));
  const std::vector<TrainingExample> examples = make_examples(model, data, classes);
  if (examples.empty()) throw DataError("training set has no non-empty sentences");

  const ParameterList params = model.trainable_parameters();
  std::vector<double> scales;
  {
    const auto encoder_params = model.context_encoder().parameters();
    const std::set<const ad::Parameter*> in_encoder(encoder_params.begin(),
                                                    encoder_params.end());
    for (const auto* p : params) {
      scales.push_back(in_encoder.contains(p) ? config.encoder_lr_scale : 1.0);
    }
  }
  AdamW optimizer(params, config, scales);
  const FrozenSnapshot frozen(model);

  const long n = static_cast<long>(examples.size());
  const long steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  TrainResult result;
  result.total_steps = steps_per_epoch * config.epochs;

  const int max_span = model.config().max_span_length;
  const auto started = Clock::now();
  long step = 0;
  for (int epoch = 0; epoch < config.epochs && !result.stopped_by_budget; ++epoch) {
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = derived_rng(config.seed, kShuffle, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossRecord sum;
    long batches = 0;
    for (long b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b * config.batch_size);
      const std::size_t hi = std::min(order.size(), lo + config.batch_size);
      std::vector<const TrainingExample*> batch;
      std::vector<SpanCandidateSets> sets;
      for (std::size_t k = lo; k < hi; ++k) {
        const TrainingExample& ex = examples[order[k]];
        auto neg_rng = derived_rng(config.seed, kNegatives,
                                   static_cast<std::uint64_t>(epoch), order[k]);
        batch.push_back(&ex);
        sets.push_back(candidate_sets(ex, config.negative_sampling, max_span, neg_rng));
      }
      auto dropout_rng = derived_rng(config.seed, kDropout, static_cast<std::uint64_t>(step));
      JointLossOptions options;
      options.entity_spans = config.entity_spans;
      options.dropout_rng = &dropout_rng;

      for (auto* p : params) p->zero_grad();
      ad::Tape tape;
      const JointLossVars loss = joint_loss(tape, model, batch, sets, classes, options);
      tape.backward(loss.total);
      clip_gradients(params, config.max_grad_norm);
      optimizer.step(config.learning_rate *
                     lr_multiplier(step, result.total_steps, config.warmup_fraction));

      LossRecord rec = loss.record();
      rec.epoch = epoch;
      rec.step = step;
      result.steps.push_back(rec);
      sum.start += rec.start;
      sum.end += rec.end;
      sum.match += rec.match;
      sum.entity += rec.entity;
      ++batches;
      ++step;
      if (config.time_budget_seconds > 0.0 &&
          seconds_since(started) >= config.time_budget_seconds) {
        result.stopped_by_budget = true;
        break;
      }
    }
    frozen.verify();
    result.epochs.push_back(mean_record(sum, batches, epoch, step));
    if (hooks.on_epoch) hooks.on_epoch(result.epochs.back());
  }
  result.seconds = seconds_since(started);
  return result;
}

std::string loss_log_csv(const std::vector<LossRecord>& records) {
  std::ostringstream out;
  out << "epoch,step,l_start,l_end,l_match,l_entity,total\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.epoch << ',' << r.step << ',' << r.start << ',' << r.end << ',' << r.match
        << ',' << r.entity << ',' << r.total << '\n';
  }
  return out.str();
}

Dataset sample_k_shot(const Dataset& data, const EpisodeSpec& spec,
                      std::mt19937_64& rng) {
  if (spec.k < 1) throw ConfigError("K must be >= 1");
  const std::vector<std::string>& classes =
      spec.classes.empty() ? data.classes : spec.classes;
  std::set<std::size_t> chosen;
  for (const auto& c : classes) {
    std::vector<std::size_t> containing;
    for (std::size_t s = 0; s < data.size(); ++s) {
      const auto& spans = data.sentences[s].spans;
      if (std::any_of(spans.begin(), spans.end(),
                      [&](const SpanAnnotation& a) { return a.label == c; })) {
        containing.push_back(s);
      }
    }
    if (containing.size() < static_cast<std::size_t>(spec.k)) {
      throw DataError("class '" + c + "' occurs in " + std::to_string(containing.size()) +
                      " sentences, fewer than K = " + std::to_string(spec.k));
    }
    std::vector<std::size_t> picked;
    std::sample(containing.begin(), containing.end(), std::back_inserter(picked),
                spec.k, rng);
    chosen.insert(picked.begin(), picked.end());
  }

  Dataset out;
  out.split = data.split;
  const std::set<std::string> keep(classes.begin(), classes.end());
  for (std::size_t s : chosen) {
    Sentence sentence = data.sentences[s];
    if (!spec.classes.empty()) {
      std::erase_if(sentence.spans,
                    [&](const SpanAnnotation& a) { return !keep.contains(a.label); });
    }
    out.sentences.push_back(std::move(sentence));
  }
  out.refresh_classes();
  return out;
}

GradCheckResult gradient_check(const std::function<double(bool)>& loss_fn,
                               const ParameterList& params, double epsilon,
                               int samples_per_parameter, std::mt19937_64& rng,
                               double abs_floor) {
  if (!(epsilon > 0.0)) throw ConfigError("gradient check: epsilon must be positive");
  for (auto* p : params) p->zero_grad();
  loss_fn(true);
  std::vector<ad::Matrix> analytic;
  analytic.reserve(params.size());
  for (const auto* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Parameter& p = *params[k];
    if (p.frozen) continue;
    const ad::Matrix& a = analytic[k];
    // Prefer entries the loss actually touches; embedding tables are mostly
    // rows of unused tokens.
    std::vector<Eigen::Index> nonzero, zero;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      (a.data()[i] != 0.0 ? nonzero : zero).push_back(i);
    }
    const auto want = static_cast<std::size_t>(std::max(samples_per_parameter, 0));
    std::vector<Eigen::Index> picked;
    std::sample(nonzero.begin(), nonzero.end(), std::back_inserter(picked), want, rng);
    if (picked.size() < want) {
      std::sample(zero.begin(), zero.end(), std::back_inserter(picked),
                  want - picked.size(), rng);
    }
    for (Eigen::Index i : picked) {
      double& x = p.value.data()[i];
      const double original = x;
      x = original + epsilon;
      const double plus = loss_fn(false);
      x = original - epsilon;
      const double minus = loss_fn(false);
      x = original;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double exact = a.data()[i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), abs_floor});
      const double err = std::abs(exact - numeric) / denom;
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

JointGradCheck check_joint_loss_gradients(SpanNerModel& model, const Dataset& batch,
                                          const std::vector<ClassDescription>& descriptions,
                                          double epsilon, int samples_per_parameter,
                                          std::uint64_t seed) {
  const auto started = Clock::now();
  const ClassSet classes = model.class_set(training_classes(batch, descriptions));
  const std::vector<TrainingExample> examples = make_examples(model, batch, classes);
  std::mt19937_64 rng(seed);
  std::vector<const TrainingExample*> ptrs;
  std::vector<SpanCandidateSets> sets;
  for (const auto& ex : examples) {
    ptrs.push_back(&ex);
    sets.push_back(sample_negative_spans(static_cast<int>(ex.tokens.size()), ex.gold,
                                         model.config().max_span_length, rng));
  }
  JointLossOptions options;
  options.live_description_encoder = true;

  ParameterList all = model.parameters();
  auto loss_fn = [&](bool with_grads) {
    ad::Tape tape(with_grads);
    const JointLossVars loss = joint_loss(tape, model, ptrs, sets, classes, options);
    if (with_grads) {
      for (auto* p : all) p->zero_grad();
      tape.backward(loss.total);
    }
    return loss.total.scalar();
  };

  JointGradCheck out;
  out.result = gradient_check(loss_fn, model.trainable_parameters(), epsilon,
                              samples_per_parameter, rng);
  loss_fn(true);
  for (const auto* p : all) {
    if (p->frozen && !p->grad.isZero(0.0)) out.frozen_gradients_zero = false;
  }
  out.seconds = seconds_since(started);
  return out;
}

}  // namespace spanner
