#pragma once

// Joint optimization of the span and entity losses: AdamW with a linear
// warmup/decay schedule and global-norm gradient clipping, K-shot episode
// sampling, and a finite-difference gradient check.

#include "spanner/dataset.hpp"
#include "spanner/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace spanner {

enum class NegativeSampling {
  kSampled,  // |O_neg| = N - |O_pos|, redrawn every epoch
  kAll,      // every capped non-gold span
};

enum class EntitySpans {
  kGoldAndNegatives,  // gold spans (with class) + sampled negatives (all-zero)
  kGoldOnly,
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int epochs = 50;
  double warmup_fraction = 0.01;
  double max_grad_norm = 1.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Context-encoder learning rate relative to the heads.
  double encoder_lr_scale = 1.0;
  std::uint64_t seed = 13;
  NegativeSampling negative_sampling = NegativeSampling::kSampled;
  EntitySpans entity_spans = EntitySpans::kGoldAndNegatives;
  // Stop after this many seconds of wall clock (0 = no budget).
  double time_budget_seconds = 0.0;

  // Paper-scale regime for a pretrained 110M-parameter backbone.
  static TrainConfig paper_preset();
  // From-scratch tiny encoder.
  static TrainConfig desk_preset() { return TrainConfig{}; }

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// One training sentence, tokenized, with gold spans resolved to class indices
// of the training class set.
struct TrainingExample {
  TokenSequence tokens;
  std::vector<SpanCandidate> gold;
  std::vector<int> gold_class;  // parallel to gold
};

std::vector<TrainingExample> make_examples(const SpanNerModel& model,
                                           const Dataset& data,
                                           const ClassSet& classes);

struct LossRecord {
  int epoch = 0;
  long step = 0;
  double start = 0.0;
  double end = 0.0;
  double match = 0.0;
  double span = 0.0;
  double entity = 0.0;
  double total = 0.0;
};

// Graph outputs of joint_loss. total = span + entity with
// span = (start + end) + match, evaluated in that order.
struct JointLossVars {
  ad::Var start, end, match, span, entity, total;

  LossRecord record() const;
};

struct JointLossOptions {
  EntitySpans entity_spans = EntitySpans::kGoldAndNegatives;
  std::mt19937_64* dropout_rng = nullptr;  // null = deterministic forward
  // Run the frozen description encoder on the tape instead of using cached
  // embeddings (used by gradient checks to cover that path).
  bool live_description_encoder = false;
};

// Mean over the batch of the per-sentence loss terms. candidate_sets[k] are
// the span candidate sets of batch[k].
JointLossVars joint_loss(ad::Tape& tape, SpanNerModel& model,
                         std::span<const TrainingExample* const> batch,
                         std::span<const SpanCandidateSets> candidate_sets,
                         const ClassSet& classes, const JointLossOptions& options);

// Linear 0 -> 1 over the first ceil(warmup_fraction * total_steps) steps,
// then linear 1 -> 0 at total_steps. ConfigError if total_steps == 0.
double lr_multiplier(long step, long total_steps, double warmup_fraction);

double global_grad_norm(const ParameterList& params);
// Scales all gradients by max_norm / norm when norm > max_norm. Returns the
// pre-clip norm.
double clip_gradients(const ParameterList& params, double max_norm);

struct AdamState {
  ad::Matrix first_moment;
  ad::Matrix second_moment;
};

// Adam with decoupled weight decay. Frozen parameters are skipped.
class AdamW {
 public:
  // lr_scales (optional) multiplies the step size per parameter.
  AdamW(ParameterList params, const TrainConfig& config,
        std::vector<double> lr_scales = {});

  void step(double learning_rate);
  long steps() const { return steps_; }
  const std::vector<AdamState>& state() const { return state_; }

 private:
  ParameterList params_;
  std::vector<double> lr_scales_;
  std::vector<AdamState> state_;
  double beta1_, beta2_, epsilon_, weight_decay_;
  long steps_ = 0;
};

struct TrainResult {
  std::vector<LossRecord> epochs;  // per-epoch means
  std::vector<LossRecord> steps;   // every optimizer step
  long total_steps = 0;            // planned
  double seconds = 0.0;
  bool stopped_by_budget = false;
};

struct TrainHooks {
  std::function<void(const LossRecord&)> on_epoch;
};

// Trains on `data` with the class set formed by the descriptions of the
// dataset's classes. ConfigError if a dataset class has no description.
// The description encoder is verified bit-identical after every epoch.
TrainResult train(SpanNerModel& model, const Dataset& data,
                  const std::vector<ClassDescription>& descriptions,
                  const TrainConfig& config, const TrainHooks& hooks = {});

// Loss log CSV: epoch,step,l_start,l_end,l_match,l_entity,total
std::string loss_log_csv(const std::vector<LossRecord>& records);

struct EpisodeSpec {
  int k = 5;
  std::vector<std::string> classes;  // empty = all classes of the dataset
  int repeats = 10;
};

// K sentences containing each class, drawn per class without replacement and
// de-duplicated (original order kept). DataError naming the class if fewer
// than K sentences contain it.
Dataset sample_k_shot(const Dataset& data, const EpisodeSpec& spec,
                      std::mt19937_64& rng);

struct GradCheckResult {
  double max_relative_error = 0.0;
  int checked = 0;
  std::string worst_parameter;
};

// loss_fn(with_gradients) returns the loss; when with_gradients is true it
// must also leave d(loss)/d(param) in every Parameter::grad (zeroed first by
// the caller). Compares central differences against those gradients on up to
// samples_per_parameter random entries per parameter. Relative error is
// |a - n| / max(|a|, |n|, abs_floor).
GradCheckResult gradient_check(const std::function<double(bool)>& loss_fn,
                               const ParameterList& params, double epsilon,
                               int samples_per_parameter, std::mt19937_64& rng,
                               double abs_floor = 1e-6);

// Full joint-loss check on a batch with the live description encoder and no
// dropout. Also reports whether every frozen gradient was exactly zero.
struct JointGradCheck {
  GradCheckResult result;
  bool frozen_gradients_zero = true;
  double seconds = 0.0;
};

JointGradCheck check_joint_loss_gradients(SpanNerModel& model, const Dataset& batch,
                                          const std::vector<ClassDescription>& descriptions,
                                          double epsilon, int samples_per_parameter,
                                          std::uint64_t seed);

}  // namespace spanner
