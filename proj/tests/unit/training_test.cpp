#include "spanner/errors.hpp"
#include "spanner/training.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace spanner {
namespace {

const double kLn2 = std::log(2.0);

ModelConfig small_model() {
  ModelConfig c;
  c.encoder.hidden = 16;
  c.encoder.heads = 2;
  c.encoder.ffn_hidden = 32;
  c.encoder.layers = 1;
  c.inference.hidden = 16;
  c.inference.attention_hidden = 16;
  c.inference.heads = 2;
  return c;
}

SyntheticCorpus small_corpus(int train = 30, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.class_count = 3;
  spec.lexicon_size = 6;
  spec.train_sentences = train;
  spec.test_sentences = 0;
  spec.seed = seed;
  return generate_synthetic(spec);
}

Sentence sentence(std::vector<std::string> tokens, std::vector<SpanAnnotation> spans) {
  return {std::move(tokens), std::move(spans)};
}

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_NO_THROW(TrainConfig::paper_preset().validate());
  TrainConfig c;
  c.warmup_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.epochs, 50);
  EXPECT_EQ(c.warmup_fraction, 0.01);
  EXPECT_EQ(c.max_grad_norm, 1.0);
  EXPECT_EQ(c.learning_rate, 1e-3);
}

TEST(LrSchedule, Endpoints) {
  EXPECT_EQ(lr_multiplier(0, 1000, 0.01), 0.0);
  EXPECT_EQ(lr_multiplier(10, 1000, 0.01), 1.0);
  EXPECT_EQ(lr_multiplier(1000, 1000, 0.01), 0.0);
  EXPECT_EQ(lr_multiplier(5, 1000, 0.01), 0.5);
  // ceil(0.01 * 250) = 3
  EXPECT_EQ(lr_multiplier(3, 250, 0.01), 1.0);
  EXPECT_LT(lr_multiplier(2, 250, 0.01), 1.0);
  EXPECT_THROW(lr_multiplier(0, 0, 0.01), ConfigError);
  EXPECT_THROW(lr_multiplier(11, 10, 0.01), ConfigError);
}

TEST(LrSchedule, PiecewiseLinearSinglePeak) {
  for (long total : {1L, 7L, 100L, 333L, 2000L}) {
    int peaks = 0;
    double prev = lr_multiplier(0, total, 0.01);
    double prev_delta = 0.0;
    for (long s = 1; s <= total; ++s) {
      const double m = lr_multiplier(s, total, 0.01);
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
      if (m == 1.0) ++peaks;
      const double delta = m - prev;
      // Linear pieces: consecutive differences agree unless the sign flips.
      if (s > 1 && (delta > 0) == (prev_delta > 0)) {
        EXPECT_NEAR(delta, prev_delta, 1e-12);
      }
      EXPECT_LE(std::abs(delta), 1.0 + 1e-12);
      prev = m;
      prev_delta = delta;
    }
    EXPECT_LE(peaks, 1) << total;
  }
}

TEST(ClipGradients, ScalesAboveThreshold) {
  ad::Parameter a("a", ad::Matrix::Zero(1, 2)), b("b", ad::Matrix::Zero(2, 1));
  a.grad << 1.2, 0.0;
  b.grad << 1.6, 0.0;  // global norm 2
  const ParameterList params{&a, &b};
  EXPECT_NEAR(clip_gradients(params, 1.0), 2.0, 1e-15);
  EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(b.grad(0, 0), 0.8, 1e-15);
}

TEST(ClipGradients, LeavesSmallGradientsAlone) {
  ad::Parameter a("a", ad::Matrix::Zero(1, 2));
  a.grad << 0.3, 0.4;
  const ad::Matrix before = a.grad;
  clip_gradients({&a}, 1.0);
  EXPECT_EQ(a.grad, before);
}

TEST(ClipGradients, BoundAndDirectionProperty) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    ad::Parameter a("a", ad::Matrix::Zero(3, 4)), b("b", ad::Matrix::Zero(1, 5));
    a.grad = normal_matrix(3, 4, 0.1 + trial * 0.2, rng);
    b.grad = normal_matrix(1, 5, 0.1 + trial * 0.2, rng);
    const ad::Matrix a0 = a.grad, b0 = b.grad;
    const double max_norm = 0.5 + (trial % 5);
    const double norm = clip_gradients({&a, &b}, max_norm);
    EXPECT_LE(global_grad_norm({&a, &b}), max_norm + 1e-9);
    const double dot = (a.grad.cwiseProduct(a0).sum() + b.grad.cwiseProduct(b0).sum());
    const double cosine = dot / (global_grad_norm({&a, &b}) * norm);
    EXPECT_NEAR(cosine, 1.0, 1e-12);
  }
}

TEST(AdamW, FirstStepsMatchHandComputedUpdate) {
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  ad::Parameter p("p", ad::Matrix::Constant(1, 2, 1.0));
  AdamW opt({&p}, cfg);
  double m = 0.0, v = 0.0, x = 1.0;
  const double lr = 0.01;
  for (int t = 1; t <= 3; ++t) {
    const double g = 0.5 * t;
    p.grad.setConstant(g);
    opt.step(lr);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x *= 1.0 - lr * 0.1;
    x -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.value(0, 0), x, 1e-14);
  }
  EXPECT_EQ(opt.steps(), 3);
  ASSERT_EQ(opt.state().size(), 1u);
  EXPECT_EQ(opt.state()[0].first_moment.rows(), 1);
  EXPECT_EQ(opt.state()[0].second_moment.cols(), 2);
}

TEST(AdamW, SkipsFrozenAndHonoursScales) {
  TrainConfig cfg;
  ad::Parameter frozen("f", ad::Matrix::Constant(2, 2, 1.0), true);
  ad::Parameter half("h", ad::Matrix::Constant(1, 1, 1.0));
  ad::Parameter full("g", ad::Matrix::Constant(1, 1, 1.0));
  frozen.grad.setConstant(3.0);
  half.grad.setConstant(1.0);
  full.grad.setConstant(1.0);
  AdamW opt({&frozen, &half, &full}, cfg, {1.0, 0.5, 1.0});
  opt.step(0.01);
  EXPECT_EQ(frozen.value, ad::Matrix::Constant(2, 2, 1.0));
  EXPECT_NEAR(1.0 - half.value(0, 0), 0.5 * (1.0 - full.value(0, 0)), 1e-6);
}

class JointLossTest : public ::testing::Test {
 protected:
  JointLossTest()
      : corpus(small_corpus()),
        model(create_model(corpus.train, corpus.descriptions, small_model(), 3)),
        classes(model.class_set(corpus.descriptions)),
        examples(make_examples(model, corpus.train, classes)) {}

  JointLossVars loss_for(ad::Tape& tape, const TrainingExample& ex,
                         const SpanCandidateSets& sets) {
    const TrainingExample* p = &ex;
    const std::vector<SpanCandidateSets> cands{sets};
    return joint_loss(tape, model, std::span(&p, 1), cands, classes, {});
  }

  SyntheticCorpus corpus;
  SpanNerModel model;
  ClassSet classes;
  std::vector<TrainingExample> examples;
};

TEST_F(JointLossTest, TotalIsSumOfComponents) {
  std::mt19937_64 rng(4);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& ex = examples[k];
    ad::Tape tape;
    const auto r = loss_for(tape, ex, sample_negative_spans(static_cast<int>(ex.tokens.size()),
                                                            ex.gold, 10, rng))
                       .record();
    EXPECT_EQ(r.span, (r.start + r.end) + r.match);
    EXPECT_EQ(r.total, r.span + r.entity);
  }
}

TEST_F(JointLossTest, ZeroHeadsGiveFourLn2) {
  for (auto* p : model.detection().parameters()) p->value.setZero();
  model.inference().entity.value.setZero();
  std::mt19937_64 rng(5);
  const auto& ex = examples[0];
  ad::Tape tape;
  const auto r =
      loss_for(tape, ex, sample_negative_spans(static_cast<int>(ex.tokens.size()), ex.gold, 10, rng))
          .record();
  EXPECT_NEAR(r.start, kLn2, 1e-12);
  EXPECT_NEAR(r.end, kLn2, 1e-12);
  EXPECT_NEAR(r.match, kLn2, 1e-12);
  EXPECT_NEAR(r.entity, kLn2, 1e-12);
  EXPECT_NEAR(r.total, 4 * kLn2, 1e-12);
}

TEST_F(JointLossTest, EntityFreeSentenceUsesNegativesOnly) {
  Dataset empty;
  empty.sentences.push_back(sentence({"the", "river", "was", "calm"}, {}));
  const auto ex = make_examples(model, empty, classes);
  ASSERT_EQ(ex.size(), 1u);
  std::mt19937_64 rng(6);
  const auto sets = sample_negative_spans(4, ex[0].gold, 10, rng);
  EXPECT_EQ(sets.negatives.size(), 4u);
  ad::Tape tape;
  const auto r = loss_for(tape, ex[0], sets).record();
  EXPECT_TRUE(std::isfinite(r.total));
  EXPECT_GT(r.entity, 0.0);
}

TEST_F(JointLossTest, GoldOnlyEntityLossIgnoresNegatives) {
  const auto& ex = examples[0];
  ASSERT_FALSE(ex.gold.empty());
  std::mt19937_64 a(7), b(8);
  const auto sa = sample_negative_spans(static_cast<int>(ex.tokens.size()), ex.gold, 10, a);
  const auto sb = sample_negative_spans(static_cast<int>(ex.tokens.size()), ex.gold, 10, b);
  JointLossOptions opts;
  opts.entity_spans = EntitySpans::kGoldOnly;
  const TrainingExample* p = &ex;
  ad::Tape t1, t2;
  const std::vector<SpanCandidateSets> ca{sa}, cb{sb};
  EXPECT_EQ(joint_loss(t1, model, std::span(&p, 1), ca, classes, opts).entity.scalar(),
            joint_loss(t2, model, std::span(&p, 1), cb, classes, opts).entity.scalar());
}

TEST_F(JointLossTest, GradientCheckOnTwoSentences) {
  Dataset batch;
  for (const auto& s : corpus.train.sentences) {
    if (!s.spans.empty() && s.tokens.size() <= 10) batch.sentences.push_back(s);
    if (batch.size() == 2) break;
  }
  ASSERT_EQ(batch.size(), 2u);
  batch.refresh_classes();
  const JointGradCheck check =
      check_joint_loss_gradients(model, batch, corpus.descriptions, 1e-5, 3, 9);
  EXPECT_LT(check.result.max_relative_error, 1e-4) << check.result.worst_parameter;
  EXPECT_GT(check.result.checked, 0);
  EXPECT_TRUE(check.frozen_gradients_zero);
}

TEST(GradientCheck, QuadraticIsNearlyExact) {
  ad::Parameter p("p", ad::Matrix(1, 3));
  p.value << 0.5, -1.0, 2.0;
  auto loss = [&](bool grads) {
    if (grads) p.grad = 2.0 * p.value;
    return p.value.squaredNorm();
  };
  std::mt19937_64 rng(1);
  const auto r = gradient_check(loss, {&p}, 1e-5, 3, rng);
  EXPECT_LT(r.max_relative_error, 1e-8);
  EXPECT_EQ(r.checked, 3);
}

TEST(GradientCheck, ReportsWrongGradient) {
  ad::Parameter p("p", ad::Matrix::Constant(1, 2, 1.0));
  auto loss = [&](bool grads) {
    if (grads) p.grad.setConstant(3.0);
    return p.value.squaredNorm();
  };
  std::mt19937_64 rng(1);
  const auto r = gradient_check(loss, {&p}, 1e-5, 2, rng);
  EXPECT_NEAR(r.max_relative_error, 1.0 / 3.0, 1e-6);
  EXPECT_EQ(r.worst_parameter.rfind("p", 0), 0u);
}

TEST(Train, OneSentenceOneEpochSmoke) {
  const SyntheticCorpus corpus = small_corpus();
  Dataset one;
  for (const auto& s : corpus.train.sentences) {
    if (!s.spans.empty()) {
      one.sentences.push_back(s);
      break;
    }
  }
  one.refresh_classes();
  SpanNerModel model = create_model(one, corpus.descriptions, small_model(), 1);
  TrainConfig tc;
  tc.epochs = 1;
  const TrainResult r = train(model, one, corpus.descriptions, tc);
  ASSERT_EQ(r.epochs.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.epochs[0].total));
  EXPECT_EQ(r.total_steps, 1);
  EXPECT_FALSE(r.stopped_by_budget);
}

TEST(Train, SameSeedSameParameters) {
  const SyntheticCorpus corpus = small_corpus(16);
  TrainConfig tc;
  tc.epochs = 2;
  SpanNerModel a = create_model(corpus.train, corpus.descriptions, small_model(), 2);
  SpanNerModel b = create_model(corpus.train, corpus.descriptions, small_model(), 2);
  train(a, corpus.train, corpus.descriptions, tc);
  train(b, corpus.train, corpus.descriptions, tc);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k]->value, pb[k]->value) << pa[k]->name;
}

TEST(Train, DescriptionEncoderUntouched) {
  const SyntheticCorpus corpus = small_corpus(16);
  SpanNerModel model = create_model(corpus.train, corpus.descriptions, small_model(), 2);
  std::vector<ad::Matrix> before;
  for (const auto* p : model.description_encoder().parameters()) before.push_back(p->value);
  const ad::Matrix enc_before = model.encode(model.tokenize(corpus.train.sentences[0].tokens));
  TrainConfig tc;
  tc.epochs = 2;
  train(model, corpus.train, corpus.descriptions, tc);
  const auto after = model.description_encoder().parameters();
  for (std::size_t k = 0; k < after.size(); ++k) EXPECT_EQ(after[k]->value, before[k]);
  EXPECT_NE(model.encode(model.tokenize(corpus.train.sentences[0].tokens)), enc_before);
}

TEST(Train, MissingDescriptionIsConfigError) {
  const SyntheticCorpus corpus = small_corpus(10);
  SpanNerModel model = create_model(corpus.train, corpus.descriptions, small_model(), 2);
  std::vector<ClassDescription> partial(corpus.descriptions.begin() + 1, corpus.descriptions.end());
  EXPECT_THROW(train(model, corpus.train, partial, TrainConfig{}), ConfigError);
}

TEST(Train, LossHalvesOverTwentyEpochs) {
  const SyntheticCorpus corpus = small_corpus(40, 8);
  SpanNerModel model = create_model(corpus.train, corpus.descriptions, small_model(), 8);
  TrainConfig tc;
  tc.epochs = 20;
  const TrainResult r = train(model, corpus.train, corpus.descriptions, tc);
  ASSERT_EQ(r.epochs.size(), 20u);
  EXPECT_LE(r.epochs.back().total, 0.5 * r.epochs.front().total);
  for (const auto& s : r.steps) {
    EXPECT_EQ(s.span, (s.start + s.end) + s.match);
    EXPECT_EQ(s.total, s.span + s.entity);
  }
}

TEST(Train, LossLogCsv) {
  LossRecord r;
  r.epoch = 1;
  r.step = 4;
  r.start = 0.5;
  r.end = 0.25;
  r.match = 0.125;
  r.entity = 1.0;
  r.span = 0.875;
  r.total = 1.875;
  const std::string csv = loss_log_csv({r});
  EXPECT_EQ(csv.rfind("epoch,step,l_start,l_end,l_match,l_entity,total\n", 0), 0u);
  EXPECT_NE(csv.find("1,4,0.5,0.25,0.125,1,1.875"), std::string::npos);
}

Dataset disjoint_classes(int per_class) {
  Dataset d;
  for (const std::string label : {"A", "B", "C", "D"}) {
    for (int k = 0; k < per_class; ++k) {
      d.sentences.push_back(sentence({"x", label + std::to_string(k), "y"}, {{1, 1, label}}));
    }
  }
  d.refresh_classes();
  return d;
}

TEST(KShot, DisjointClassesGiveKTimesClasses) {
  const Dataset d = disjoint_classes(8);
  std::mt19937_64 rng(1);
  const Dataset s = sample_k_shot(d, EpisodeSpec{5, {}, 10}, rng);
  EXPECT_EQ(s.size(), 20u);
  std::map<std::string, int> counts;
  for (const auto& sent : s.sentences) ++counts[sent.spans[0].label];
  for (const auto& [label, n] : counts) EXPECT_EQ(n, 5) << label;
}

TEST(KShot, SharedSentenceIsDeduplicated) {
  Dataset d;
  d.sentences.push_back(sentence({"a", "b", "c"}, {{0, 0, "A"}, {1, 1, "B"}, {2, 2, "C"}}));
  d.sentences.push_back(sentence({"q"}, {}));
  d.refresh_classes();
  std::mt19937_64 rng(1);
  EXPECT_EQ(sample_k_shot(d, EpisodeSpec{1, {}, 1}, rng).size(), 1u);
}

TEST(KShot, DeterministicAndOrderPreserving) {
  const Dataset d = disjoint_classes(10);
  std::mt19937_64 a(3), b(3);
  const Dataset x = sample_k_shot(d, EpisodeSpec{3, {"B", "D"}, 1}, a);
  EXPECT_EQ(x.sentences, sample_k_shot(d, EpisodeSpec{3, {"B", "D"}, 1}, b).sentences);
  EXPECT_EQ(x.size(), 6u);
  std::vector<std::size_t> positions;
  for (const auto& s : x.sentences) {
    positions.push_back(static_cast<std::size_t>(
        std::find(d.sentences.begin(), d.sentences.end(), s) - d.sentences.begin()));
  }
  EXPECT_TRUE(std::is_sorted(positions.begin(), positions.end()));
}

TEST(KShot, InsufficientSentencesNamesClass) {
  const Dataset d = disjoint_classes(2);
  std::mt19937_64 rng(1);
  try {
    sample_k_shot(d, EpisodeSpec{3, {"C"}, 1}, rng);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("C"), std::string::npos);
  }
  EXPECT_THROW(sample_k_shot(d, EpisodeSpec{0, {}, 1}, rng), ConfigError);
}

}  // namespace
}  // namespace spanner
