#include "spanner/class_inference.hpp"
#include "spanner/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <thread>
#include <vector>

namespace spanner {
namespace {

const double kLn2 = std::log(2.0);

InferenceConfig small_config(int heads = 2) {
  InferenceConfig c;
  c.hidden = 6;
  c.attention_hidden = 8;
  c.heads = heads;
  c.init_std = 0.5;
  return c;
}

void set_identity(Linear& l) {
  l.weight.value.setIdentity();
  l.bias.value.setZero();
}

MentionRepresentation random_mention(int h, std::mt19937_64& rng) {
  return {normal_matrix(1, h, 1.0, rng).row(0), {0, 0}};
}

// A class set built from raw embedding matrices, bypassing the encoder.
ClassSet raw_class_set(const std::vector<ad::Matrix>& embeddings) {
  ClassSet set;
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    set.descriptions.push_back({"C" + std::to_string(k), "class " + std::to_string(k)});
    set.embeddings.push_back(std::make_shared<const ad::Matrix>(embeddings[k]));
  }
  return set;
}

TEST(Descriptions, Validation) {
  const std::vector<ClassDescription> ok{{"A", "a thing"}, {"B", "b thing"}};
  EXPECT_NO_THROW(validate_descriptions(ok));
  const std::vector<ClassDescription> dup{{"A", "x"}, {"A", "y"}};
  EXPECT_THROW(validate_descriptions(dup), ConfigError);
  const std::vector<ClassDescription> blank{{"A", "   "}};
  EXPECT_THROW(validate_descriptions(blank), ConfigError);
  const std::vector<ClassDescription> unnamed{{"", "x"}};
  EXPECT_THROW(validate_descriptions(unnamed), ConfigError);
}

TEST(InferenceConfig, HeadsMustDivideWidth) {
  InferenceConfig c;
  EXPECT_NO_THROW(c.validate());
  c.heads = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = InferenceConfig{};
  c.attention_dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InferenceConfig, Defaults) {
  const InferenceConfig c;
  EXPECT_EQ(c.heads, 4);
  EXPECT_EQ(c.attention_hidden, 300);
  EXPECT_EQ(c.attention_dropout, 0.2);
}

TEST(MentionRepresentation, IdentityProjectionOfSingleToken) {
  std::mt19937_64 rng(1);
  InferenceHeads heads(small_config(), rng);
  heads.entity.value.setIdentity();
  const ad::Matrix x = normal_matrix(4, 6, 1.0, rng);
  const auto m = mention_representation(x, {2, 2}, heads);
  EXPECT_EQ(m.vector, x.row(2));
}

TEST(MentionRepresentation, EqualRowsAverageToEither) {
  std::mt19937_64 rng(2);
  InferenceHeads heads(small_config(), rng);
  heads.entity.value.setIdentity();
  ad::Matrix x = normal_matrix(3, 6, 1.0, rng);
  x.row(1) = x.row(0);
  EXPECT_TRUE(mention_representation(x, {0, 1}, heads).vector.isApprox(x.row(0), 1e-15));
}

TEST(MentionRepresentation, MatchesNaiveOracle) {
  std::mt19937_64 rng(3);
  const InferenceHeads heads(small_config(), rng);
  const ad::Matrix x = normal_matrix(7, 6, 1.0, rng);
  const auto m = mention_representation(x, {2, 5}, heads);
  for (int r = 0; r < 6; ++r) {
    double want = 0.0;
    for (int c = 0; c < 6; ++c) {
      double mean = 0.0;
      for (int t = 2; t <= 5; ++t) mean += x(t, c);
      want += heads.entity.value(r, c) * mean / 4.0;
    }
    EXPECT_NEAR(m.vector(r), want, 1e-12);
  }
}

TEST(MentionRepresentation, OutOfBoundsIsDataError) {
  std::mt19937_64 rng(4);
  const InferenceHeads heads(small_config(), rng);
  const ad::Matrix x = normal_matrix(3, 6, 1.0, rng);
  EXPECT_THROW(mention_representation(x, {1, 3}, heads), DataError);
  EXPECT_THROW(mention_representation(x, {-1, 0}, heads), DataError);
}

TEST(MentionRepresentation, GraphMatchesValueRoute) {
  std::mt19937_64 rng(5);
  InferenceHeads heads(small_config(), rng);
  const ad::Matrix x = normal_matrix(5, 6, 1.0, rng);
  const std::vector<SpanCandidate> spans{{0, 0}, {1, 3}, {4, 4}};
  ad::Tape tape;
  const ad::Matrix got = mention_representations(tape, tape.constant(x), spans, heads).value();
  for (std::size_t k = 0; k < spans.size(); ++k) {
    EXPECT_TRUE(got.row(static_cast<Eigen::Index>(k))
                    .isApprox(mention_representation(x, spans[k], heads).vector, 1e-13));
  }
}

TEST(ClassAttention, SingleKeyGetsAllWeight) {
  std::mt19937_64 rng(6);
  const InferenceHeads heads(small_config(), rng);
  const ad::Matrix token = normal_matrix(1, 6, 1.0, rng);
  const auto a = class_attention(random_mention(6, rng), token, heads);
  const auto b = class_attention(random_mention(6, rng), token, heads);
  for (const auto& w : a.weights) {
    ASSERT_EQ(w.size(), 1);
    EXPECT_EQ(w(0), 1.0);
  }
  const Eigen::RowVectorXd want = heads.output.apply(heads.value.apply(token)).row(0);
  EXPECT_TRUE(a.output.isApprox(want, 1e-13));
  EXPECT_TRUE(a.output.isApprox(b.output, 1e-13));
}

TEST(ClassAttention, IdenticalTokensSplitEvenly) {
  std::mt19937_64 rng(7);
  const InferenceHeads heads(small_config(), rng);
  ad::Matrix tokens(2, 6);
  tokens.row(0) = normal_matrix(1, 6, 1.0, rng).row(0);
  tokens.row(1) = tokens.row(0);
  for (const auto& w : class_attention(random_mention(6, rng), tokens, heads).weights) {
    EXPECT_NEAR(w(0), 0.5, 1e-15);
    EXPECT_NEAR(w(1), 0.5, 1e-15);
  }
}

TEST(ClassAttention, IdentityProjectionsMatchNaiveOracle) {
  std::mt19937_64 rng(8);
  InferenceConfig cfg = small_config(1);
  cfg.attention_hidden = 6;
  InferenceHeads heads(cfg, rng);
  set_identity(heads.query);
  set_identity(heads.key);
  set_identity(heads.value);
  set_identity(heads.output);
  const auto m = random_mention(6, rng);
  const ad::Matrix k = normal_matrix(5, 6, 1.0, rng);
  std::vector<double> w(5);
  double norm = 0.0;
  for (int t = 0; t < 5; ++t) {
    double dot = 0.0;
    for (int c = 0; c < 6; ++c) dot += m.vector(c) * k(t, c);
    w[t] = std::exp(dot / std::sqrt(6.0));
    norm += w[t];
  }
  const auto got = class_attention(m, k, heads);
  for (int c = 0; c < 6; ++c) {
    double want = 0.0;
    for (int t = 0; t < 5; ++t) want += w[t] / norm * k(t, c);
    EXPECT_NEAR(got.output(c), want, 1e-10);
  }
}

TEST(ClassAttention, WeightsAreADistributionPerHead) {
  std::mt19937_64 rng(9);
  InferenceConfig cfg = small_config(4);
  cfg.init_std = 2.0;
  const InferenceHeads heads(cfg, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const ad::Matrix k = normal_matrix(1 + trial % 7, 6, 3.0, rng);
    const auto r = class_attention(random_mention(6, rng), k, heads);
    ASSERT_EQ(r.weights.size(), 4u);
    for (const auto& w : r.weights) {
      EXPECT_NEAR(w.sum(), 1.0, 1e-12);
      EXPECT_GE(w.minCoeff(), 0.0);
    }
    EXPECT_TRUE(r.output.allFinite());
  }
}

TEST(ClassAttention, DuplicatingEveryTokenLeavesSingleHeadOutput) {
  std::mt19937_64 rng(10);
  const InferenceHeads heads(small_config(1), rng);
  const auto m = random_mention(6, rng);
  const ad::Matrix k = normal_matrix(4, 6, 1.0, rng);
  ad::Matrix doubled(8, 6);
  doubled << k, k;
  EXPECT_TRUE(class_attention(m, doubled, heads).output.isApprox(class_attention(m, k, heads).output,
                                                                  1e-12));
}

TEST(ClassAttention, WidthMismatchIsConfigError) {
  std::mt19937_64 rng(11);
  const InferenceHeads heads(small_config(), rng);
  EXPECT_THROW(class_attention(random_mention(6, rng), normal_matrix(2, 5, 1.0, rng), heads),
               ConfigError);
  EXPECT_THROW(class_attention(random_mention(5, rng), normal_matrix(2, 6, 1.0, rng), heads),
               ConfigError);
}

TEST(ClassAttention, MeanPoolAggregationIgnoresMention) {
  std::mt19937_64 rng(12);
  InferenceConfig cfg = small_config();
  cfg.aggregation = ClassAggregation::kMeanPool;
  const InferenceHeads heads(cfg, rng);
  const ad::Matrix k = normal_matrix(3, 6, 1.0, rng);
  const Eigen::RowVectorXd got = adapt_class(random_mention(6, rng), k, heads);
  EXPECT_TRUE(got.isApprox(k.colwise().mean(), 1e-15));
}

TEST(ClassProbability, Contract) {
  MentionRepresentation e{Eigen::RowVectorXd::Unit(4, 0), {0, 0}};
  EXPECT_EQ(class_probability(e, Eigen::RowVectorXd::Unit(4, 1)), 0.5);

  e.vector = Eigen::RowVectorXd::Constant(4, 10.0);
  EXPECT_GT(class_probability(e, e.vector), 1.0 - 1e-12);

  std::mt19937_64 rng(13);
  const auto m = random_mention(4, rng);
  const Eigen::RowVectorXd x = normal_matrix(1, 4, 1.0, rng).row(0);
  MentionRepresentation neg = m;
  neg.vector = -m.vector;
  EXPECT_NEAR(class_probability(neg, x), 1.0 - class_probability(m, x), 1e-15);
  EXPECT_THROW(class_probability(m, Eigen::RowVectorXd::Zero(3)), ConfigError);
}

TEST(EntityLoss, HalfProbabilitiesGiveLn2) {
  std::mt19937_64 rng(14);
  InferenceConfig cfg = small_config();
  cfg.aggregation = ClassAggregation::kMeanPool;
  const InferenceHeads heads(cfg, rng);
  const ClassSet classes = raw_class_set({normal_matrix(2, 6, 1.0, rng), normal_matrix(3, 6, 1.0, rng)});
  const MentionRepresentation zero{Eigen::RowVectorXd::Zero(6), {0, 0}};
  EXPECT_NEAR(entity_loss(zero, classes, "C0", heads), kLn2, 1e-15);
  EXPECT_NEAR(entity_loss(zero, classes, std::nullopt, heads), kLn2, 1e-15);
}

TEST(EntityLoss, PerfectScoresApproachZero) {
  std::mt19937_64 rng(15);
  InferenceConfig cfg = small_config();
  cfg.aggregation = ClassAggregation::kMeanPool;
  const InferenceHeads heads(cfg, rng);
  ad::Matrix a = ad::Matrix::Zero(1, 6), b = ad::Matrix::Zero(1, 6);
  a(0, 0) = 1.0;
  b(0, 0) = -1.0;
  const ClassSet classes = raw_class_set({a, b});
  const MentionRepresentation e{Eigen::RowVectorXd::Unit(6, 0) * 60.0, {0, 0}};
  EXPECT_LT(entity_loss(e, classes, "C0", heads), 1e-20);
}

TEST(EntityLoss, InvariantToClassOrder) {
  std::mt19937_64 rng(16);
  const InferenceHeads heads(small_config(), rng);
  const std::vector<ad::Matrix> raw{normal_matrix(2, 6, 1.0, rng), normal_matrix(4, 6, 1.0, rng),
                                    normal_matrix(1, 6, 1.0, rng)};
  const ClassSet forward = raw_class_set(raw);
  ClassSet reversed;
  for (std::size_t k = raw.size(); k-- > 0;) {
    reversed.descriptions.push_back(forward.descriptions[k]);
    reversed.embeddings.push_back(forward.embeddings[k]);
  }
  const auto m = random_mention(6, rng);
  EXPECT_NEAR(entity_loss(m, forward, "C1", heads), entity_loss(m, reversed, "C1", heads), 1e-15);
}

TEST(EntityLoss, MatchesBceOracleAndRejectsUnknownGold) {
  std::mt19937_64 rng(17);
  const InferenceHeads heads(small_config(), rng);
  const ClassSet classes = raw_class_set({normal_matrix(2, 6, 1.0, rng), normal_matrix(3, 6, 1.0, rng)});
  const auto m = random_mention(6, rng);
  const Eigen::VectorXd s = class_matching_scores(m, classes, heads);
  const double p0 = 1.0 / (1.0 + std::exp(-s(0))), p1 = 1.0 / (1.0 + std::exp(-s(1)));
  EXPECT_NEAR(entity_loss(m, classes, "C1", heads), (-std::log(1 - p0) - std::log(p1)) / 2, 1e-12);
  EXPECT_THROW(entity_loss(m, classes, "NOPE", heads), DataError);
}

TEST(EntityLoss, GraphScoresMatchValueRoute) {
  for (const auto agg : {ClassAggregation::kAttention, ClassAggregation::kMeanPool}) {
    std::mt19937_64 rng(18);
    InferenceConfig cfg = small_config();
    cfg.aggregation = agg;
    InferenceHeads heads(cfg, rng);
    const ad::Matrix x = normal_matrix(5, 6, 1.0, rng);
    const std::vector<ad::Matrix> raw{normal_matrix(2, 6, 1.0, rng), normal_matrix(3, 6, 1.0, rng)};
    const ClassSet classes = raw_class_set(raw);
    const std::vector<SpanCandidate> spans{{0, 1}, {3, 4}};
    ad::Tape tape;
    const std::vector<ad::Var> emb{tape.constant(raw[0]), tape.constant(raw[1])};
    const ad::Var mentions = mention_representations(tape, tape.constant(x), spans, heads);
    const ad::Matrix got = class_matching_scores(tape, mentions, emb, heads, nullptr).value();
    for (std::size_t k = 0; k < spans.size(); ++k) {
      const auto m = mention_representation(x, spans[k], heads);
      const Eigen::VectorXd want = class_matching_scores(m, classes, heads);
      for (int c = 0; c < 2; ++c) EXPECT_NEAR(got(static_cast<Eigen::Index>(k), c), want(c), 1e-12);
    }
  }
}

TEST(EntityLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(19);
  InferenceHeads heads(small_config(), rng);
  ad::Parameter x("x", normal_matrix(4, 6, 1.0, rng));
  const std::vector<ad::Matrix> raw{normal_matrix(2, 6, 1.0, rng), normal_matrix(3, 6, 1.0, rng)};
  const std::vector<SpanCandidate> spans{{0, 1}, {2, 2}, {1, 3}};
  ad::Matrix targets = ad::Matrix::Zero(3, 2);
  targets(0, 1) = 1.0;
  auto loss = [&](bool grads) {
    ad::Tape tape(grads);
    const std::vector<ad::Var> emb{tape.constant(raw[0]), tape.constant(raw[1])};
    const ad::Var m = mention_representations(tape, tape.parameter(x), spans, heads);
    const ad::Var l = ad::scale(ad::bce_with_logits_sum(
                                    class_matching_scores(tape, m, emb, heads, nullptr), targets),
                                1.0 / 6.0);
    if (grads) tape.backward(l);
    return l.scalar();
  };
  ParameterList params = heads.parameters();
  params.push_back(&x);
  for (auto* p : params) p->zero_grad();
  loss(true);
  const double h = 1e-5;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      const double up = loss(false);
      p->value.data()[i] = saved - h;
      const double down = loss(false);
      p->value.data()[i] = saved;
      const double num = (up - down) / (2 * h);
      const double ana = p->grad.data()[i];
      EXPECT_LT(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}), 1e-4)
          << p->name << "[" << i << "]";
    }
  }
}

class EncodeClassTest : public ::testing::Test {
 protected:
  EncodeClassTest() : vocab(std::vector<std::string>{"a", "large", "city", "river", "w"}) {
    EncoderConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.ffn_hidden = 16;
    cfg.max_positions = 40;
    std::mt19937_64 rng(3);
    encoder = Encoder(cfg, rng);
    encoder.set_frozen(true);
  }
  Vocabulary vocab;
  Encoder encoder;
};

TEST_F(EncodeClassTest, DeterministicAndCached) {
  const ClassDescription d{"CITY", "a large city"};
  const TokenizerOptions opts{32, true};
  const ad::Matrix a = encode_class(d, encoder, vocab, opts);
  EXPECT_EQ(a.rows(), 3);
  EXPECT_EQ(a, encode_class(d, encoder, vocab, opts));

  ClassEmbeddingCache cache(opts);
  const auto first = cache.get(d, encoder, vocab);
  const auto second = cache.get(d, encoder, vocab);
  EXPECT_EQ(first.get(), second.get());
  EXPECT_EQ(*first, a);
  EXPECT_EQ(cache.size(), 1u);
  cache.clear();
  EXPECT_EQ(*cache.get(d, encoder, vocab), a);
}

TEST_F(EncodeClassTest, TruncatesAt32Tokens) {
  std::string text;
  for (int k = 0; k < 35; ++k) text += "w ";
  std::vector<std::string> warnings;
  const WarningSink previous = set_warning_sink([&](std::string_view m) { warnings.emplace_back(m); });
  const ad::Matrix m = encode_class({"X", text}, encoder, vocab, TokenizerOptions{32, true});
  set_warning_sink(previous);
  EXPECT_EQ(m.rows(), 32);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST_F(EncodeClassTest, ConcurrentCacheReadersShareOneEntry) {
  ClassEmbeddingCache cache(TokenizerOptions{32, true});
  const ClassDescription d{"RIVER", "a river"};
  std::vector<std::shared_ptr<const ad::Matrix>> got(4);
  std::vector<std::thread> threads;
  for (int k = 0; k < 4; ++k) {
    threads.emplace_back([&, k] { got[k] = cache.get(d, encoder, vocab); });
  }
  for (auto& t : threads) t.join();
  for (const auto& g : got) EXPECT_EQ(g.get(), got[0].get());
  EXPECT_EQ(cache.size(), 1u);
}

TEST_F(EncodeClassTest, ClassSetLookup) {
  ClassEmbeddingCache cache(TokenizerOptions{32, true});
  const ClassSet set = make_class_set({{"CITY", "a city"}, {"RIVER", "a river"}}, cache, encoder, vocab);
  EXPECT_EQ(set.size(), 2u);
  EXPECT_EQ(set.index_of("RIVER"), 1u);
  EXPECT_FALSE(set.index_of("LAKE").has_value());
  EXPECT_EQ(set.names(), (std::vector<std::string>{"CITY", "RIVER"}));
  EXPECT_THROW(make_class_set({{"A", "x"}, {"A", "y"}}, cache, encoder, vocab), ConfigError);
}

}  // namespace
}  // namespace spanner
