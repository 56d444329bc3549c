#include "spanner/encoder.hpp"
#include "spanner/errors.hpp"

#include <gtest/gtest.h>

#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace spanner {
namespace {

// Collects warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture()
      : previous_(set_warning_sink([this](std::string_view m) { messages.emplace_back(m); })) {}
  ~WarningCapture() { set_warning_sink(previous_); }
  std::vector<std::string> messages;

 private:
  WarningSink previous_;
};

TEST(BuildVocab, MinCountFiltersRareTokens) {
  const std::vector<std::string> corpus{"a b", "a c"};
  const Vocabulary v = build_vocab(corpus, 2);
  EXPECT_EQ(v.size(), Vocabulary::kReservedCount + 1);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_EQ(v.id("b"), Vocabulary::kUnknownId);
  EXPECT_EQ(v.id("c"), Vocabulary::kUnknownId);
}

TEST(BuildVocab, SingleToken) {
  const std::vector<std::string> corpus{"x"};
  EXPECT_EQ(build_vocab(corpus, 1).size(), Vocabulary::kReservedCount + 1);
}

TEST(BuildVocab, EmptyCorpusIsAnError) {
  EXPECT_THROW(build_vocab(std::vector<std::string>{}, 1), ConfigError);
}

TEST(BuildVocab, OrdersByFrequencyThenText) {
  const std::vector<std::string> corpus{"b a c", "c b", "c"};
  const Vocabulary v = build_vocab(corpus, 1);
  EXPECT_EQ(v.id("c"), 2);
  EXPECT_EQ(v.id("b"), 3);
  EXPECT_EQ(v.id("a"), 4);
}

TEST(BuildVocab, LowercasesByDefault) {
  const std::vector<std::string> corpus{"Paris paris PARIS"};
  const Vocabulary v = build_vocab(corpus, 3);
  EXPECT_TRUE(v.contains("paris"));
  EXPECT_EQ(build_vocab(corpus, 1, /*lowercase=*/false).size(), Vocabulary::kReservedCount + 3);
}

TEST(Vocabulary, RejectsDuplicatesAndBlankTokens) {
  EXPECT_THROW(Vocabulary(std::vector<std::string>{"a", "a"}), ConfigError);
  EXPECT_THROW(Vocabulary(std::vector<std::string>{"a b"}), ConfigError);
  EXPECT_THROW(Vocabulary(std::vector<std::string>{""}), ConfigError);
}

TEST(Vocabulary, SaveLoadKeepsIds) {
  const Vocabulary v(std::vector<std::string>{"john", "lives", "in", "paris"});
  std::stringstream buf;
  v.save(buf);
  const Vocabulary back = Vocabulary::load(buf);
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.id("paris"), v.id("paris"));
  EXPECT_THROW(v.token(99), DataError);
}

TEST(Tokenize, OneIdPerWord) {
  const Vocabulary v(std::vector<std::string>{"john", "lives", "in", "paris"});
  const TokenSequence s = tokenize("John lives in Paris", v);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s.ids[3], v.id("paris"));
  EXPECT_FALSE(s.truncated);
}

TEST(Tokenize, UnknownWordMapsToUnknownId) {
  const Vocabulary v(std::vector<std::string>{"a"});
  const TokenSequence s = tokenize("zzz", v);
  EXPECT_EQ(s.ids, std::vector<int>{Vocabulary::kUnknownId});
}

TEST(Tokenize, TruncatesWithWarning) {
  const Vocabulary v(std::vector<std::string>{"w"});
  std::string text;
  for (int k = 0; k < 200; ++k) text += "w ";
  WarningCapture warnings;
  const TokenSequence s = tokenize(text, v, TokenizerOptions{128, true});
  EXPECT_EQ(s.size(), 128u);
  EXPECT_TRUE(s.truncated);
  ASSERT_EQ(warnings.messages.size(), 1u);
  EXPECT_NE(warnings.messages[0].find("truncated"), std::string::npos);
}

TEST(Tokenize, DetokenizeRoundTripsInVocabularyText) {
  const Vocabulary v(std::vector<std::string>{"new", "york", "is", "big"});
  const auto words = detokenize(tokenize("new york is big", v), v);
  EXPECT_EQ(words, (std::vector<std::string>{"new", "york", "is", "big"}));
  EXPECT_EQ(tokenize(words, v).size(), 4u);
}

class EncoderTest : public ::testing::Test {
 protected:
  EncoderTest() {
    config.vocab_size = 20;
    config.hidden = 16;
    config.heads = 4;
    config.ffn_hidden = 32;
    config.max_positions = 12;
    encoder = Encoder(config, rng);
  }
  EncoderConfig config;
  std::mt19937_64 rng{7};
  Encoder encoder;
};

TEST_F(EncoderTest, OutputIsTokensByHidden) {
  const std::vector<int> ids{2, 5, 7};
  const ad::Matrix x = encoder.encode(ids);
  EXPECT_EQ(x.rows(), 3);
  EXPECT_EQ(x.cols(), 16);
  EXPECT_TRUE(x.allFinite());
}

TEST_F(EncoderTest, EvaluationIsDeterministic) {
  const std::vector<int> ids{3, 4, 3, 9};
  EXPECT_EQ(encoder.encode(ids), encoder.encode(ids));
}

TEST_F(EncoderTest, GraphForwardWithoutDropoutMatchesEncode) {
  const std::vector<int> ids{3, 4, 3, 9};
  ad::Tape tape;
  EXPECT_TRUE(encoder.forward(tape, ids, nullptr).value().isApprox(encoder.encode(ids), 1e-14));
}

TEST_F(EncoderTest, DropoutChangesTrainingForward) {
  const std::vector<int> ids{3, 4, 3, 9};
  std::mt19937_64 drop(1);
  ad::Tape tape;
  EXPECT_NE(encoder.forward(tape, ids, &drop).value(), encoder.encode(ids));
}

TEST_F(EncoderTest, RejectsBadIds) {
  EXPECT_THROW(encoder.encode(std::vector<int>{20}), DataError);
  EXPECT_THROW(encoder.encode(std::vector<int>{-1}), DataError);
  EXPECT_THROW(encoder.encode(std::vector<int>{}), DataError);
  EXPECT_THROW(encoder.encode(std::vector<int>(13, 2)), DataError);
}

TEST_F(EncoderTest, ConfigValidation) {
  EncoderConfig bad = config;
  bad.heads = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = config;
  bad.dropout = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = config;
  bad.hidden = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST_F(EncoderTest, CloneIsIndependentAndRenamed) {
  Encoder copy = encoder.clone("description");
  const auto params = copy.parameters();
  EXPECT_EQ(params.front()->name.rfind("description.", 0), 0u);
  params.front()->value.setZero();
  EXPECT_NE(encoder.parameters().front()->value.norm(), 0.0);
}

TEST_F(EncoderTest, FrozenEncoderTakesNoGradient) {
  encoder.set_frozen(true);
  const std::vector<int> ids{3, 4};
  ad::Tape tape;
  ad::Var out = ad::sum_all(encoder.forward(tape, ids, nullptr));
  tape.backward(out);
  for (const auto* p : encoder.parameters()) EXPECT_EQ(p->grad.norm(), 0.0) << p->name;
}

TEST_F(EncoderTest, FixedEmbeddingsStayFrozenWhenUnfreezing) {
  config.train_embeddings = false;
  std::mt19937_64 r(3);
  Encoder e(config, r);
  const auto params = e.parameters();
  EXPECT_TRUE(params[0]->frozen);
  EXPECT_TRUE(params[1]->frozen);
  EXPECT_FALSE(params[2]->frozen);
}

TEST_F(EncoderTest, ConcurrentEncodingAgrees) {
  const std::vector<int> ids{2, 3, 4, 5, 6};
  const ad::Matrix want = encoder.encode(ids);
  std::vector<ad::Matrix> got(4);
  std::vector<std::thread> threads;
  for (int k = 0; k < 4; ++k) {
    threads.emplace_back([&, k] { got[k] = encoder.encode(ids); });
  }
  for (auto& t : threads) t.join();
  for (const auto& g : got) EXPECT_EQ(g, want);
}

TEST_F(EncoderTest, SameSeedSameWeights) {
  std::mt19937_64 a(99), b(99);
  Encoder x(config, a), y(config, b);
  const auto px = x.parameters();
  const auto py = y.parameters();
  for (std::size_t k = 0; k < px.size(); ++k) EXPECT_EQ(px[k]->value, py[k]->value);
}

}  // namespace
}  // namespace spanner
