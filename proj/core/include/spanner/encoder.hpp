#pragma once

#include "spanner/autodiff.hpp"
#include "spanner/layers.hpp"

#include <iosfwd>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace spanner {

// Word-level vocabulary with two reserved ids. Ids are dense and stable:
// reserved block first, then tokens in the order they were registered.
class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnknownId = 1;
  static constexpr int kReservedCount = 2;

  Vocabulary();
  // `tokens` excludes the reserved block; duplicates are rejected.
  explicit Vocabulary(std::span<const std::string> tokens);

  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  // Non-reserved tokens in id order.
  std::span<const std::string> entries() const {
    return std::span<const std::string>(tokens_).subspan(kReservedCount);
  }

  // Newline-delimited token list; line index + kReservedCount = id.
  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TokenizerOptions {
  int max_length = 128;
  bool lowercase = true;

  friend bool operator==(const TokenizerOptions&, const TokenizerOptions&) = default;
};

struct TokenSequence {
  std::vector<int> ids;
  bool truncated = false;

  std::size_t size() const { return ids.size(); }
};

std::vector<std::string> split_whitespace(std::string_view text);
std::string to_lower(std::string_view text);

// Tokens with frequency >= min_count get ids, ordered by descending frequency
// then lexicographically. Throws ConfigError on an empty corpus.
Vocabulary build_vocab(std::span<const std::string> corpus, int min_count,
                       bool lowercase = true);

// One id per whitespace-delimited token; truncates to max_length and emits a
// warning when it does.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab,
                       const TokenizerOptions& options = {});
TokenSequence tokenize(std::span<const std::string> tokens,
                       const Vocabulary& vocab,
                       const TokenizerOptions& options = {});
std::vector<std::string> detokenize(const TokenSequence& tokens,
                                    const Vocabulary& vocab);

struct EncoderConfig {
  int vocab_size = 0;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int ffn_hidden = 256;
  int max_positions = 128;
  double dropout = 0.1;
  double init_std = 0.02;
  // When false the token and position tables stay at their initial values,
  // so tokens never seen in training keep the same input distribution as
  // the ones that were.
  bool train_embeddings = true;

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Post-norm transformer encoder: learned token and position embeddings,
// `layers` blocks of self-attention + GELU feed-forward.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, std::mt19937_64& rng,
          const std::string& name = "encoder");

  const EncoderConfig& config() const { return config_; }
  int hidden() const { return config_.hidden; }

  // Training/graph forward. Dropout is active iff dropout_rng is non-null.
  ad::Var forward(ad::Tape& tape, std::span<const int> ids,
                  std::mt19937_64* dropout_rng);

  // Deterministic evaluation-mode forward (no dropout). Thread-safe.
  ad::Matrix encode(std::span<const int> ids) const;
  ad::Matrix encode(const TokenSequence& tokens) const {
    return encode(std::span<const int>(tokens.ids));
  }

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  // Deep copy under another parameter-name prefix.
  Encoder clone(const std::string& name) const;

  ParameterList parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  struct Block {
    Linear query, key, value, output;
    LayerNorm attention_norm;
    Linear ffn_in, ffn_out;
    LayerNorm ffn_norm;
  };

  void check_ids(std::span<const int> ids) const;
  void rename(const std::string& name);

  EncoderConfig config_;
  std::string name_;
  ad::Parameter token_embedding_;
  ad::Parameter position_embedding_;
  LayerNorm embedding_norm_;
  std::vector<Block> blocks_;
  bool frozen_ = false;
};

}  // namespace spanner
