#include "spanner/encoder.hpp"

#include "spanner/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace spanner {

Vocabulary::Vocabulary() : tokens_{"[PAD]", "[UNK]"} {
  index_.emplace(tokens_[kPadId], kPadId);
  index_.emplace(tokens_[kUnknownId], kUnknownId);
}

Vocabulary::Vocabulary(std::span<const std::string> tokens) : Vocabulary() {
  for (const auto& tok : tokens) {
    if (tok.empty() || tok.find_first_of(" \t\r\n") != std::string::npos) {
      throw ConfigError("vocabulary token must be a non-empty word: '" + tok + "'");
    }
    const int next = static_cast<int>(tokens_.size());
    if (!index_.emplace(tok, next).second) {
      throw ConfigError("duplicate vocabulary token: " + tok);
    }
    tokens_.push_back(tok);
  }
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknownId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(std::ostream& out) const {
  for (const auto& tok : entries()) out << tok << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(tokens);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write vocabulary: " + path.string());
  save(out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read vocabulary: " + path.string());
  return load(in);
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

Vocabulary build_vocab(std::span<const std::string> corpus, int min_count,
                       bool lowercase) {
  if (corpus.empty()) throw ConfigError("build_vocab: empty corpus");
  std::map<std::string, int> counts;
  for (const auto& sentence : corpus) {
    for (auto& tok : split_whitespace(sentence)) {
      ++counts[lowercase ? to_lower(tok) : tok];
    }
  }
  std::vector<std::pair<std::string, int>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && tok != "[PAD]" && tok != "[UNK]") kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocabulary(tokens);
}

TokenSequence tokenize(std::span<const std::string> tokens,
                       const Vocabulary& vocab,
                       const TokenizerOptions& options) {
  TokenSequence seq;
  const std::size_t limit = static_cast<std::size_t>(std::max(options.max_length, 0));
  const std::size_t n = std::min(tokens.size(), limit);
  seq.ids.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    seq.ids.push_back(options.lowercase ? vocab.id(to_lower(tokens[k]))
                                        : vocab.id(tokens[k]));
  }
  if (tokens.size() > limit) {
    seq.truncated = true;
    std::ostringstream msg;
    msg << "sequence of " << tokens.size() << " tokens truncated to " << limit;
    warn(msg.str());
  }
  return seq;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab,
                       const TokenizerOptions& options) {
  const auto words = split_whitespace(text);
  return tokenize(std::span<const std::string>(words), vocab, options);
}

std::vector<std::string> detokenize(const TokenSequence& tokens,
                                    const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (int id : tokens.ids) out.push_back(vocab.token(id));
  return out;
}

void EncoderConfig::validate() const {
  if (vocab_size <= Vocabulary::kReservedCount - 1 || hidden <= 0 ||
      layers < 0 || heads <= 0 || ffn_hidden <= 0 || max_positions <= 0) {
    throw ConfigError("encoder config: sizes must be positive");
  }
  if (hidden % heads != 0) {
    throw ConfigError("encoder config: heads must divide hidden width");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("encoder config: dropout must be in [0, 1)");
  }
}

Encoder::Encoder(const EncoderConfig& config, std::mt19937_64& rng,
                 const std::string& name)
    : config_(config), name_(name) {
  config_.validate();
  const int h = config_.hidden;
  const double sd = config_.init_std;
  token_embedding_ = ad::Parameter(name + ".token_embedding",
                                   normal_matrix(config_.vocab_size, h, sd, rng));
  position_embedding_ = ad::Parameter(
      name + ".position_embedding", normal_matrix(config_.max_positions, h, sd, rng));
  embedding_norm_ = LayerNorm(name + ".embedding_norm", h);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    blocks_.push_back(Block{
        Linear(p + ".attention.query", h, h, sd, rng),
        Linear(p + ".attention.key", h, h, sd, rng),
        Linear(p + ".attention.value", h, h, sd, rng),
        Linear(p + ".attention.output", h, h, sd, rng),
        LayerNorm(p + ".attention_norm", h),
        Linear(p + ".ffn.in", h, config_.ffn_hidden, sd, rng),
        Linear(p + ".ffn.out", config_.ffn_hidden, h, sd, rng),
        LayerNorm(p + ".ffn_norm", h),
    });
  }
  set_frozen(false);
}

void Encoder::check_ids(std::span<const int> ids) const {
  if (ids.empty()) throw DataError("encode: empty token sequence");
  if (static_cast<int>(ids.size()) > config_.max_positions) {
    throw DataError("encode: sequence length " + std::to_string(ids.size()) +
                    " exceeds max positions " +
                    std::to_string(config_.max_positions));
  }
  for (int id : ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw DataError("encode: token id " + std::to_string(id) +
                      " out of range for vocabulary of size " +
                      std::to_string(config_.vocab_size));
    }
  }
}

ad::Var Encoder::forward(ad::Tape& tape, std::span<const int> ids,
                         std::mt19937_64* dropout_rng) {
  check_ids(ids);
  const double rate = dropout_rng != nullptr ? config_.dropout : 0.0;
  std::vector<int> positions(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) positions[k] = static_cast<int>(k);

  ad::Var x = ad::add(ad::embedding_lookup(tape, token_embedding_, ids),
                      ad::embedding_lookup(tape, position_embedding_, positions));
  x = ad::dropout(embedding_norm_(tape, x), rate, dropout_rng);
  for (auto& block : blocks_) {
    ad::Var attended = multi_head_attention(
        block.query(tape, x), block.key(tape, x), block.value(tape, x),
        config_.heads, rate, dropout_rng);
    ad::Var projected = ad::dropout(block.output(tape, attended), rate, dropout_rng);
    x = block.attention_norm(tape, ad::add(x, projected));
    ad::Var ff = block.ffn_out(tape, ad::gelu(block.ffn_in(tape, x)));
    x = block.ffn_norm(tape, ad::add(x, ad::dropout(ff, rate, dropout_rng)));
  }
  return x;
}

ad::Matrix Encoder::encode(std::span<const int> ids) const {
  // A non-recording tape never writes to the parameters it reads.
  ad::Tape tape(/*record_gradients=*/false);
  return const_cast<Encoder*>(this)->forward(tape, ids, nullptr).value();
}

void Encoder::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (ad::Parameter* p : parameters()) p->frozen = frozen;
  if (!config_.train_embeddings) {
    token_embedding_.frozen = true;
    position_embedding_.frozen = true;
  }
}

void Encoder::rename(const std::string& name) {
  for (ad::Parameter* p : parameters()) {
    p->name = name + p->name.substr(name_.size());
  }
  name_ = name;
}

Encoder Encoder::clone(const std::string& name) const {
  Encoder copy = *this;
  copy.rename(name);
  return copy;
}

ParameterList Encoder::parameters() {
  ParameterList out{&token_embedding_, &position_embedding_,
                    &embedding_norm_.gain, &embedding_norm_.bias};
  for (auto& b : blocks_) {
    for (Linear* lin : {&b.query, &b.key, &b.value, &b.output}) {
      out.push_back(&lin->weight);
      out.push_back(&lin->bias);
    }
    out.push_back(&b.attention_norm.gain);
    out.push_back(&b.attention_norm.bias);
    out.push_back(&b.ffn_in.weight);
    out.push_back(&b.ffn_in.bias);
    out.push_back(&b.ffn_out.weight);
    out.push_back(&b.ffn_out.bias);
    out.push_back(&b.ffn_norm.gain);
    out.push_back(&b.ffn_norm.bias);
  }
  return out;
}

std::vector<const ad::Parameter*> Encoder::parameters() const {
  auto mutable_list = const_cast<Encoder*>(this)->parameters();
  return {mutable_list.begin(), mutable_list.end()};
}

}  // namespace spanner
