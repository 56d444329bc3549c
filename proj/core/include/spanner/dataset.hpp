#pragma once

#include "spanner/class_inference.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace spanner {

// Gold entity mention: inclusive token range plus class name.
struct SpanAnnotation {
  int start = 0;
  int end = 0;
  std::string label;

  SpanCandidate span() const { return {start, end}; }
  friend auto operator<=>(const SpanAnnotation&, const SpanAnnotation&) = default;
};

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<SpanAnnotation> spans;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct Dataset {
  std::vector<Sentence> sentences;
  std::vector<std::string> classes;  // sorted, unique
  std::string split;

  std::size_t size() const { return sentences.size(); }
  // Recomputes `classes` from the annotations.
  void refresh_classes();
  // Bounds, class membership and flatness (no overlapping gold spans).
  // Throws DataError naming the sentence on violation.
  void validate() const;
  std::size_t entity_count() const;
};

// CoNLL-style BIO: one "token<SEP>...<SEP>tag" per line (SEP = tab or space;
// first column is the token, last is the tag), blank lines between sentences,
// -DOCSTART- lines skipped. An I-X that does not continue an X span is
// repaired to B-X with a warning. ParseError (with line number) on malformed
// tags.
Dataset parse_conll_bio(std::istream& in, const std::string& split = "");
Dataset read_conll_bio(const std::filesystem::path& path,
                       const std::string& split = "");

// Writes "token\ttag" lines. SerializationError if a sentence has
// overlapping spans, which BIO cannot express.
void write_bio(const Dataset& dataset, std::ostream& out);
void write_bio(const Dataset& dataset, const std::filesystem::path& path);

// JSON object {"CLASS": "description", ...}; order preserved. ParseError on
// malformed JSON, ConfigError on duplicate names or empty descriptions.
std::vector<ClassDescription> parse_class_descriptions(std::string_view json_text);
std::vector<ClassDescription> read_class_descriptions(const std::filesystem::path& path);
std::string class_descriptions_to_json(std::span<const ClassDescription> classes);
void write_class_descriptions(std::span<const ClassDescription> classes,
                              const std::filesystem::path& path);

struct SyntheticTheme {
  std::string label;   // class-name fragment, e.g. "CITY"
  std::string plural;  // used in description text, e.g. "cities"
  std::vector<std::string> entries;  // multi-word entries separated by spaces
};

// The built-in disjoint theme lexicons.
const std::vector<SyntheticTheme>& builtin_themes();

// Desk-scale corpus generator. Entities come from disjoint per-class lexicons
// and sit in shared, class-agnostic context (cue words and filler), so span
// detection transfers across classes while class identity is only
// recoverable by matching mention tokens against description text.
struct SyntheticSpec {
  int class_count = 4;
  // Themes per class; with 2 each description enumerates two sub-lexicons.
  int sub_lexicons_per_class = 1;
  int lexicon_size = 12;  // entries taken from each theme
  int train_sentences = 200;
  int dev_sentences = 0;
  int test_sentences = 200;
  double entity_rate = 0.9;  // probability a sentence has >= 1 entity
  // The last `holdout_classes` classes never occur in train (zero-shot).
  int holdout_classes = 0;
  // Probability that a dev/test sentence contains an unlabeled entity-like
  // mention drawn from a theme no class covers.
  double distractor_rate = 0.0;
  // Probability that a filler word is a cue word. At 0 every cue precedes an
  // entity and context alone marks entity starts.
  double cue_noise = 0.15;
  std::uint64_t seed = 1;
  // Overrides the built-in bank when non-empty; lexicons must be disjoint.
  std::vector<SyntheticTheme> themes;

  const std::vector<SyntheticTheme>& theme_bank() const {
    return themes.empty() ? builtin_themes() : themes;
  }
  void validate() const;
};

struct SyntheticCorpus {
  Dataset train;
  Dataset dev;
  Dataset test;
  std::vector<ClassDescription> descriptions;  // every class, incl. held out
  std::vector<std::string> train_classes;
  std::vector<std::string> held_out_classes;
  // Entries of each class lexicon, in class order (multi-word entries joined
  // by spaces).
  std::vector<std::vector<std::string>> lexicons;
};

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Writes train.bio / dev.bio / test.bio / descriptions.json into dir.
void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace spanner
