#include "spanner/dataset.hpp"

#include "spanner/errors.hpp"

#include <algorithm>
#include <random>
#include <set>

namespace spanner {

// Disjoint lexicons; multi-word entries are spread through each list so any
// prefix contains a few of them.
const std::vector<SyntheticTheme>& builtin_themes() {
  static const std::vector<SyntheticTheme> bank = {
      {"CITY", "cities",
       {"paris", "berlin", "new york", "tokyo", "madrid", "cairo", "hong kong",
        "lima", "oslo", "rome", "buenos aires", "dublin", "vienna", "lisbon"}},
      {"PERSON", "people",
       {"alice", "bob", "mary jane", "carol", "dave", "erin", "john smith",
        "frank", "grace", "heidi", "ivan", "judy", "oscar", "peggy"}},
      {"COMPANY", "companies",
       {"acme", "globex", "wayne enterprises", "initech", "umbrella", "hooli",
        "stark industries", "soylent", "wonka", "tyrell", "cyberdyne",
        "vandelay", "pied piper", "massive dynamic"}},
      {"RIVER", "rivers",
       {"nile", "amazon", "rio grande", "danube", "rhine", "volga", "yellow river",
        "thames", "seine", "ganges", "mekong", "yukon", "congo", "tagus"}},
      {"EVENT", "events",
       {"olympics", "worldcup", "grand prix", "wimbledon", "superbowl",
        "oktoberfest", "tour de france", "carnival", "diwali", "marathon",
        "expo", "hanami", "mardi gras", "eurovision"}},
      {"NATIONALITY", "nationalities",
       {"french", "german", "japanese", "spanish", "egyptian", "peruvian",
        "norwegian", "italian", "irish", "austrian", "portuguese", "czech",
        "danish", "chilean"}},
      {"PRODUCT", "products",
       {"iphone", "kindle", "game boy", "walkman", "playstation", "xbox",
        "pixel", "galaxy", "thinkpad", "macbook", "roomba", "fitbit",
        "apple watch", "segway"}},
      {"UNIVERSITY", "universities",
       {"harvard", "yale", "eth zurich", "stanford", "oxford", "cambridge",
        "princeton", "caltech", "sorbonne", "cornell", "duke", "mcgill",
        "trinity college", "tsinghua"}},
      {"ANIMAL", "animals",
       {"tiger", "zebra", "polar bear", "panda", "koala", "giraffe", "hippo",
        "otter", "walrus", "lemur", "bison", "jaguar", "falcon", "red fox"}},
      {"DISH", "dishes",
       {"sushi", "paella", "pad thai", "lasagna", "burrito", "croissant",
        "ramen", "falafel", "goulash", "pierogi", "risotto", "moussaka",
        "fish pie", "tacos"}},
      {"INSTRUMENT", "instruments",
       {"violin", "cello", "trumpet", "banjo", "ukulele", "harp", "oboe",
        "tuba", "sitar", "clarinet", "accordion", "bagpipes", "steel drum",
        "piano"}},
  };
  return bank;
}

namespace {

const std::vector<std::string> kFillers = {
    "the",   "report", "noted",    "that",   "plan",    "was",    "discussed",
    "during", "meeting", "while",  "several", "agreed", "others", "waited",
    "for",   "more",   "news",     "this",   "issue",   "it",     "seems",
    "many",  "officials", "said",  "week",   "last",    "very",   "quite",
    "then",  "there",  "some",     "of",     "them",    "we",     "heard",
    "story", "an",     "long",     "short",  "update",  "is",     "not",
    "clear", "whether", "anyone",  "will",   "comment", "soon"};
const std::vector<std::string> kPreCues = {"in", "at", "from", "with", "near", "by"};
const std::vector<std::string> kPostCues = {"yesterday", "recently", "again",
                                            "today", "tonight", "twice"};

template <typename T>
const T& pick(const std::vector<T>& items, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, items.size() - 1);
  return items[dist(rng)];
}

bool coin(double p, std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

struct ClassLexicon {
  std::string name;
  std::vector<std::vector<std::string>> entries;  // tokenized entries
};

void append_filler(std::vector<std::string>& tokens, double cue_noise,
                   std::mt19937_64& rng) {
  const int n = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int k = 0; k < n; ++k) {
    tokens.push_back(coin(cue_noise, rng) ? pick(kPreCues, rng) : pick(kFillers, rng));
  }
}

// Appends "cue entity [post-cue]"; returns the entity's token range.
SpanCandidate append_entity(std::vector<std::string>& tokens,
                            const std::vector<std::string>& entity,
                            std::mt19937_64& rng) {
  tokens.push_back(pick(kPreCues, rng));
  const int start = static_cast<int>(tokens.size());
  tokens.insert(tokens.end(), entity.begin(), entity.end());
  const int end = static_cast<int>(tokens.size()) - 1;
  if (coin(0.5, rng)) tokens.push_back(pick(kPostCues, rng));
  return {start, end};
}

Sentence make_sentence(const std::vector<const ClassLexicon*>& classes,
                       const ClassLexicon* distractor, double entity_rate,
                       double distractor_rate, double cue_noise,
                       std::mt19937_64& rng) {
  struct Slot {
    const ClassLexicon* lexicon;
    bool labeled;
  };
  std::vector<Slot> slots;
  if (coin(entity_rate, rng)) {
    const int n = coin(0.35, rng) ? 2 : 1;
    for (int k = 0; k < n; ++k) slots.push_back({pick(classes, rng), true});
  }
  if (distractor != nullptr && coin(distractor_rate, rng)) {
    const auto pos = std::uniform_int_distribution<std::size_t>(0, slots.size())(rng);
    slots.insert(slots.begin() + static_cast<std::ptrdiff_t>(pos), {distractor, false});
  }

  Sentence s;
  if (coin(0.7, rng)) append_filler(s.tokens, cue_noise, rng);
  for (const auto& slot : slots) {
    const auto& entity = pick(slot.lexicon->entries, rng);
    const SpanCandidate span = append_entity(s.tokens, entity, rng);
    if (slot.labeled) s.spans.push_back({span.start, span.end, slot.lexicon->name});
    append_filler(s.tokens, cue_noise, rng);
  }
  if (s.tokens.empty()) append_filler(s.tokens, cue_noise, rng);
  return s;
}

Dataset make_split(int count, const std::vector<const ClassLexicon*>& classes,
                   const ClassLexicon* distractor, const SyntheticSpec& spec,
                   double distractor_rate, const std::string& name,
                   std::set<std::vector<std::string>>& seen,
                   std::mt19937_64& rng) {
  Dataset d;
  d.split = name;
  int attempts = 0;
  while (static_cast<int>(d.sentences.size()) < count) {
    Sentence s = make_sentence(classes, distractor, spec.entity_rate,
                               distractor_rate, spec.cue_noise, rng);
    // Splits never share a sentence; give up on uniqueness only if the
    // generator is clearly saturated.
    if (!seen.insert(s.tokens).second && ++attempts < 100 * count) continue;
    d.sentences.push_back(std::move(s));
  }
  d.refresh_classes();
  return d;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (class_count < 1 || sub_lexicons_per_class < 1 || lexicon_size < 1) {
    throw ConfigError("synthetic spec: counts must be positive");
  }
  if (train_sentences < 0 || dev_sentences < 0 || test_sentences < 0) {
    throw ConfigError("synthetic spec: sentence counts must be non-negative");
  }
  if (!(entity_rate > 0.0 && entity_rate <= 1.0)) {
    throw ConfigError("synthetic spec: entity rate must be in (0, 1]");
  }
  if (cue_noise < 0.0 || cue_noise > 1.0) {
    throw ConfigError("synthetic spec: cue noise must be in [0, 1]");
  }
  if (distractor_rate < 0.0 || distractor_rate > 1.0) {
    throw ConfigError("synthetic spec: distractor rate must be in [0, 1]");
  }
  if (holdout_classes < 0 || holdout_classes >= class_count) {
    throw ConfigError("synthetic spec: holdout must leave at least one training class");
  }
  const auto& bank = theme_bank();
  const auto needed = static_cast<std::size_t>(class_count * sub_lexicons_per_class +
                                               (distractor_rate > 0.0 ? 1 : 0));
  if (needed > bank.size()) {
    throw ConfigError("synthetic spec: needs " + std::to_string(needed) +
                      " themes, only " + std::to_string(bank.size()) +
                      " available");
  }
  for (const auto& t : bank) {
    if (static_cast<std::size_t>(lexicon_size) > t.entries.size()) {
      throw ConfigError("synthetic spec: lexicon size exceeds theme size");
    }
  }
}

static void check_disjoint_lexicons(const std::vector<std::vector<std::string>>& lexicons) {
  std::set<std::string> words;
  for (const auto& lex : lexicons) {
    std::set<std::string> own;
    for (const auto& entry : lex) {
      for (const auto& w : split_whitespace(entry)) own.insert(w);
    }
    for (const auto& w : own) {
      if (!words.insert(w).second) {
        throw ConfigError("synthetic spec: lexicons overlap on '" + w + "'");
      }
    }
  }
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto& bank = spec.theme_bank();
  std::mt19937_64 rng(spec.seed);

  // Theme assignment is a seeded permutation so different seeds exercise
  // different lexicons.
  std::vector<std::size_t> order(bank.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::shuffle(order.begin(), order.end(), rng);

  SyntheticCorpus corpus;
  std::vector<ClassLexicon> lexicons;
  std::size_t next_theme = 0;
  for (int c = 0; c < spec.class_count; ++c) {
    ClassLexicon lex;
    std::string text;
    std::vector<std::string> flat;
    for (int s = 0; s < spec.sub_lexicons_per_class; ++s) {
      const SyntheticTheme& theme = bank[order[next_theme++]];
      lex.name += (s > 0 ? "_" : "") + theme.label;
      text += (s > 0 ? " and " : "") + theme.plural + " such as";
      for (int e = 0; e < spec.lexicon_size; ++e) {
        const auto& entry = theme.entries[static_cast<std::size_t>(e)];
        lex.entries.push_back(split_whitespace(entry));
        flat.push_back(entry);
        text += " " + entry;
      }
    }
    corpus.descriptions.push_back(ClassDescription{lex.name, text});
    corpus.lexicons.push_back(std::move(flat));
    lexicons.push_back(std::move(lex));
  }
  std::optional<ClassLexicon> distractor;
  if (spec.distractor_rate > 0.0) {
    const SyntheticTheme& theme = bank[order[next_theme++]];
    distractor = ClassLexicon{theme.label, {}};
    for (int e = 0; e < spec.lexicon_size; ++e) {
      distractor->entries.push_back(
          split_whitespace(theme.entries[static_cast<std::size_t>(e)]));
    }
  }
  {
    auto all = corpus.lexicons;
    if (distractor) {
      all.emplace_back();
      for (const auto& e : distractor->entries) {
        std::string joined;
        for (const auto& w : e) joined += (joined.empty() ? "" : " ") + w;
        all.back().push_back(joined);
      }
    }
    check_disjoint_lexicons(all);
  }

  std::vector<const ClassLexicon*> train_classes, all_classes;
  for (int c = 0; c < spec.class_count; ++c) {
    all_classes.push_back(&lexicons[static_cast<std::size_t>(c)]);
    if (c < spec.class_count - spec.holdout_classes) {
      train_classes.push_back(&lexicons[static_cast<std::size_t>(c)]);
      corpus.train_classes.push_back(lexicons[static_cast<std::size_t>(c)].name);
    } else {
      corpus.held_out_classes.push_back(lexicons[static_cast<std::size_t>(c)].name);
    }
  }

  std::set<std::vector<std::string>> seen;
  const ClassLexicon* distractor_ptr = distractor ? &*distractor : nullptr;
  corpus.train = make_split(spec.train_sentences, train_classes, nullptr, spec, 0.0,
                            "train", seen, rng);
  corpus.dev = make_split(spec.dev_sentences, all_classes, distractor_ptr, spec,
                          spec.distractor_rate, "dev", seen, rng);
  corpus.test = make_split(spec.test_sentences, all_classes, distractor_ptr, spec,
                           spec.distractor_rate, "test", seen, rng);
  return corpus;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_bio(corpus.train, dir / "train.bio");
  write_bio(corpus.dev, dir / "dev.bio");
  write_bio(corpus.test, dir / "test.bio");
  write_class_descriptions(corpus.descriptions, dir / "descriptions.json");
}

}  // namespace spanner
