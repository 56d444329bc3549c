#include "spanner/dataset.hpp"

#include "spanner/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace spanner {

void Dataset::refresh_classes() {
  std::set<std::string> labels;
  for (const auto& s : sentences) {
    for (const auto& a : s.spans) labels.insert(a.label);
  }
  classes.assign(labels.begin(), labels.end());
}

void Dataset::validate() const {
  const std::set<std::string> known(classes.begin(), classes.end());
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const auto& s = sentences[k];
    const int n = static_cast<int>(s.tokens.size());
    std::vector<SpanCandidate> spans;
    for (const auto& a : s.spans) {
      if (a.start < 0 || a.end < a.start || a.end >= n) {
        throw DataError("sentence " + std::to_string(k) + ": span [" +
                        std::to_string(a.start) + ", " + std::to_string(a.end) +
                        "] out of bounds");
      }
      if (!known.contains(a.label)) {
        throw DataError("sentence " + std::to_string(k) + ": class '" + a.label +
                        "' not in the class set");
      }
      spans.push_back(a.span());
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i - 1].overlaps(spans[i])) {
        throw DataError("sentence " + std::to_string(k) + ": overlapping gold spans");
      }
    }
  }
}

std::size_t Dataset::entity_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.spans.size();
  return n;
}

Dataset parse_conll_bio(std::istream& in, const std::string& split) {
  Dataset data;
  data.split = split;
  Sentence current;
  std::string open_label;  // class of the span being extended, empty if none
  auto flush = [&] {
    if (!current.tokens.empty()) data.sentences.push_back(std::move(current));
    current = Sentence{};
    open_label.clear();
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_whitespace(line);
    if (fields.empty()) {
      flush();
      continue;
    }
    if (fields.front() == "-DOCSTART-") {
      flush();
      continue;
    }
    if (fields.size() < 2) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 'token tag'");
    }
    const std::string& tag = fields.back();
    const int index = static_cast<int>(current.tokens.size());
    current.tokens.push_back(fields.front());
    if (tag == "O") {
      open_label.clear();
      continue;
    }
    if (tag.size() < 3 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I')) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed tag '" +
                       tag + "'");
    }
    const std::string label = tag.substr(2);
    if (tag[0] == 'I' && open_label == label) {
      current.spans.back().end = index;
      continue;
    }
    if (tag[0] == 'I') {
      warn("line " + std::to_string(line_no) + ": " + tag +
           " does not continue a span; treated as B-" + label);
    }
    current.spans.push_back(SpanAnnotation{index, index, label});
    open_label = label;
  }
  flush();
  data.refresh_classes();
  data.validate();
  return data;
}

Dataset read_conll_bio(const std::filesystem::path& path, const std::string& split) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open BIO file: " + path.string());
  return parse_conll_bio(in, split);
}

void write_bio(const Dataset& dataset, std::ostream& out) {
  for (std::size_t k = 0; k < dataset.sentences.size(); ++k) {
    const auto& s = dataset.sentences[k];
    std::vector<std::string> tags(s.tokens.size(), "O");
    std::vector<SpanAnnotation> spans = s.spans;
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 0; i < spans.size(); ++i) {
      const auto& a = spans[i];
      if (a.start < 0 || a.end < a.start ||
          a.end >= static_cast<int>(s.tokens.size())) {
        throw SerializationError("sentence " + std::to_string(k) +
                                 ": span out of bounds");
      }
      if (i > 0 && spans[i - 1].span().overlaps(a.span())) {
        throw SerializationError("sentence " + std::to_string(k) +
                                 ": overlapping spans cannot be written as BIO");
      }
      tags[static_cast<std::size_t>(a.start)] = "B-" + a.label;
      for (int t = a.start + 1; t <= a.end; ++t) {
        tags[static_cast<std::size_t>(t)] = "I-" + a.label;
      }
    }
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      out << s.tokens[t] << '\t' << tags[t] << '\n';
    }
    out << '\n';
  }
}

void write_bio(const Dataset& dataset, const std::filesystem::path& path) {
  std::ostringstream buffer;
  write_bio(dataset, buffer);  // validate before touching the file
  std::ofstream out(path);
  if (!out) throw SerializationError("cannot write BIO file: " + path.string());
  out << buffer.str();
}

std::vector<ClassDescription> parse_class_descriptions(std::string_view json_text) {
  using json = nlohmann::ordered_json;
  std::set<std::string> keys;
  std::string duplicate;
  json doc;
  try {
    doc = json::parse(json_text, [&](int depth, json::parse_event_t event, json& parsed) {
      if (depth == 1 && event == json::parse_event_t::key) {
        const auto key = parsed.get<std::string>();
        if (!keys.insert(key).second && duplicate.empty()) duplicate = key;
      }
      return true;
    });
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("class descriptions: ") + e.what());
  }
  if (!duplicate.empty()) throw ConfigError("duplicate class name: " + duplicate);
  if (!doc.is_object()) throw ParseError("class descriptions must be a JSON object");
  std::vector<ClassDescription> out;
  for (const auto& [name, text] : doc.items()) {
    if (!text.is_string()) {
      throw ParseError("description of class '" + name + "' must be a string");
    }
    out.push_back(ClassDescription{name, text.get<std::string>()});
  }
  validate_descriptions(out);
  return out;
}

std::vector<ClassDescription> read_class_descriptions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open class descriptions: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_class_descriptions(buffer.str());
}

std::string class_descriptions_to_json(std::span<const ClassDescription> classes) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& c : classes) doc[c.name] = c.text;
  return doc.dump(2) + "\n";
}

void write_class_descriptions(std::span<const ClassDescription> classes,
                              const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write class descriptions: " + path.string());
  out << class_descriptions_to_json(classes);
}

}  // namespace spanner
