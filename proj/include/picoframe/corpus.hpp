#pragma once

// Token/label/span model for BIO-annotated clinical-trial sentences, the
// PICO label scheme, and CoNLL-style ingestion.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "picoframe/errors.hpp"
#include "picoframe/text.hpp"

namespace picoframe {

enum class TagKind : char { O = 'O', B = 'B', I = 'I' };

struct BioTag {
  TagKind kind = TagKind::O;
  std::string label;  // empty when kind == O

  static BioTag outside() { return {}; }
  static BioTag begin(std::string label) { return {TagKind::B, std::move(label)}; }
  static BioTag inside(std::string label) { return {TagKind::I, std::move(label)}; }

  bool is_outside() const { return kind == TagKind::O; }

  std::string str() const {
    if (kind == TagKind::O) return "O";
    return std::string(1, static_cast<char>(kind)) + "-" + label;
  }

  friend bool operator==(const BioTag&, const BioTag&) = default;
};

struct Token {
  std::string text;
  std::size_t index = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

enum class Split { train, validation, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view name) {
  auto n = text::to_lower(name);
  if (n == "train") return Split::train;
  if (n == "validation" || n == "dev" || n == "valid") return Split::validation;
  if (n == "test") return Split::test;
  throw DataError("unknown split '" + std::string(name) + "'");
}

struct LabeledSentence {
  std::string id;
  std::vector<Token> tokens;
  std::vector<BioTag> tags;
  Split split = Split::train;

  std::size_t size() const { return tokens.size(); }

  friend bool operator==(const LabeledSentence&, const LabeledSentence&) = default;
};

// Inclusive token range [start, end] carrying one label.
struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string label;
  std::string surface;

  std::size_t length() const { return end - start + 1; }

  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

inline std::vector<Token> make_tokens(const std::vector<std::string>& words) {
  std::vector<Token> out;
  out.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) out.push_back({words[i], i});
  return out;
}

// ---------------------------------------------------------------------------
// Label scheme

// Coarse classes plus their fine-grained subtypes. Fine labels are stored
// parent-qualified ("Outcomes.Physical") because some subtype names occur
// under more than one parent.
class LabelScheme {
 public:
  struct CoarseDef {
    std::string name;
    std::string short_name;
    std::vector<std::string> aliases;
    std::vector<std::string> fine;
  };

  explicit LabelScheme(std::vector<CoarseDef> defs) {
    for (auto& def : defs) {
      coarse_.push_back(def.name);
      short_[def.name] = def.short_name;
      parent_[def.name] = def.name;
      add_alias(def.name, def.name);
      add_alias(def.short_name, def.name);
      for (const auto& a : def.aliases) add_alias(a, def.name);
      std::vector<std::string> prefixes = def.aliases;
      prefixes.push_back(def.name);
      prefixes.push_back(def.short_name);
      for (const auto& f : def.fine) {
        const std::string qualified = def.name + "." + f;
        parent_[qualified] = def.name;
        add_alias(qualified, qualified);
        for (const auto& p : prefixes) add_alias(p + "." + f, qualified);
        unqualified_[normalize(f)].insert(qualified);
      }
    }
    for (const auto& [name, targets] : unqualified_) {
      if (targets.size() == 1 && !aliases_.count(name)) aliases_[name] = *targets.begin();
    }
  }

  // Participants / Interventions / Outcomes with the fine-grained subtypes
  // used by the hierarchical corpora.
  static const LabelScheme& pico() {
    static const LabelScheme scheme({
        {"Participants", "PAR",
         {"Participant", "Participation", "Population", "Patients", "Patient", "P"},
         {"Age", "Sex", "Sample size", "Condition"}},
        {"Interventions", "INT",
         {"Intervention", "Comparator", "Comparison", "Comparators", "I", "IC"},
         {"Surgical", "Physical", "Drug", "Educational", "Psychological", "Control", "Other"}},
        {"Outcomes", "OUT",
         {"Outcome", "OUT"},
         {"Physical", "Pain", "Mortality", "Adverse effects", "Mental", "Other"}},
    });
    return scheme;
  }

  // Canonical name for any accepted spelling, or nullopt when the name is
  // unknown or ambiguous.
  std::optional<std::string> resolve(std::string_view name) const {
    auto it = aliases_.find(normalize(name));
    if (it == aliases_.end()) return std::nullopt;
    return it->second;
  }

  std::string require(std::string_view name) const {
    if (auto r = resolve(name)) return *r;
    auto amb = unqualified_.find(normalize(name));
    if (amb != unqualified_.end() && amb->second.size() > 1) {
      throw DataError("ambiguous label '" + std::string(name) + "' (qualify it: " +
                      text::join(amb->second, ", ") + ")");
    }
    throw DataError("unknown label '" + std::string(name) + "'");
  }

  bool contains(const std::string& canonical) const { return parent_.count(canonical) > 0; }

  bool is_coarse(const std::string& canonical) const {
    auto it = parent_.find(canonical);
    return it != parent_.end() && it->second == canonical;
  }

  const std::string& coarse_of(const std::string& canonical) const {
    auto it = parent_.find(canonical);
    if (it == parent_.end()) throw DataError("unknown label '" + canonical + "'");
    return it->second;
  }

  const std::vector<std::string>& coarse_labels() const { return coarse_; }

  std::vector<std::string> fine_labels() const {
    std::vector<std::string> out;
    for (const auto& [name, parent] : parent_)
      if (name != parent) out.push_back(name);
    return out;
  }

  const std::string& short_name(const std::string& coarse) const {
    auto it = short_.find(coarse);
    if (it == short_.end()) throw DataError("unknown coarse label '" + coarse + "'");
    return it->second;
  }

  static std::string normalize(std::string_view name) {
    std::string out;
    bool pending_space = false;
    for (char c : text::trim(name)) {
      if (c == '_' || c == '-' || text::is_space(c)) {
        pending_space = !out.empty();
        continue;
      }
      if (pending_space && c != '.' && !out.empty() && out.back() != '.') out += ' ';
      pending_space = false;
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
  }

 private:
  void add_alias(std::string_view alias, const std::string& canonical) {
    aliases_.emplace(normalize(alias), canonical);
  }

  std::vector<std::string> coarse_;
  std::map<std::string, std::string> parent_;
  std::map<std::string, std::string> short_;
  std::map<std::string, std::string> aliases_;
  std::map<std::string, std::set<std::string>> unqualified_;
};

// Parses "O", "B-<label>" or "I-<label>" and canonicalizes the label.
inline BioTag parse_tag(std::string_view raw, const LabelScheme& scheme) {
  auto tag = text::trim(raw);
  if (tag == "O") return BioTag::outside();
  if (tag.size() < 3 || (tag[0] != 'B' && tag[0] != 'I') || (tag[1] != '-' && tag[1] != '_'))
    throw DataError("malformed tag '" + std::string(tag) + "'");
  auto label = scheme.require(tag.substr(2));
  return tag[0] == 'B' ? BioTag::begin(std::move(label)) : BioTag::inside(std::move(label));
}

// ---------------------------------------------------------------------------
// BIO well-formedness and span conversion

inline bool is_well_formed(const std::vector<BioTag>& tags) {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto& t = tags[i];
    if (t.kind == TagKind::O) {
      if (!t.label.empty()) return false;
      continue;
    }
    if (t.label.empty()) return false;
    if (t.kind == TagKind::I) {
      if (i == 0 || tags[i - 1].kind == TagKind::O || tags[i - 1].label != t.label) return false;
    }
  }
  return true;
}

// Promotes every I tag that cannot continue a span into a B tag of the same
// label. Returns the number of promotions.
inline std::size_t repair_bio(std::vector<BioTag>& tags) {
  std::size_t repairs = 0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    auto& t = tags[i];
    if (t.kind != TagKind::I) continue;
    if (i == 0 || tags[i - 1].kind == TagKind::O || tags[i - 1].label != t.label) {
      t.kind = TagKind::B;
      ++repairs;
    }
  }
  return repairs;
}

struct CharRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  friend bool operator==(const CharRange&, const CharRange&) = default;
};

struct Detokenized {
  std::string text;
  std::vector<CharRange> offsets;
};

// Single-space join, with the character range of every token.
inline Detokenized detokenize(const std::vector<Token>& tokens) {
  Detokenized out;
  out.offsets.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.text += ' ';
    const std::size_t begin = out.text.size();
    out.text += tokens[i].text;
    out.offsets.push_back({begin, out.text.size()});
  }
  return out;
}

inline std::string surface_of(const std::vector<Token>& tokens, std::size_t start, std::size_t end) {
  std::string out;
  for (std::size_t i = start; i <= end; ++i) {
    if (i > start) out += ' ';
    out += tokens[i].text;
  }
  return out;
}

// Maximal spans in start order. Expects well-formed tags; a stray I is
// treated as opening a span so the function stays total.
inline std::vector<EntitySpan> bio_to_spans(const std::vector<BioTag>& tags,
                                            const std::vector<Token>& tokens = {}) {
  std::vector<EntitySpan> spans;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto& t = tags[i];
    if (t.kind == TagKind::O) continue;
    const bool continues = t.kind == TagKind::I && !spans.empty() && spans.back().end + 1 == i &&
                           spans.back().label == t.label;
    if (continues) {
      spans.back().end = i;
    } else {
      spans.push_back({i, i, t.label, {}});
    }
  }
  if (tokens.size() == tags.size()) {
    for (auto& s : spans) s.surface = surface_of(tokens, s.start, s.end);
  }
  return spans;
}

inline std::vector<EntitySpan> bio_to_spans(const LabeledSentence& s) {
  return bio_to_spans(s.tags, s.tokens);
}

inline std::vector<BioTag> spans_to_bio(const std::vector<EntitySpan>& spans, std::size_t length) {
  std::vector<BioTag> tags(length);
  std::vector<bool> used(length, false);
  for (const auto& s : spans) {
    if (s.start > s.end || s.end >= length)
      throw DataError("span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                      "] out of range for length " + std::to_string(length));
    if (s.label.empty()) throw DataError("span without label");
    for (std::size_t i = s.start; i <= s.end; ++i) {
      if (used[i]) throw DataError("overlapping spans at token " + std::to_string(i));
      used[i] = true;
      tags[i] = i == s.start ? BioTag::begin(s.label) : BioTag::inside(s.label);
    }
  }
  return tags;
}

// Replaces every fine label by its coarse parent. B boundaries are kept, so
// adjacent spans that collapse to the same class stay distinct.
inline LabeledSentence map_fine_to_coarse(const LabeledSentence& s, const LabelScheme& scheme) {
  LabeledSentence out = s;
  for (auto& t : out.tags) {
    if (t.kind == TagKind::O) continue;
    t.label = scheme.coarse_of(t.label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CoNLL ingestion

struct ConllOptions {
  Split split = Split::train;
  std::string id_prefix;  // defaults to the split name
};

struct ConllResult {
  std::vector<LabeledSentence> sentences;
  std::size_t repairs = 0;
};

// Two-column token/tag lines, blank lines between sentences. Lines with a tab
// use the first and last tab fields; otherwise the token ends at the first
// space and the remainder is the tag, so label names may contain spaces
// ("B-Sample size"). "-DOCSTART-" lines are skipped and a "# sent_id = X"
// comment names the next sentence.
inline ConllResult parse_conll(std::istream& in, const LabelScheme& scheme,
                               const ConllOptions& opts = {}) {
  ConllResult result;
  const std::string prefix =
      opts.id_prefix.empty() ? std::string(split_name(opts.split)) : opts.id_prefix;
  LabeledSentence current;
  std::optional<std::string> pending_id;
  std::size_t line_no = 0;

  auto flush = [&] {
    if (current.tokens.empty()) return;
    result.repairs += repair_bio(current.tags);
    current.split = opts.split;
    current.id = pending_id ? *pending_id : prefix + "-" + std::to_string(result.sentences.size());
    pending_id.reset();
    result.sentences.push_back(std::move(current));
    current = {};
  };

  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto trimmed = text::trim(line);
    if (trimmed.empty()) {
      flush();
      continue;
    }
    if (trimmed.rfind("-DOCSTART-", 0) == 0) continue;
    if (trimmed.rfind("# sent_id", 0) == 0) {
      auto eq = trimmed.find('=');
      if (eq != std::string_view::npos) {
        flush();
        pending_id = std::string(text::trim(trimmed.substr(eq + 1)));
        continue;
      }
    }

    std::string_view token, tag;
    if (trimmed.find('\t') != std::string_view::npos) {
      auto first = trimmed.find('\t');
      auto last = trimmed.rfind('\t');
      token = text::trim(trimmed.substr(0, first));
      tag = text::trim(trimmed.substr(last + 1));
    } else {
      std::size_t cut = 0;
      while (cut < trimmed.size() && !text::is_space(trimmed[cut])) ++cut;
      token = trimmed.substr(0, cut);
      tag = text::trim(trimmed.substr(cut));
    }
    if (token.empty() || tag.empty())
      throw DataError("line " + std::to_string(line_no) + ": expected '<token> <tag>'");
    try {
      current.tags.push_back(parse_tag(tag, scheme));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    current.tokens.push_back({std::string(token), current.tokens.size()});
  }
  flush();
  return result;
}

inline ConllResult parse_conll_file(const std::filesystem::path& path, const LabelScheme& scheme,
                                    const ConllOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  try {
    return parse_conll(in, scheme, opts);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Canonical line-delimited sentence records

inline nlohmann::json sentence_to_json(const LabeledSentence& s) {
  nlohmann::json tokens = nlohmann::json::array();
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& t : s.tokens) tokens.push_back(t.text);
  for (const auto& t : s.tags) tags.push_back(t.str());
  return {{"id", s.id}, {"tokens", tokens}, {"tags", tags}, {"split", split_name(s.split)}};
}

inline LabeledSentence sentence_from_json(const nlohmann::json& j, const LabelScheme& scheme) {
  LabeledSentence s;
  s.id = j.at("id").get<std::string>();
  s.split = parse_split(j.at("split").get<std::string>());
  s.tokens = make_tokens(j.at("tokens").get<std::vector<std::string>>());
  for (const auto& t : j.at("tags")) s.tags.push_back(parse_tag(t.get<std::string>(), scheme));
  if (s.tags.size() != s.tokens.size())
    throw DataError("sentence " + s.id + ": token/tag count mismatch");
  if (!is_well_formed(s.tags)) throw DataError("sentence " + s.id + ": tags are not BIO well-formed");
  return s;
}

inline void write_sentences(std::ostream& out, const std::vector<LabeledSentence>& sentences) {
  for (const auto& s : sentences) out << sentence_to_json(s).dump() << '\n';
}

inline std::vector<LabeledSentence> read_sentences(std::istream& in, const LabelScheme& scheme) {
  std::vector<LabeledSentence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(sentence_from_json(nlohmann::json::parse(line), scheme));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("record line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// Loads a corpus file in either format: canonical records (".jsonl") or
// two-column CoNLL text.
inline ConllResult load_corpus(const std::filesystem::path& path, const LabelScheme& scheme,
                               Split split) {
  if (path.extension() == ".jsonl") {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file " + path.string());
    ConllResult r;
    try {
      r.sentences = read_sentences(in, scheme);
    } catch (const DataError& e) {
      throw DataError(path.string() + ": " + e.what());
    }
    for (auto& s : r.sentences) s.split = split;
    return r;
  }
  return parse_conll_file(path, scheme, {split, {}});
}

// Number of spans per label.
inline std::map<std::string, std::size_t> span_counts(const std::vector<LabeledSentence>& sentences) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& sp : bio_to_spans(s.tags)) ++counts[sp.label];
  return counts;
}

}  // namespace picoframe
