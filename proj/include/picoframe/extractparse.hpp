#pragma once

// Parsing of generated extraction text and its alignment back onto the
// source tokens as BIO tags.

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "picoframe/corpus.hpp"
#include "picoframe/instructgen.hpp"
#include "picoframe/text.hpp"

namespace picoframe {

struct Extraction {
  std::string surface;
  std::string label;     // coarse
  std::size_t line = 0;  // 0-based line in the generated text

  friend bool operator==(const Extraction&, const Extraction&) = default;
};

struct ParsedOutput {
  std::vector<Extraction> extractions;
  std::size_t warnings = 0;
};

namespace detail {

inline std::string_view strip_list_marker(std::string_view line) {
  if (line.size() >= 2 && (line[0] == '-' || line[0] == '*') && line[1] == ' ')
    return text::trim(line.substr(2));
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i + 1 < line.size() && (line[i] == '.' || line[i] == ')') && line[i + 1] == ' ')
    return text::trim(line.substr(i + 2));
  return line;
}

inline std::string_view strip_label_decoration(std::string_view label) {
  label = text::trim(label);
  while (!label.empty() && std::string_view(".,;:!").find(label.back()) != std::string_view::npos)
    label.remove_suffix(1);
  while (label.size() >= 2 && (label.front() == '"' || label.front() == '*' || label.front() == '\'') &&
         label.back() == label.front()) {
    label = text::trim(label.substr(1, label.size() - 2));
  }
  return label;
}

inline std::string_view strip_quotes(std::string_view s) {
  s = text::trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return text::trim(s);
}

}  // namespace detail

// Total over arbitrary model output. Each line of the form
// `"<surface>" is <label>` (quotes optional) yields one extraction; the label
// is matched case-insensitively against the scheme's names and aliases and
// reduced to its coarse class. Blank lines and the `no entities` sentinel are
// skipped silently; any other unparseable line counts one warning.
inline ParsedOutput parse_extractions(std::string_view generated, const LabelScheme& scheme) {
  ParsedOutput out;
  auto lines = text::split_lines(generated);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    auto line = text::trim(lines[n]);
    if (line.empty()) continue;
    line = detail::strip_list_marker(line);
    if (text::iequals(detail::strip_label_decoration(line), kNoEntities)) continue;

    const std::string lowered = text::to_lower(line);
    std::string_view surface, label;
    if (line.front() == '"') {
      auto pos = lowered.rfind("\" is ");
      if (pos == std::string::npos || pos == 0) {
        ++out.warnings;
        continue;
      }
      surface = line.substr(1, pos - 1);
      label = line.substr(pos + 5);
    } else {
      auto pos = lowered.rfind(" is ");
      if (pos == std::string::npos) {
        ++out.warnings;
        continue;
      }
      surface = detail::strip_quotes(line.substr(0, pos));
      label = line.substr(pos + 4);
    }
    surface = text::trim(surface);
    label = detail::strip_label_decoration(label);
    auto resolved = scheme.resolve(label);
    if (surface.empty() || !resolved) {
      ++out.warnings;
      continue;
    }
    out.extractions.push_back({std::string(surface), scheme.coarse_of(*resolved), n});
  }
  return out;
}

struct AlignedPrediction {
  std::string sentence_id;
  std::vector<BioTag> tags;
  std::vector<Extraction> unmatched;
  std::size_t parse_warnings = 0;
  std::size_t conflicts = 0;  // occurrences dropped because a higher-precedence extraction held a token
};

// All case-insensitive, token-boundary occurrences of `surface` in
// `tokens`, leftmost-first and non-overlapping. Returned as start indices.
inline std::vector<std::size_t> find_occurrences(const std::vector<std::string>& surface_tokens,
                                                 const std::vector<std::string>& lowered_tokens) {
  std::vector<std::size_t> starts;
  const std::size_t n = surface_tokens.size();
  if (n == 0 || n > lowered_tokens.size()) return starts;
  std::size_t i = 0;
  while (i + n <= lowered_tokens.size()) {
    if (std::equal(surface_tokens.begin(), surface_tokens.end(), lowered_tokens.begin() + i)) {
      starts.push_back(i);
      i += n;
    } else {
      ++i;
    }
  }
  return starts;
}

// Places every extraction onto the sentence. When two extractions claim the
// same token the longer surface wins, then the earlier output line.
inline AlignedPrediction align_to_bio(const std::vector<Extraction>& extractions,
                                      const LabeledSentence& sentence) {
  AlignedPrediction out;
  out.sentence_id = sentence.id;
  out.tags.assign(sentence.size(), BioTag::outside());

  std::vector<std::string> lowered;
  lowered.reserve(sentence.size());
  for (const auto& t : sentence.tokens) lowered.push_back(text::to_lower(t.text));

  struct Candidate {
    const Extraction* extraction;
    std::vector<std::string> tokens;
    std::size_t chars;
  };
  std::vector<Candidate> candidates;
  for (const auto& e : extractions) {
    auto toks = text::split_ws(text::to_lower(e.surface));
    std::size_t chars = toks.empty() ? 0 : toks.size() - 1;
    for (const auto& t : toks) chars += t.size();
    candidates.push_back({&e, std::move(toks), chars});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.chars != b.chars) return a.chars > b.chars;
    return a.extraction->line < b.extraction->line;
  });

  std::vector<bool> claimed(sentence.size(), false);
  std::vector<const Extraction*> unmatched;
  for (const auto& c : candidates) {
    auto starts = find_occurrences(c.tokens, lowered);
    if (starts.empty()) {
      unmatched.push_back(c.extraction);
      continue;
    }
    const std::size_t len = c.tokens.size();
    for (auto start : starts) {
      bool free = true;
      for (std::size_t i = start; i < start + len; ++i) free = free && !claimed[i];
      if (!free) {
        ++out.conflicts;
        continue;
      }
      for (std::size_t i = start; i < start + len; ++i) {
        claimed[i] = true;
        out.tags[i] = i == start ? BioTag::begin(c.extraction->label) : BioTag::inside(c.extraction->label);
      }
    }
  }
  // Report unmatched extractions in output order.
  std::sort(unmatched.begin(), unmatched.end(),
            [](const Extraction* a, const Extraction* b) { return a->line < b->line; });
  for (const auto* e : unmatched) out.unmatched.push_back(*e);
  return out;
}

inline AlignedPrediction parse_and_align(std::string_view generated, const LabeledSentence& sentence,
                                         const LabelScheme& scheme) {
  auto parsed = parse_extractions(generated, scheme);
  auto aligned = align_to_bio(parsed.extractions, sentence);
  aligned.parse_warnings = parsed.warnings;
  return aligned;
}

// A sentence is audit-clean when its gold spans survive the round trip
// serialize -> parse -> align unchanged (after mapping to coarse labels).
// Repeated or nested surfaces break the round trip because generated text
// cannot say which occurrence it means.
struct AuditFinding {
  std::string sentence_id;
  std::string reason;
};

inline std::vector<AuditFinding> audit_corpus(const std::vector<LabeledSentence>& sentences,
                                              const LabelScheme& scheme) {
  std::vector<AuditFinding> findings;
  for (const auto& s : sentences) {
    auto coarse = map_fine_to_coarse(s, scheme);
    auto spans = bio_to_spans(coarse);
    auto aligned = parse_and_align(serialize_extractions(spans), coarse, scheme);
    if (aligned.tags == coarse.tags) continue;
    std::string reason;
    std::vector<std::string> lowered;
    for (const auto& t : s.tokens) lowered.push_back(text::to_lower(t.text));
    for (const auto& sp : spans) {
      auto occ = find_occurrences(text::split_ws(text::to_lower(sp.surface)), lowered);
      if (occ.size() > 1) {
        reason = "surface '" + sp.surface + "' occurs " + std::to_string(occ.size()) + " times";
        break;
      }
    }
    if (reason.empty()) reason = "gold spans do not survive the extraction round trip";
    findings.push_back({s.id, std::move(reason)});
  }
  return findings;
}

}  // namespace picoframe
