#pragma once

// Token-level strict-match scoring.
//
// A token is a true positive for class c when gold and prediction both carry
// c at that position. "Accuracy" is the Jaccard index tp / (tp + fp + fn),
// which equals F1 / (2 - F1) for the same counts.

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "picoframe/corpus.hpp"

namespace picoframe {

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool active() const { return tp + fp + fn > 0; }

  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

// Keyed by coarse label.
using CountTable = std::map<std::string, ClassCounts>;

inline CountTable& operator+=(CountTable& a, const CountTable& b) {
  for (const auto& [label, c] : b) a[label] += c;
  return a;
}

struct ScoringOptions {
  // Also require the B/I kind to agree. Off by default: only the class of
  // each token is compared.
  bool kind_sensitive = false;
};

inline CountTable count_tokens(const LabeledSentence& gold, const std::vector<BioTag>& predicted,
                               const LabelScheme& scheme, const ScoringOptions& opts = {}) {
  if (gold.tags.size() != predicted.size())
    throw DataError("sentence " + gold.id + ": gold has " + std::to_string(gold.tags.size()) +
                    " tokens, prediction has " + std::to_string(predicted.size()));
  CountTable delta;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& g = gold.tags[i];
    const auto& p = predicted[i];
    const std::string gl = g.is_outside() ? std::string() : scheme.coarse_of(g.label);
    const std::string pl = p.is_outside() ? std::string() : scheme.coarse_of(p.label);
    const bool same = gl == pl && (!opts.kind_sensitive || g.kind == p.kind);
    if (!gl.empty() && same) {
      ++delta[gl].tp;
      continue;
    }
    if (!pl.empty()) ++delta[pl].fp;
    if (!gl.empty()) ++delta[gl].fn;
  }
  return delta;
}

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline double f1_from_precision_recall(double precision, double recall) {
  return safe_ratio(2.0 * precision * recall, precision + recall);
}

// Jaccard index implied by an F1 value.
inline double accuracy_from_f1(double f1) { return f1 / (2.0 - f1); }

inline Metrics class_metrics(const ClassCounts& c) {
  Metrics m;
  const auto tp = static_cast<double>(c.tp);
  m.precision = safe_ratio(tp, tp + static_cast<double>(c.fp));
  m.recall = safe_ratio(tp, tp + static_cast<double>(c.fn));
  m.f1 = f1_from_precision_recall(m.precision, m.recall);
  m.accuracy = safe_ratio(tp, tp + static_cast<double>(c.fp) + static_cast<double>(c.fn));
  return m;
}

struct MetricsReport {
  std::map<std::string, ClassCounts> counts;
  std::map<std::string, Metrics> per_class;
  Metrics macro;
  std::size_t sentences = 0;
  std::size_t parse_warnings = 0;
  std::size_t unmatched = 0;
  std::size_t missing_predictions = 0;
  std::size_t error_rows = 0;
};

// Unweighted mean over classes that have any gold or predicted token. The
// macro F1 is the mean of per-class F1 values, not the harmonic mean of the
// macro precision and recall.
inline MetricsReport macro_metrics(const CountTable& counts) {
  MetricsReport report;
  std::size_t n = 0;
  for (const auto& [label, c] : counts) {
    report.counts[label] = c;
    auto m = class_metrics(c);
    report.per_class[label] = m;
    if (!c.active()) continue;
    report.macro.precision += m.precision;
    report.macro.recall += m.recall;
    report.macro.f1 += m.f1;
    report.macro.accuracy += m.accuracy;
    ++n;
  }
  if (n > 0) {
    report.macro.precision /= static_cast<double>(n);
    report.macro.recall /= static_cast<double>(n);
    report.macro.f1 /= static_cast<double>(n);
    report.macro.accuracy /= static_cast<double>(n);
  }
  return report;
}

inline nlohmann::ordered_json metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["accuracy"] = m.accuracy;
  return j;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [label, m] : r.per_class) {
    auto row = metrics_to_json(m);
    const auto& c = r.counts.at(label);
    row["tp"] = c.tp;
    row["fp"] = c.fp;
    row["fn"] = c.fn;
    per[label] = row;
  }
  j["per_class"] = per;
  j["macro"] = metrics_to_json(r.macro);
  j["sentences"] = r.sentences;
  j["parse_warnings"] = r.parse_warnings;
  j["unmatched"] = r.unmatched;
  j["missing_predictions"] = r.missing_predictions;
  j["error_rows"] = r.error_rows;
  return j;
}

// Percentages with two decimals, one row per class then the macro row.
inline std::string format_report(const MetricsReport& r, const LabelScheme& scheme) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-8s %10s %10s %10s %10s\n", "", "Precision", "Recall", "F-score",
                "Accuracy");
  out << buf;
  auto row = [&](const std::string& name, const Metrics& m) {
    std::snprintf(buf, sizeof buf, "%-8s %10.2f %10.2f %10.2f %10.2f\n", name.c_str(),
                  100.0 * m.precision, 100.0 * m.recall, 100.0 * m.f1, 100.0 * m.accuracy);
    out << buf;
  };
  for (const auto& [label, m] : r.per_class) {
    std::string name = label;
    if (scheme.is_coarse(label)) name = scheme.short_name(label);
    row(name, m);
  }
  row("Macro", r.macro);
  out << "sentences=" << r.sentences << " parse_warnings=" << r.parse_warnings
      << " unmatched=" << r.unmatched << " missing=" << r.missing_predictions
      << " errors=" << r.error_rows << '\n';
  return out.str();
}

}  // namespace picoframe
