#include <gtest/gtest.h>

#include <random>

#include "picoframe/evalkit.hpp"

using namespace picoframe;

namespace {

const LabelScheme& pico() { return LabelScheme::pico(); }

const std::string PAR = "Participants", INT = "Interventions", OUT = "Outcomes";

BioTag tag(const std::string& s) { return parse_tag(s, pico()); }

LabeledSentence gold_of(const std::vector<std::string>& tags) {
  LabeledSentence s;
  s.id = "g";
  for (std::size_t i = 0; i < tags.size(); ++i) {
    s.tokens.push_back({"w" + std::to_string(i), i});
    s.tags.push_back(tag(tags[i]));
  }
  return s;
}

std::vector<BioTag> pred_of(const std::vector<std::string>& tags) {
  std::vector<BioTag> out;
  for (const auto& t : tags) out.push_back(tag(t));
  return out;
}

}  // namespace

TEST(CountTokens, IdentityHasNoErrors) {
  auto g = gold_of({"B-PAR", "I-PAR", "O", "B-INT", "B-OUT", "I-OUT"});
  auto counts = count_tokens(g, g.tags, pico());
  for (const auto& [label, c] : counts) {
    EXPECT_EQ(c.fp, 0u) << label;
    EXPECT_EQ(c.fn, 0u) << label;
  }
  EXPECT_EQ(counts[PAR].tp, 2u);
  EXPECT_EQ(counts[OUT].tp, 2u);
}

TEST(CountTokens, AllOutsidePrediction) {
  auto g = gold_of({"O", "B-INT", "I-INT", "I-INT", "O"});
  auto counts = count_tokens(g, std::vector<BioTag>(5), pico());
  EXPECT_EQ(counts[INT], (ClassCounts{0, 0, 3}));
}

// Hand-built per-token table for a 10-token fixture:
//   i  gold   pred    PAR     INT     OUT
//   0  B-PAR  B-PAR   tp
//   1  I-PAR  O       fn
//   2  O      B-INT           fp
//   3  B-INT  I-INT           tp
//   4  I-INT  B-OUT           fn      fp
//   5  O      O
//   6  B-OUT  B-OUT                   tp
//   7  I-OUT  I-OUT                   tp
//   8  O      B-PAR   fp
//   9  B-PAR  O       fn
TEST(CountTokens, TenTokenFixture) {
  auto g = gold_of({"B-PAR", "I-PAR", "O", "B-INT", "I-INT", "O", "B-OUT", "I-OUT", "O", "B-PAR"});
  auto p = pred_of({"B-PAR", "O", "B-INT", "I-INT", "B-OUT", "O", "B-OUT", "I-OUT", "B-PAR", "O"});
  auto counts = count_tokens(g, p, pico());
  EXPECT_EQ(counts[PAR], (ClassCounts{1, 1, 2}));
  EXPECT_EQ(counts[INT], (ClassCounts{1, 1, 1}));
  EXPECT_EQ(counts[OUT], (ClassCounts{2, 1, 0}));

  // Kind-sensitive: token 3 (B vs I) becomes an INT fp and an INT fn.
  auto strict = count_tokens(g, p, pico(), {true});
  EXPECT_EQ(strict[INT], (ClassCounts{0, 2, 2}));
  EXPECT_EQ(strict[PAR], counts[PAR]);
  EXPECT_EQ(strict[OUT], counts[OUT]);
}

TEST(CountTokens, FineLabelsScoreAsCoarse) {
  auto g = gold_of({"B-Drug", "B-Age"});
  auto counts = count_tokens(g, pred_of({"B-INT", "B-Sex"}), pico());
  EXPECT_EQ(counts[INT].tp, 1u);
  EXPECT_EQ(counts[PAR].tp, 1u);
}

TEST(CountTokens, LengthMismatchThrows) {
  auto g = gold_of({"O", "O"});
  EXPECT_THROW(count_tokens(g, std::vector<BioTag>(3), pico()), DataError);
}

TEST(ClassMetrics, ZeroDivision) {
  auto m = class_metrics({0, 0, 0});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_EQ(m.accuracy, 0.0);
}

TEST(ClassMetrics, DirectFormula) {
  auto m = class_metrics({5, 3, 5});
  EXPECT_DOUBLE_EQ(m.precision, 5.0 / 8.0);
  EXPECT_DOUBLE_EQ(m.recall, 5.0 / 10.0);
  EXPECT_NEAR(m.f1, 0.5556, 5e-5);
  EXPECT_NEAR(m.accuracy, 0.3846, 5e-5);
  EXPECT_DOUBLE_EQ(m.accuracy, 5.0 / 13.0);
}

TEST(ClassMetrics, PublishedOutcomeRow) {
  const double f1 = f1_from_precision_recall(0.8588, 0.4903);
  EXPECT_NEAR(100.0 * f1, 62.42, 0.02);
  EXPECT_NEAR(100.0 * accuracy_from_f1(f1), 45.37, 0.02);
}

TEST(ClassMetrics, JaccardIdentityOverRandomCounts) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5000; ++i) {
    ClassCounts c{rng() % 200, rng() % 200, rng() % 200};
    auto m = class_metrics(c);
    if (c.tp == 0) continue;
    EXPECT_NEAR(m.accuracy, accuracy_from_f1(m.f1), 1e-12);
  }
}

TEST(ClassMetrics, SwappingGoldAndPredictionSwapsPrecisionAndRecall) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> alphabet = {"O", "B-PAR", "I-PAR", "B-INT", "I-INT", "B-OUT"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> a, b;
    for (int i = 0; i < 15; ++i) {
      a.push_back(alphabet[rng() % alphabet.size()]);
      b.push_back(alphabet[rng() % alphabet.size()]);
    }
    auto ga = gold_of(a);
    auto gb = gold_of(b);
    repair_bio(ga.tags);
    repair_bio(gb.tags);
    auto ab = count_tokens(ga, gb.tags, pico());
    auto ba = count_tokens(gb, ga.tags, pico());
    for (const auto& label : {PAR, INT, OUT}) {
      auto m1 = class_metrics(ab[label]);
      auto m2 = class_metrics(ba[label]);
      EXPECT_DOUBLE_EQ(m1.precision, m2.recall);
      EXPECT_DOUBLE_EQ(m1.recall, m2.precision);
      EXPECT_DOUBLE_EQ(m1.f1, m2.f1);
    }
  }
}

TEST(ClassMetrics, AddingPerfectSentenceOnlyAddsTruePositives) {
  auto g = gold_of({"B-PAR", "O", "B-OUT"});
  auto p = pred_of({"O", "O", "B-OUT"});
  auto base = count_tokens(g, p, pico());
  auto extra = count_tokens(g, g.tags, pico());
  auto total = base;
  total += extra;
  for (const auto& [label, c] : total) {
    EXPECT_EQ(c.fp, base[label].fp);
    EXPECT_EQ(c.fn, base[label].fn);
    EXPECT_GE(c.tp, base[label].tp);
  }
}

TEST(MacroMetrics, OneClassEqualsThatClass) {
  CountTable t{{OUT, {5, 3, 5}}};
  auto r = macro_metrics(t);
  auto m = class_metrics({5, 3, 5});
  EXPECT_DOUBLE_EQ(r.macro.f1, m.f1);
  EXPECT_DOUBLE_EQ(r.macro.precision, m.precision);
  EXPECT_DOUBLE_EQ(r.macro.accuracy, m.accuracy);
}

TEST(MacroMetrics, MeanOfClassF1) {
  CountTable t{{PAR, {1, 1, 1}}, {OUT, {4, 0, 0}}};
  EXPECT_DOUBLE_EQ(macro_metrics(t).macro.f1, 0.75);
}

TEST(MacroMetrics, InactiveClassesAreSkipped) {
  CountTable t{{PAR, {1, 1, 1}}, {OUT, {4, 0, 0}}, {INT, {0, 0, 0}}};
  EXPECT_DOUBLE_EQ(macro_metrics(t).macro.f1, 0.75);
  EXPECT_EQ(macro_metrics({}).macro.f1, 0.0);
}

TEST(MacroMetrics, PerfectAndAllOutside) {
  auto g = gold_of({"B-PAR", "I-PAR", "B-INT", "O", "B-OUT"});
  auto perfect = macro_metrics(count_tokens(g, g.tags, pico()));
  for (const auto& [label, m] : perfect.per_class) {
    EXPECT_EQ(m.precision, 1.0) << label;
    EXPECT_EQ(m.recall, 1.0) << label;
    EXPECT_EQ(m.f1, 1.0) << label;
    EXPECT_EQ(m.accuracy, 1.0) << label;
  }
  auto none = macro_metrics(count_tokens(g, std::vector<BioTag>(5), pico()));
  for (const auto& [label, m] : none.per_class) {
    EXPECT_EQ(m.precision, 0.0) << label;
    EXPECT_EQ(m.recall, 0.0) << label;
  }
}

// Per-class rows printed for the EBM-NLP corpus, averaged, against the
// aggregate row of the summary table.
TEST(MacroMetrics, PublishedPerClassRowsAverageToAggregate) {
  struct Row {
    double p, r, f, acc;
  };
  const Row out{49.46, 35.59, 41.40, 26.10}, intv{36.47, 54.71, 43.76, 28.01}, par{58.32, 54.74, 56.47, 39.35};
  const Row aggregate{48.08, 48.35, 47.21, 31.15};
  EXPECT_NEAR((par.p + intv.p + out.p) / 3.0, aggregate.p, 1.5);
  EXPECT_NEAR((par.r + intv.r + out.r) / 3.0, aggregate.r, 1.5);
  EXPECT_NEAR((par.f + intv.f + out.f) / 3.0, aggregate.f, 1.5);
  EXPECT_NEAR((par.acc + intv.acc + out.acc) / 3.0, aggregate.acc, 1.5);
  // Mean of F1, not F1 of the mean P and R.
  EXPECT_GT(std::abs(100.0 * f1_from_precision_recall(aggregate.p / 100, aggregate.r / 100) - aggregate.f), 0.5);
}

TEST(Report, JsonAndTextLayout) {
  CountTable t{{PAR, {1, 1, 1}}, {OUT, {4, 0, 0}}, {INT, {0, 0, 0}}};
  auto r = macro_metrics(t);
  r.sentences = 7;
  auto j = report_to_json(r);
  EXPECT_EQ(j["per_class"]["Outcomes"]["tp"], 4);
  EXPECT_DOUBLE_EQ(j["macro"]["f1"].get<double>(), 0.75);
  EXPECT_EQ(j["sentences"], 7);
  auto txt = format_report(r, pico());
  EXPECT_NE(txt.find("OUT"), std::string::npos);
  EXPECT_NE(txt.find("Macro"), std::string::npos);
  EXPECT_NE(txt.find("75.00"), std::string::npos);
}
