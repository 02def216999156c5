#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "picoframe/promptkit.hpp"

using namespace picoframe;

namespace {

std::string golden(const std::string& name) {
  return pftest::read_file(std::filesystem::path(PICOFRAME_GOLDEN_DIR) / name);
}

const std::string kTask = "Extract the PICO entities from the sentence.";
const std::string kInput = "Aspirin did not lower mortality .";

std::vector<InstructRecord> two_demos() {
  return {{kTask, "Forty adults received budesonide .",
           "\"Forty adults\" is Participants\n\"budesonide\" is Interventions"},
          {kTask, "The trial was stopped early .", "no entities"}};
}

}  // namespace

TEST(RenderDemonstration, SentinelRecord) {
  EXPECT_EQ(render_demonstration({"T", "a b", "no entities"}), "input: a b\noutput:\nno entities");
}

TEST(RenderDemonstration, OneExtractionGolden) {
  InstructRecord r{kTask, "Budesonide reduced nasal symptoms in patients with allergic rhinitis .",
                   "\"allergic rhinitis\" is Participants"};
  EXPECT_EQ(render_demonstration(r), golden("demo_one.txt"));
}

TEST(AssemblePrompt, ZeroShotGolden) {
  const auto prompt = assemble_prompt({kTask, {}, kInput});
  EXPECT_EQ(prompt, golden("prompt_k0.txt"));
  EXPECT_EQ(prompt.find("output:"), prompt.rfind("output:"));
  EXPECT_EQ(prompt, kTask + "\n\ninput: " + kInput + "\noutput:\n");
}

TEST(AssemblePrompt, TwoShotGolden) {
  EXPECT_EQ(assemble_prompt({kTask, two_demos(), kInput}), golden("prompt_k2.txt"));
}

TEST(AssemblePrompt, DeterministicAndOrdered) {
  PromptSpec spec{kTask, two_demos(), kInput};
  EXPECT_EQ(assemble_prompt(spec), assemble_prompt(spec));
  auto reversed = spec;
  std::swap(reversed.demonstrations[0], reversed.demonstrations[1]);
  const auto p = assemble_prompt(reversed);
  EXPECT_LT(p.find("The trial was stopped"), p.find("Forty adults"));
}

TEST(AssemblePrompt, LengthStrictlyIncreasesWithK) {
  auto corpus = pftest::make_synthetic_corpus({.train = 12, .test = 0});
  PromptSpec spec{kTask, {}, kInput};
  std::size_t prev = assemble_prompt(spec).size();
  for (const auto& s : corpus.train) {
    spec.demonstrations.push_back(sentence_to_record(s, kTask));
    const auto len = assemble_prompt(spec).size();
    EXPECT_GT(len, prev);
    prev = len;
  }
}

TEST(AssemblePrompt, LengthLimit) {
  PromptSpec spec{kTask, two_demos(), kInput};
  const auto full = assemble_prompt(spec).size();
  EXPECT_NO_THROW(assemble_prompt(spec, full));
  EXPECT_THROW(assemble_prompt(spec, full - 1), UsageError);
}

TEST(PromptInputText, FindsLastInput) {
  EXPECT_EQ(prompt_input_text(golden("prompt_k2.txt")), kInput);
  EXPECT_EQ(prompt_input_text("no marker here"), "");
}
