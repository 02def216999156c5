#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "picoframe/corpus.hpp"

namespace picoframe {

// Written on the single line of a demonstration or target that carries no
// entities.
inline constexpr std::string_view kNoEntities = "no entities";

// Repository default for the task description; override it from the run
// config for real experiments.
inline const std::string& default_task_description() {
  static const std::string text =
      "You are an expert annotator of clinical trial abstracts. Identify the PICO elements in "
      "the input sentence: Participants (the patients or population studied), Interventions "
      "(the treatments, including comparators and controls) and Outcomes (the measured "
      "endpoints). Copy every entity exactly as it appears in the sentence and write one "
      "entity per line in the form \"<entity>\" is <type>, where <type> is Participants, "
      "Interventions or Outcomes. If the sentence contains no entities, answer: no entities";
  return text;
}

struct InstructRecord {
  std::string instruction;
  std::string input;
  std::string output;

  friend bool operator==(const InstructRecord&, const InstructRecord&) = default;
};

// One `"<surface>" is <label>` line per span, in the order given.
inline std::string serialize_extractions(const std::vector<EntitySpan>& spans) {
  if (spans.empty()) return std::string(kNoEntities);
  std::string out;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (i > 0) out += '\n';
    out += '"';
    out += spans[i].surface;
    out += "\" is ";
    out += spans[i].label;
  }
  return out;
}

inline InstructRecord sentence_to_record(const LabeledSentence& s, const std::string& task_description) {
  return {task_description, detokenize(s.tokens).text, serialize_extractions(bio_to_spans(s))};
}

inline nlohmann::ordered_json record_to_json(const InstructRecord& r) {
  nlohmann::ordered_json j;
  j["instruction"] = r.instruction;
  j["input"] = r.input;
  j["output"] = r.output;
  return j;
}

inline std::size_t write_dataset(const std::vector<InstructRecord>& records,
                                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  out.flush();
  if (!out) throw DataError("I/O error writing dataset " + path.string());
  return records.size();
}

inline std::vector<InstructRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::vector<InstructRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("instruction").get<std::string>(), j.at("input").get<std::string>(),
                     j.at("output").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace picoframe
