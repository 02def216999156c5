#pragma once

#include <string>
#include <vector>

#include "picoframe/errors.hpp"
#include "picoframe/instructgen.hpp"

namespace picoframe {

struct PromptSpec {
  std::string task_description;
  std::vector<InstructRecord> demonstrations;  // most similar first
  std::string input_text;

  std::size_t k() const { return demonstrations.size(); }
};

inline std::string render_demonstration(const InstructRecord& r) {
  return "input: " + r.input + "\noutput:\n" + r.output;
}

// Task description, blank line, demonstrations separated by blank lines,
// blank line, then the open "input: ...\noutput:\n" slot for the model.
// A positive max_chars turns an oversized prompt into an error.
inline std::string assemble_prompt(const PromptSpec& spec, std::size_t max_chars = 0) {
  std::string out = spec.task_description;
  out += "\n\n";
  for (const auto& demo : spec.demonstrations) {
    out += render_demonstration(demo);
    out += "\n\n";
  }
  out += "input: ";
  out += spec.input_text;
  out += "\noutput:\n";
  if (max_chars > 0 && out.size() > max_chars)
    throw UsageError("prompt of " + std::to_string(out.size()) + " characters exceeds the limit of " +
                     std::to_string(max_chars) + " (k=" + std::to_string(spec.k()) + ")");
  return out;
}

// Text between the last "input: " marker and the following "\noutput:".
inline std::string prompt_input_text(std::string_view prompt) {
  auto pos = prompt.rfind("input: ");
  if (pos == std::string_view::npos) return {};
  auto rest = prompt.substr(pos + 7);
  auto end = rest.find("\noutput:");
  return std::string(end == std::string_view::npos ? rest : rest.substr(0, end));
}

}  // namespace picoframe
