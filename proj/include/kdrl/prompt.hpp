// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kdrl/gridworld.hpp"
#include "kdrl/teacher.hpp"

// Two-stage LVLM prompting: a scene-analysis request, then an action-inference request
// that embeds the analysis and a few worked examples and asks for one probability per
// action.
namespace kdrl::teacher {

enum class PromptStage { Analysis, ActionInference };

struct FewShotExample {
  std::string rendered_state;
  std::string analysis;
  ActionDistribution distribution;
  std::vector<std::string> action_names;
};

struct Prompt {
  PromptStage stage = PromptStage::Analysis;
  std::string text;
  std::vector<FewShotExample> few_shot;
};

// Templates use {{name}} placeholders.
struct PromptTemplates {
  std::string analysis;
  std::string action;
  std::string example;

  static PromptTemplates defaults();
  // Reads analysis.txt, action.txt and example.txt from `dir`; missing files keep the
  // default text.
  static PromptTemplates load(const std::filesystem::path& dir);
  // Short digest of the template text; changes whenever any template changes.
  std::string version() const;
};

class TemplateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Substitutes every {{key}}; throws TemplateError on a placeholder with no value.
std::string fill_template(const std::string& text, const std::map<std::string, std::string>& values);

std::string action_description(grid::Action action);

Prompt build_analysis_prompt(const PromptTemplates& templates, const std::string& rendered_state,
                             const std::string& mission_text);

Prompt build_action_prompt(const PromptTemplates& templates, const std::string& analysis_text,
                           std::span<const FewShotExample> examples, std::span<const std::string> action_names,
                           const std::string& mission_text = "");

// Plain-text scene summary (agent pose, target position, hazards) of a full view. Used as
// the analysis part of the few-shot exemplars.
std::string describe_scene(const grid::FullView& view);

// `count` exemplars for the task drawn from fixed seeds, labelled by the oracle.
std::vector<FewShotExample> make_few_shot_examples(grid::Task task, int size, int count,
                                                   SoftenMode mode = SoftenMode::make_soft());

std::vector<std::string> action_names(grid::Task task);

// "<name>: <probability>" lines.
std::string format_distribution(const ActionDistribution& dist, std::span<const std::string> names);

}  // namespace kdrl::teacher
