// SPDX-License-Identifier: Apache-2.0
#include "kdrl/prompt.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "kdrl/digest.hpp"

namespace kdrl::teacher {

namespace {

constexpr const char* kAnalysisTemplate =
    R"(You are looking at a top-down map of a small grid world. The agent has this mission: {{mission}}

{{grid}}
Before choosing any action, analyse the scene. Report:
1. the agent's coordinates (x, y) and the direction it is facing,
2. the coordinates of the target named in the mission ({{target}}),
3. hazards near the agent or between the agent and the target (lava, moving obstacles, walls),
4. what is in the cell directly in front of the agent.
Answer in a few short lines.
)";

constexpr const char* kActionTemplate =
    R"(You control the agent in a small grid world. Mission: {{mission}}
Available actions:
{{action_list}}
{{examples}}Scene analysis:
{{analysis}}

Give a probability for every action. Reply with exactly one line per action, in the form
<name>: <probability>
using the names {{action_names}}. Probabilities are numbers between 0 and 1 that sum to 1.
)";

constexpr const char* kExampleTemplate =
    R"(Example {{index}}:
Map:
{{grid}}Analysis:
{{analysis}}
Answer:
{{answer}}
)";

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string target_phrase(const grid::FullView& view) {
  const auto& m = view.mission;
  if (m.target_kind && m.target_color) {
    return std::string(grid::color_name(*m.target_color)) + " " + std::string(grid::kind_name(*m.target_kind));
  }
  return "green goal square";
}

std::string cell_phrase(const grid::Cell& c) {
  std::string s;
  if (c.door) s += *c.door == grid::DoorState::Open ? "open " : "closed ";
  if (c.color) s += std::string(grid::color_name(*c.color)) + " ";
  s += grid::kind_name(c.kind);
  return s;
}

std::string coords(int x, int y) { return "(" + std::to_string(x) + ", " + std::to_string(y) + ")"; }

}  // namespace

PromptTemplates PromptTemplates::defaults() { return {kAnalysisTemplate, kActionTemplate, kExampleTemplate}; }

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  PromptTemplates t = defaults();
  if (auto p = dir / "analysis.txt"; std::filesystem::exists(p)) t.analysis = read_file(p);
  if (auto p = dir / "action.txt"; std::filesystem::exists(p)) t.action = read_file(p);
  if (auto p = dir / "example.txt"; std::filesystem::exists(p)) t.example = read_file(p);
  return t;
}

std::string PromptTemplates::version() const {
  return "tpl-" + hex64(fnv1a64(analysis + '\x1f' + action + '\x1f' + example)).substr(0, 12);
}

std::string fill_template(const std::string& text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t open = text.find("{{", pos);
    if (open == std::string::npos) {
      out.append(text, pos);
      break;
    }
    const std::size_t close = text.find("}}", open + 2);
    if (close == std::string::npos) throw TemplateError("unterminated placeholder in prompt template");
    out.append(text, pos, open - pos);
    const std::string key = text.substr(open + 2, close - open - 2);
    const auto it = values.find(key);
    if (it == values.end()) throw TemplateError("prompt template placeholder {{" + key + "}} has no value");
    out += it->second;
    pos = close + 2;
  }
  return out;
}

std::string action_description(grid::Action action) {
  switch (action) {
    case grid::Action::TurnLeft: return "turn left by 90 degrees, staying in the same cell";
    case grid::Action::TurnRight: return "turn right by 90 degrees, staying in the same cell";
    case grid::Action::Forward: return "move one cell in the facing direction (walls and closed doors block)";
    case grid::Action::Pickup: return "pick up the object in the cell directly in front";
    case grid::Action::Done: return "declare the mission complete (only when facing the target)";
  }
  return "";
}

std::vector<std::string> action_names(grid::Task task) {
  std::vector<std::string> names;
  for (grid::Action a : grid::action_set(task)) names.emplace_back(grid::action_name(a));
  return names;
}

std::string format_distribution(const ActionDistribution& dist, std::span<const std::string> names) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < names.size() && i < dist.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.2f", dist.probs[i]);
    out += names[i] + ": " + buf + "\n";
  }
  return out;
}

Prompt build_analysis_prompt(const PromptTemplates& templates, const std::string& rendered_state,
                             const std::string& mission_text) {
  // The target phrase is recovered from the mission text so the prompt does not depend on
  // anything beyond what the teacher sees.
  std::string target = "the goal square";
  for (const char* prefix : {"get a ", "go to the "}) {
    if (mission_text.rfind(prefix, 0) == 0) target = mission_text.substr(std::string(prefix).size());
  }
  Prompt p;
  p.stage = PromptStage::Analysis;
  p.text = fill_template(templates.analysis, {{"mission", mission_text}, {"grid", rendered_state}, {"target", target}});
  return p;
}

Prompt build_action_prompt(const PromptTemplates& templates, const std::string& analysis_text,
                           std::span<const FewShotExample> examples, std::span<const std::string> names,
                           const std::string& mission_text) {
  if (names.empty()) throw std::invalid_argument("build_action_prompt: no action names");
  std::string action_list;
  std::string name_list;
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::string desc;
    for (grid::Action a : {grid::Action::TurnLeft, grid::Action::TurnRight, grid::Action::Forward,
                           grid::Action::Pickup, grid::Action::Done}) {
      if (grid::action_name(a) == names[i]) desc = action_description(a);
    }
    action_list += "- " + names[i] + (desc.empty() ? "" : ": " + desc) + "\n";
    name_list += (i ? ", " : "") + names[i];
  }
  std::string example_block;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    example_block += fill_template(templates.example, {{"index", std::to_string(i + 1)},
                                                       {"grid", ex.rendered_state},
                                                       {"analysis", ex.analysis},
                                                       {"answer", format_distribution(ex.distribution, ex.action_names)}});
    example_block += "\n";
  }
  Prompt p;
  p.stage = PromptStage::ActionInference;
  p.few_shot.assign(examples.begin(), examples.end());
  p.text = fill_template(templates.action, {{"mission", mission_text},
                                            {"action_list", action_list},
                                            {"examples", example_block},
                                            {"analysis", analysis_text},
                                            {"action_names", name_list}});
  return p;
}

std::string describe_scene(const grid::FullView& view) {
  std::ostringstream s;
  s << "agent: " << coords(view.agent.x, view.agent.y) << " facing " << grid::dir_name(view.agent.dir) << "\n";
  const auto& g = view.grid;
  std::string target_at;
  std::string hazards;
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      const grid::Cell& c = g.at(x, y);
      const bool is_target = view.mission.target_kind ? (c.kind == *view.mission.target_kind &&
                                                         c.color == view.mission.target_color)
                                                      : c.kind == grid::Kind::Goal;
      if (is_target) target_at += (target_at.empty() ? "" : ", ") + coords(x, y);
      if (c.kind == grid::Kind::Lava || c.kind == grid::Kind::Obstacle) {
        hazards += (hazards.empty() ? "" : ", ") + std::string(grid::kind_name(c.kind)) + " at " + coords(x, y);
      }
    }
  }
  s << "target: " << target_phrase(view) << " at " << (target_at.empty() ? "unknown" : target_at) << "\n";
  s << "hazards: " << (hazards.empty() ? "none" : hazards) << "\n";
  const grid::Pos f = view.agent.front();
  s << "in front: " << (g.in_bounds(f) ? cell_phrase(g.at(f)) : "wall");
  return s.str();
}

std::vector<FewShotExample> make_few_shot_examples(grid::Task task, int size, int count, SoftenMode mode) {
  std::vector<FewShotExample> out;
  const auto names = action_names(task);
  OracleTeacher oracle(mode);
  for (int i = 0; i < count; ++i) {
    grid::EnvState state = grid::make_task(task, size, 9001 + static_cast<std::uint64_t>(i));
    // Advance along the oracle's plan so the exemplars show different situations.
    for (int k = 0; k < 2 * i && !state.finished; ++k) {
      const auto d = oracle.query(grid::full_view(state));
      const auto r = grid::step_index(state, d.argmax());
      if (r.terminated || r.truncated) state = grid::make_task(task, size, 9001 + static_cast<std::uint64_t>(i));
    }
    const grid::FullView view = grid::full_view(state);
    out.push_back({grid::render_full_text(view), describe_scene(view), oracle.query(view), names});
  }
  return out;
}

}  // namespace kdrl::teacher
