// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <sstream>

#include "kdrl/teacher.hpp"

namespace kdrl::teacher {

using grid::Action;
using grid::Cell;
using grid::Dir;
using grid::FullView;
using grid::Kind;
using grid::Pos;

namespace {

struct Target {
  Pos pos;
  // Reach the cell itself (goal) or stand next to it facing it (objects, doors).
  bool face = false;
};

std::optional<Target> find_target(const FullView& view) {
  const auto& g = view.grid;
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      const Cell& c = g.at(x, y);
      switch (view.task) {
        case grid::Task::LavaGap:
        case grid::Task::EmptyRoom:
        case grid::Task::DynamicObstacles:
          if (c.kind == Kind::Goal) return Target{{x, y}, false};
          break;
        case grid::Task::Fetch:
        case grid::Task::GoToDoor:
          if (view.mission.target_kind && c.kind == *view.mission.target_kind &&
              c.color == view.mission.target_color) {
            return Target{{x, y}, true};
          }
          break;
      }
    }
  }
  return std::nullopt;
}

using Blocked = std::function<bool(Pos)>;

// Shortest action sequence from the agent pose to the target pose over turn/forward moves.
std::optional<std::vector<Action>> search(const FullView& view, const Target& target, const Blocked& blocked) {
  const auto& g = view.grid;
  const int w = g.width();
  auto index = [w](int x, int y, Dir d) {
    return static_cast<std::size_t>(((y * w) + x) * 4 + static_cast<int>(d));
  };
  auto reached = [&](const grid::AgentPose& p) {
    return target.face ? p.front() == target.pos : p.pos() == target.pos;
  };
  const std::size_t n = static_cast<std::size_t>(w * g.height() * 4);
  std::vector<int> parent(n, -1);
  std::vector<Action> via(n, Action::TurnLeft);
  std::vector<char> seen(n, 0);
  const grid::AgentPose start = view.agent;
  std::deque<grid::AgentPose> frontier{start};
  seen[index(start.x, start.y, start.dir)] = 1;
  constexpr std::array<Action, 3> kMoves{Action::TurnLeft, Action::TurnRight, Action::Forward};
  while (!frontier.empty()) {
    const grid::AgentPose p = frontier.front();
    frontier.pop_front();
    const std::size_t pi = index(p.x, p.y, p.dir);
    if (reached(p)) {
      std::vector<Action> path;
      for (std::size_t i = pi; parent[i] >= 0; i = static_cast<std::size_t>(parent[i])) path.push_back(via[i]);
      std::reverse(path.begin(), path.end());
      return path;
    }
    for (Action a : kMoves) {
      grid::AgentPose q = p;
      if (a == Action::TurnLeft) {
        q.dir = grid::turn_left(p.dir);
      } else if (a == Action::TurnRight) {
        q.dir = grid::turn_right(p.dir);
      } else {
        const Pos f = p.front();
        if (!g.in_bounds(f) || !g.at(f).walkable() || blocked(f)) continue;
        q.x = f.x;
        q.y = f.y;
      }
      const std::size_t qi = index(q.x, q.y, q.dir);
      if (seen[qi]) continue;
      seen[qi] = 1;
      parent[qi] = static_cast<int>(pi);
      via[qi] = a;
      frontier.push_back(q);
    }
  }
  return std::nullopt;
}

bool next_to_obstacle(const grid::Grid& g, Pos p) {
  for (int d = 0; d < 4; ++d) {
    const Pos v = grid::dir_vec(static_cast<Dir>(d));
    const Pos q{p.x + v.x, p.y + v.y};
    if (g.in_bounds(q) && g.at(q).kind == Kind::Obstacle) return true;
  }
  return false;
}

Action safe_greedy(const FullView& view, const Target& goal) {
  const auto& g = view.grid;
  // Prefer routes that keep a one-cell margin from every obstacle.
  auto cautious = [&](Pos p) { return p != goal.pos && next_to_obstacle(g, p); };
  if (auto path = search(view, goal, cautious); path && !path->empty()) return path->front();
  if (auto path = search(view, goal, [](Pos) { return false; }); path && !path->empty()) return path->front();
  // Boxed in: turn toward the side whose front cell is free, preferring the calmer one.
  auto score = [&](Dir d) {
    grid::AgentPose q = view.agent;
    q.dir = d;
    const Pos f = q.front();
    if (!g.in_bounds(f) || !g.at(f).walkable()) return 0;
    return next_to_obstacle(g, f) ? 1 : 2;
  };
  return score(grid::turn_right(view.agent.dir)) > score(grid::turn_left(view.agent.dir)) ? Action::TurnRight
                                                                                          : Action::TurnLeft;
}

Action terminal_action(grid::Task task) {
  return task == grid::Task::Fetch ? Action::Pickup : Action::Done;
}

}  // namespace

ActionDistribution ActionDistribution::uniform(std::size_t n) {
  return {std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

int ActionDistribution::argmax() const {
  if (probs.empty()) return -1;
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

bool ActionDistribution::is_valid(double tolerance) const {
  if (probs.empty()) return false;
  double s = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) return false;
    s += p;
  }
  return std::abs(s - 1.0) <= tolerance;
}

std::vector<ActionDistribution> TeacherPolicy::query_batch(std::span<const FullView* const> views) {
  std::vector<ActionDistribution> out;
  out.reserve(views.size());
  for (const FullView* v : views) out.push_back(query(*v));
  return out;
}

ActionDistribution soften(int optimal, std::size_t num_actions, SoftenMode mode) {
  if (num_actions == 0 || optimal < 0 || static_cast<std::size_t>(optimal) >= num_actions) {
    throw std::invalid_argument("soften: action index outside the action set");
  }
  ActionDistribution d;
  if (mode.hard) {
    d.probs.assign(num_actions, 0.0);
    d.probs[static_cast<std::size_t>(optimal)] = 1.0;
    return d;
  }
  const double rest = mode.epsilon_floor * static_cast<double>(num_actions - 1);
  if (!(mode.epsilon_floor >= 0.0) || rest >= 1.0) {
    throw std::invalid_argument("soften: epsilon floor leaves no mass for the optimal action");
  }
  d.probs.assign(num_actions, mode.epsilon_floor);
  d.probs[static_cast<std::size_t>(optimal)] = 1.0 - rest;
  return d;
}

Action oracle_plan(const FullView& view) {
  const auto target = find_target(view);
  if (!target) throw PlanError("no target in the " + std::string(grid::task_name(view.task)) + " grid");
  if (view.task == grid::Task::DynamicObstacles) return safe_greedy(view, *target);
  const auto path = search(view, *target, [](Pos) { return false; });
  if (!path) throw PlanError("target unreachable from the agent pose");
  if (path->empty()) {
    if (!target->face) throw PlanError("agent already on the goal");
    return terminal_action(view.task);
  }
  return path->front();
}

std::optional<int> oracle_plan_length(const FullView& view) {
  const auto target = find_target(view);
  if (!target) return std::nullopt;
  const auto path = search(view, *target, [](Pos) { return false; });
  if (!path) return std::nullopt;
  return static_cast<int>(path->size()) + (target->face ? 1 : 0);
}

ActionDistribution OracleTeacher::query(const FullView& view) {
  const auto n = grid::action_set(view.task).size();
  try {
    const Action a = oracle_plan(view);
    return soften(grid::action_index(view.task, a), n, mode_);
  } catch (const PlanError&) {
    failures_.fetch_add(1);
    return ActionDistribution::uniform(n);
  }
}

std::string OracleTeacher::describe() const {
  std::ostringstream s;
  s << "oracle " << (mode_.hard ? "hard" : "soft") << " eps=" << mode_.epsilon_floor;
  return s.str();
}

}  // namespace kdrl::teacher
