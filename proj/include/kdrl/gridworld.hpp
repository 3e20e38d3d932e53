// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kdrl::grid {

enum class Kind : std::uint8_t { Empty, Wall, Lava, Door, Goal, Ball, Key, Box, Obstacle };
enum class Color : std::uint8_t { Red, Green, Blue, Purple, Yellow, Grey };
enum class DoorState : std::uint8_t { Open, Closed };
enum class Dir : std::uint8_t { East, South, West, North };

inline constexpr int kNumKinds = 9;
inline constexpr int kNumColors = 6;

bool is_colorable(Kind kind);
std::string_view kind_name(Kind kind);
std::string_view color_name(Color color);
std::string_view dir_name(Dir dir);

struct Cell {
  Kind kind = Kind::Empty;
  std::optional<Color> color;
  std::optional<DoorState> door;

  static Cell empty() { return {}; }
  static Cell wall() { return {Kind::Wall, std::nullopt, std::nullopt}; }
  static Cell lava() { return {Kind::Lava, std::nullopt, std::nullopt}; }
  static Cell goal() { return {Kind::Goal, std::nullopt, std::nullopt}; }
  static Cell obstacle() { return {Kind::Obstacle, std::nullopt, std::nullopt}; }
  static Cell make_door(Color c, DoorState s) { return {Kind::Door, c, s}; }
  static Cell object(Kind kind, Color c);

  // Empty, Goal and open doors. Lava is enterable but fatal and is handled by step().
  bool walkable() const;
  bool see_through() const;
  bool valid() const;

  friend bool operator==(const Cell&, const Cell&) = default;
};

struct Pos {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pos&, const Pos&) = default;
};

Pos dir_vec(Dir dir);
Dir turn_left(Dir dir);
Dir turn_right(Dir dir);

struct AgentPose {
  int x = 0;
  int y = 0;
  Dir dir = Dir::East;

  Pos pos() const { return {x, y}; }
  Pos front() const;
  friend bool operator==(const AgentPose&, const AgentPose&) = default;
};

class Grid {
 public:
  Grid() = default;
  Grid(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool in_bounds(Pos p) const { return in_bounds(p.x, p.y); }

  const Cell& at(int x, int y) const;
  Cell& at(int x, int y);
  const Cell& at(Pos p) const { return at(p.x, p.y); }
  Cell& at(Pos p) { return at(p.x, p.y); }

  std::size_t count(Kind kind) const;
  void wall_border();

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Cell> cells_;
};

enum class Task : std::uint8_t { LavaGap, DynamicObstacles, Fetch, GoToDoor, EmptyRoom };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);
int default_size(Task task);

enum class Action : std::uint8_t { TurnLeft, TurnRight, Forward, Pickup, Done };

std::string_view action_name(Action action);
std::span<const Action> action_set(Task task);
Action action_from_index(Task task, int index);
int action_index(Task task, Action action);

struct Mission {
  std::string text;
  std::optional<Kind> target_kind;
  std::optional<Color> target_color;

  friend bool operator==(const Mission&, const Mission&) = default;
};

// Complete top-down view of the world handed to teachers. Everything in EnvState except
// the step counter and the generator state.
struct FullView {
  Task task = Task::EmptyRoom;
  Grid grid;
  AgentPose agent;
  Mission mission;
  std::optional<Cell> carried;

  friend bool operator==(const FullView&, const FullView&) = default;
};

inline constexpr int kViewSize = 7;

// (kind, color, state) integer triple of one egocentric view cell.
// kind 0 means unseen, otherwise 1 + Kind. color 0 means none, otherwise 1 + Color.
// state 0 means none, 1 open, 2 closed.
struct ViewCell {
  int kind = 0;
  int color = 0;
  int state = 0;
  friend bool operator==(const ViewCell&, const ViewCell&) = default;
};

ViewCell encode_cell(const Cell& cell);

struct Observation {
  // kViewSize x kViewSize, row-major, agent at column kViewSize/2 of the last row, facing up.
  std::vector<ViewCell> student_view;
  std::string mission_text;
  FullView full_view;
};

struct EnvState {
  Task task = Task::EmptyRoom;
  Grid grid;
  AgentPose agent;
  Mission mission;
  int step_count = 0;
  int max_steps = 1;
  std::mt19937_64 rng;
  std::optional<Cell> carried;
  // Obstacle positions in a stable order; drives the order obstacles move in.
  std::vector<Pos> obstacles;
  bool finished = false;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
  bool success = false;
};

class TaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StepError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

int min_size(Task task);
int max_steps_for(Task task, int size);

EnvState make_task(Task task, int size, std::uint64_t seed);
StepResult step(EnvState& state, Action action);
StepResult step_index(EnvState& state, int action_index);

FullView full_view(const EnvState& state);
Observation observe(const EnvState& state);

// Success reward for finishing on step `step_count` of `max_steps`.
double success_reward(int step_count, int max_steps);

std::vector<ViewCell> student_view(const FullView& view);

// Human/LVLM-facing grid rendering with legend and mission line; injective over
// (grid, agent, mission, carried).
std::string render_full_text(const FullView& view);
inline std::string render_full_text(const EnvState& state) { return render_full_text(full_view(state)); }

// Version-tagged canonical text of everything a teacher can see.
std::string canonical_text(const FullView& view);
// As canonical_text plus the step counter and horizon.
std::string serialize_state(const EnvState& state);

// Fixed length of encode_student output for every task.
std::size_t encoded_size();
std::vector<double> encode_student(const Observation& obs);
void encode_student_into(const Observation& obs, std::span<double> out);

}  // namespace kdrl::grid
