// SPDX-License-Identifier: Apache-2.0
#include "kdrl/gridworld.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <deque>
#include <sstream>

#include "kdrl/random.hpp"

namespace kdrl::grid {

namespace {

constexpr std::array<Action, 3> kNavActions{Action::TurnLeft, Action::TurnRight, Action::Forward};
constexpr std::array<Action, 4> kFetchActions{Action::TurnLeft, Action::TurnRight, Action::Forward,
                                              Action::Pickup};
constexpr std::array<Action, 4> kDoorActions{Action::TurnLeft, Action::TurnRight, Action::Forward,
                                             Action::Done};

constexpr std::array<Kind, 4> kMissionKinds{Kind::Ball, Kind::Key, Kind::Box, Kind::Door};

constexpr std::size_t kCellChannels = 10 + kNumColors + 2;

Pos random_interior(const Grid& grid, Rng& rng) {
  return {uniform_int(rng, 1, grid.width() - 2), uniform_int(rng, 1, grid.height() - 2)};
}

Pos random_empty_interior(const Grid& grid, Rng& rng, std::span<const Pos> exclude = {}) {
  for (;;) {
    const Pos p = random_interior(grid, rng);
    if (grid.at(p).kind != Kind::Empty) continue;
    if (std::find(exclude.begin(), exclude.end(), p) != exclude.end()) continue;
    return p;
  }
}

// True when some walkable cell reachable from `start` is orthogonally adjacent to `target`.
bool can_reach_adjacent(const Grid& grid, Pos start, Pos target) {
  std::vector<char> seen(static_cast<std::size_t>(grid.width() * grid.height()), 0);
  std::deque<Pos> frontier{start};
  seen[static_cast<std::size_t>(start.y * grid.width() + start.x)] = 1;
  while (!frontier.empty()) {
    const Pos p = frontier.front();
    frontier.pop_front();
    if (std::abs(p.x - target.x) + std::abs(p.y - target.y) == 1) return true;
    for (int d = 0; d < 4; ++d) {
      const Pos v = dir_vec(static_cast<Dir>(d));
      const Pos n{p.x + v.x, p.y + v.y};
      if (!grid.in_bounds(n) || !grid.at(n).walkable()) continue;
      auto& s = seen[static_cast<std::size_t>(n.y * grid.width() + n.x)];
      if (s) continue;
      s = 1;
      frontier.push_back(n);
    }
  }
  return false;
}

Color random_color(Rng& rng) { return static_cast<Color>(uniform_int(rng, 0, kNumColors - 1)); }

Dir random_dir(Rng& rng) { return static_cast<Dir>(uniform_int(rng, 0, 3)); }

void check_size(Task task, int size) {
  if (size >= min_size(task)) return;
  std::ostringstream msg;
  msg << task_name(task) << " needs size >= " << min_size(task);
  switch (task) {
    case Task::LavaGap:
      msg << " (agent column, lava column and goal column inside the border)";
      break;
    case Task::DynamicObstacles:
      msg << " (agent, goal and obstacles inside the border)";
      break;
    case Task::Fetch:
      msg << " (target, distractor and agent inside the border)";
      break;
    case Task::GoToDoor:
      msg << " (one door per wall away from the corners)";
      break;
    case Task::EmptyRoom:
      msg << " (agent and goal inside the border)";
      break;
  }
  msg << ", got " << size;
  throw TaskError(msg.str());
}

void generate_empty(EnvState& s, int size) {
  s.agent = {1, 1, Dir::East};
  s.grid.at(size - 2, size - 2) = Cell::goal();
  s.mission.text = "get to the green goal square";
}

void generate_lava_gap(EnvState& s, int size) {
  s.agent = {1, 1, Dir::East};
  s.grid.at(size - 2, size - 2) = Cell::goal();
  const int column = uniform_int(s.rng, 2, size - 3);
  const int gap = uniform_int(s.rng, 1, size - 2);
  for (int y = 1; y < size - 1; ++y) {
    if (y != gap) s.grid.at(column, y) = Cell::lava();
  }
  s.mission.text = "avoid the lava and get to the green goal square";
}

void generate_dynamic_obstacles(EnvState& s, int size) {
  s.agent = {1, 1, Dir::East};
  s.grid.at(size - 2, size - 2) = Cell::goal();
  const int count = std::max(1, size - 4);
  const std::array<Pos, 1> agent{s.agent.pos()};
  for (int i = 0; i < count; ++i) {
    const Pos p = random_empty_interior(s.grid, s.rng, agent);
    s.grid.at(p) = Cell::obstacle();
    s.obstacles.push_back(p);
  }
  s.mission.text = "get to the green goal square, avoiding the moving obstacles";
}

void generate_fetch(EnvState& s, int size) {
  const int num_objects = size >= 8 ? 3 : 2;
  const Grid blank = s.grid;
  for (;;) {
    s.grid = blank;
    std::vector<Pos> placed;
    const Kind target_kind = uniform_int(s.rng, 0, 1) == 0 ? Kind::Key : Kind::Ball;
    const Color target_color = random_color(s.rng);
    const Pos target = random_empty_interior(s.grid, s.rng);
    s.grid.at(target) = Cell::object(target_kind, target_color);
    placed.push_back(target);
    while (static_cast<int>(placed.size()) < num_objects) {
      const Kind kind = uniform_int(s.rng, 0, 1) == 0 ? Kind::Key : Kind::Ball;
      const Color color = random_color(s.rng);
      if (kind == target_kind && color == target_color) continue;
      const Pos p = random_empty_interior(s.grid, s.rng);
      s.grid.at(p) = Cell::object(kind, color);
      placed.push_back(p);
    }
    const Pos start = random_empty_interior(s.grid, s.rng);
    s.agent = {start.x, start.y, random_dir(s.rng)};
    if (!can_reach_adjacent(s.grid, start, target)) continue;
    s.mission.target_kind = target_kind;
    s.mission.target_color = target_color;
    s.mission.text = "get a " + std::string(color_name(target_color)) + " " +
                     std::string(kind_name(target_kind));
    return;
  }
}

void generate_go_to_door(EnvState& s, int size) {
  std::array<Color, kNumColors> colors{Color::Red,    Color::Green,  Color::Blue,
                                       Color::Purple, Color::Yellow, Color::Grey};
  shuffle(s.rng, std::span<Color>(colors));
  const std::array<Pos, 4> doors{
      Pos{uniform_int(s.rng, 1, size - 2), 0},
      Pos{size - 1, uniform_int(s.rng, 1, size - 2)},
      Pos{uniform_int(s.rng, 1, size - 2), size - 1},
      Pos{0, uniform_int(s.rng, 1, size - 2)},
  };
  for (std::size_t i = 0; i < doors.size(); ++i) {
    s.grid.at(doors[i]) = Cell::make_door(colors[i], DoorState::Closed);
  }
  const int target = uniform_int(s.rng, 0, 3);
  const Color target_color = colors[static_cast<std::size_t>(target)];
  const Pos start = random_empty_interior(s.grid, s.rng);
  s.agent = {start.x, start.y, random_dir(s.rng)};
  s.mission.target_kind = Kind::Door;
  s.mission.target_color = target_color;
  s.mission.text = "go to the " + std::string(color_name(target_color)) + " door";
}

bool matches_mission(const Mission& mission, const Cell& cell) {
  return mission.target_kind && cell.kind == *mission.target_kind && cell.color == mission.target_color;
}

void move_obstacles(EnvState& s) {
  for (Pos& p : s.obstacles) {
    std::array<Pos, 4> free{};
    int n = 0;
    for (int d = 0; d < 4; ++d) {
      const Pos v = dir_vec(static_cast<Dir>(d));
      const Pos q{p.x + v.x, p.y + v.y};
      if (!s.grid.in_bounds(q) || s.grid.at(q).kind != Kind::Empty) continue;
      if (q == s.agent.pos()) continue;
      free[static_cast<std::size_t>(n++)] = q;
    }
    if (n == 0) continue;
    const Pos q = free[static_cast<std::size_t>(uniform_int(s.rng, 0, n - 1))];
    s.grid.at(p) = Cell::empty();
    s.grid.at(q) = Cell::obstacle();
    p = q;
  }
}

char color_letter(Color c) {
  switch (c) {
    case Color::Red: return 'r';
    case Color::Green: return 'g';
    case Color::Blue: return 'b';
    case Color::Purple: return 'p';
    case Color::Yellow: return 'y';
    case Color::Grey: return 'e';
  }
  return '?';
}

std::string cell_code(const Cell& c) {
  switch (c.kind) {
    case Kind::Empty: return "..";
    case Kind::Wall: return "##";
    case Kind::Lava: return "~~";
    case Kind::Goal: return "GG";
    case Kind::Obstacle: return "OO";
    case Kind::Door:
      return {*c.door == DoorState::Closed ? 'D' : 'd', color_letter(*c.color)};
    case Kind::Ball: return {'B', color_letter(*c.color)};
    case Kind::Key: return {'K', color_letter(*c.color)};
    case Kind::Box: return {'X', color_letter(*c.color)};
  }
  return "??";
}

std::string agent_code(Dir d) {
  switch (d) {
    case Dir::East: return ">>";
    case Dir::South: return "vv";
    case Dir::West: return "<<";
    case Dir::North: return "^^";
  }
  return "??";
}

}  // namespace

bool is_colorable(Kind kind) {
  return kind == Kind::Door || kind == Kind::Ball || kind == Kind::Key || kind == Kind::Box;
}

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::Empty: return "empty";
    case Kind::Wall: return "wall";
    case Kind::Lava: return "lava";
    case Kind::Door: return "door";
    case Kind::Goal: return "goal";
    case Kind::Ball: return "ball";
    case Kind::Key: return "key";
    case Kind::Box: return "box";
    case Kind::Obstacle: return "obstacle";
  }
  return "unknown";
}

std::string_view color_name(Color color) {
  switch (color) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Blue: return "blue";
    case Color::Purple: return "purple";
    case Color::Yellow: return "yellow";
    case Color::Grey: return "grey";
  }
  return "unknown";
}

std::string_view dir_name(Dir dir) {
  switch (dir) {
    case Dir::East: return "east";
    case Dir::South: return "south";
    case Dir::West: return "west";
    case Dir::North: return "north";
  }
  return "unknown";
}

Cell Cell::object(Kind kind, Color c) {
  if (kind != Kind::Ball && kind != Kind::Key && kind != Kind::Box) {
    throw std::invalid_argument("Cell::object: not a pickable kind");
  }
  return {kind, c, std::nullopt};
}

bool Cell::walkable() const {
  return kind == Kind::Empty || kind == Kind::Goal || (kind == Kind::Door && door == DoorState::Open);
}

bool Cell::see_through() const {
  if (kind == Kind::Wall) return false;
  if (kind == Kind::Door) return door == DoorState::Open;
  return true;
}

bool Cell::valid() const {
  return color.has_value() == is_colorable(kind) && door.has_value() == (kind == Kind::Door);
}

Pos dir_vec(Dir dir) {
  switch (dir) {
    case Dir::East: return {1, 0};
    case Dir::South: return {0, 1};
    case Dir::West: return {-1, 0};
    case Dir::North: return {0, -1};
  }
  return {0, 0};
}

Dir turn_left(Dir dir) { return static_cast<Dir>((static_cast<int>(dir) + 3) % 4); }
Dir turn_right(Dir dir) { return static_cast<Dir>((static_cast<int>(dir) + 1) % 4); }

Pos AgentPose::front() const {
  const Pos v = dir_vec(dir);
  return {x + v.x, y + v.y};
}

Grid::Grid(int width, int height)
    : width_(width), height_(height), cells_(static_cast<std::size_t>(width * height)) {}

const Cell& Grid::at(int x, int y) const {
  if (!in_bounds(x, y)) throw std::out_of_range("Grid::at: position outside the grid");
  return cells_[static_cast<std::size_t>(y * width_ + x)];
}

Cell& Grid::at(int x, int y) {
  if (!in_bounds(x, y)) throw std::out_of_range("Grid::at: position outside the grid");
  return cells_[static_cast<std::size_t>(y * width_ + x)];
}

std::size_t Grid::count(Kind kind) const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(), [kind](const Cell& c) { return c.kind == kind; }));
}

void Grid::wall_border() {
  for (int x = 0; x < width_; ++x) {
    at(x, 0) = Cell::wall();
    at(x, height_ - 1) = Cell::wall();
  }
  for (int y = 0; y < height_; ++y) {
    at(0, y) = Cell::wall();
    at(width_ - 1, y) = Cell::wall();
  }
}

std::string_view task_name(Task task) {
  switch (task) {
    case Task::LavaGap: return "LavaGap";
    case Task::DynamicObstacles: return "DynamicObstacles";
    case Task::Fetch: return "Fetch";
    case Task::GoToDoor: return "GoToDoor";
    case Task::EmptyRoom: return "EmptyRoom";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  std::string lower;
  for (char c : name) {
    if (c == '-' || c == '_') continue;
    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (lower == "lavagap") return Task::LavaGap;
  if (lower == "dynamicobstacles") return Task::DynamicObstacles;
  if (lower == "fetch") return Task::Fetch;
  if (lower == "gotodoor") return Task::GoToDoor;
  if (lower == "emptyroom" || lower == "empty") return Task::EmptyRoom;
  throw TaskError("unknown task '" + std::string(name) + "'");
}

int default_size(Task task) {
  switch (task) {
    case Task::LavaGap: return 5;
    case Task::DynamicObstacles: return 6;
    case Task::Fetch: return 6;
    case Task::GoToDoor: return 6;
    case Task::EmptyRoom: return 5;
  }
  return 5;
}

std::string_view action_name(Action action) {
  switch (action) {
    case Action::TurnLeft: return "left";
    case Action::TurnRight: return "right";
    case Action::Forward: return "forward";
    case Action::Pickup: return "pickup";
    case Action::Done: return "done";
  }
  return "unknown";
}

std::span<const Action> action_set(Task task) {
  switch (task) {
    case Task::Fetch: return kFetchActions;
    case Task::GoToDoor: return kDoorActions;
    default: return kNavActions;
  }
}

Action action_from_index(Task task, int index) {
  const auto actions = action_set(task);
  if (index < 0 || index >= static_cast<int>(actions.size())) {
    throw StepError("action index " + std::to_string(index) + " outside the " +
                    std::string(task_name(task)) + " action set of size " +
                    std::to_string(actions.size()));
  }
  return actions[static_cast<std::size_t>(index)];
}

int action_index(Task task, Action action) {
  const auto actions = action_set(task);
  const auto it = std::find(actions.begin(), actions.end(), action);
  if (it == actions.end()) return -1;
  return static_cast<int>(it - actions.begin());
}

int min_size(Task) { return 5; }

int max_steps_for(Task task, int size) {
  const bool long_horizon = task == Task::Fetch || task == Task::GoToDoor;
  return (long_horizon ? 8 : 4) * size * size;
}

double success_reward(int step_count, int max_steps) {
  return 1.0 - 0.9 * (static_cast<double>(step_count) / static_cast<double>(max_steps));
}

EnvState make_task(Task task, int size, std::uint64_t seed) {
  check_size(task, size);
  EnvState s;
  s.task = task;
  s.rng.seed(seed);
  s.grid = Grid(size, size);
  s.grid.wall_border();
  s.max_steps = max_steps_for(task, size);
  switch (task) {
    case Task::EmptyRoom: generate_empty(s, size); break;
    case Task::LavaGap: generate_lava_gap(s, size); break;
    case Task::DynamicObstacles: generate_dynamic_obstacles(s, size); break;
    case Task::Fetch: generate_fetch(s, size); break;
    case Task::GoToDoor: generate_go_to_door(s, size); break;
  }
  return s;
}

StepResult step(EnvState& s, Action action) {
  if (s.finished) throw StepError("step called on a finished episode");
  if (action_index(s.task, action) < 0) {
    throw StepError("action '" + std::string(action_name(action)) + "' is not available in " +
                    std::string(task_name(s.task)));
  }
  ++s.step_count;
  StepResult r;
  const Pos front = s.agent.front();
  switch (action) {
    case Action::TurnLeft: s.agent.dir = turn_left(s.agent.dir); break;
    case Action::TurnRight: s.agent.dir = turn_right(s.agent.dir); break;
    case Action::Forward: {
      const Cell& cell = s.grid.at(front);
      if (cell.kind == Kind::Lava || cell.kind == Kind::Obstacle) {
        r.terminated = true;
      } else if (cell.walkable()) {
        s.agent.x = front.x;
        s.agent.y = front.y;
        if (cell.kind == Kind::Goal) r.terminated = r.success = true;
      }
      break;
    }
    case Action::Pickup: {
      const Cell cell = s.grid.at(front);
      if (cell.kind == Kind::Ball || cell.kind == Kind::Key || cell.kind == Kind::Box) {
        s.carried = cell;
        s.grid.at(front) = Cell::empty();
        r.terminated = true;
        r.success = matches_mission(s.mission, cell);
      }
      break;
    }
    case Action::Done: {
      r.terminated = true;
      r.success = matches_mission(s.mission, s.grid.at(front));
      break;
    }
  }
  if (!r.terminated && s.task == Task::DynamicObstacles) move_obstacles(s);
  if (r.success) r.reward = success_reward(s.step_count, s.max_steps);
  if (!r.terminated && s.step_count >= s.max_steps) r.truncated = true;
  s.finished = r.terminated || r.truncated;
  r.observation = observe(s);
  return r;
}

StepResult step_index(EnvState& state, int index) {
  return step(state, action_from_index(state.task, index));
}

FullView full_view(const EnvState& s) {
  return FullView{s.task, s.grid, s.agent, s.mission, s.carried};
}

ViewCell encode_cell(const Cell& cell) {
  ViewCell v;
  v.kind = 1 + static_cast<int>(cell.kind);
  v.color = cell.color ? 1 + static_cast<int>(*cell.color) : 0;
  v.state = cell.door ? (*cell.door == DoorState::Open ? 1 : 2) : 0;
  return v;
}

std::vector<ViewCell> student_view(const FullView& view) {
  constexpr int k = kViewSize;
  const Pos f = dir_vec(view.agent.dir);
  const Pos right{-f.y, f.x};
  std::vector<Cell> cells(static_cast<std::size_t>(k * k));
  for (int vy = 0; vy < k; ++vy) {
    for (int vx = 0; vx < k; ++vx) {
      const int ahead = k - 1 - vy;
      const int side = vx - k / 2;
      const Pos w{view.agent.x + f.x * ahead + right.x * side, view.agent.y + f.y * ahead + right.y * side};
      cells[static_cast<std::size_t>(vy * k + vx)] = view.grid.in_bounds(w) ? view.grid.at(w) : Cell::wall();
    }
  }
  // The agent's own cell never blocks sight.
  const std::size_t agent_idx = static_cast<std::size_t>((k - 1) * k + k / 2);
  auto opaque = [&](int x, int y) {
    const auto idx = static_cast<std::size_t>(y * k + x);
    return idx != agent_idx && !cells[idx].see_through();
  };

  std::vector<char> mask(cells.size(), 0);
  mask[agent_idx] = 1;
  auto mark = [&](int x, int y) { mask[static_cast<std::size_t>(y * k + x)] = 1; };
  auto visible = [&](int x, int y) { return mask[static_cast<std::size_t>(y * k + x)] != 0; };
  for (int y = k - 1; y >= 0; --y) {
    for (int x = 0; x < k - 1; ++x) {
      if (!visible(x, y) || opaque(x, y)) continue;
      mark(x + 1, y);
      if (y > 0) {
        mark(x + 1, y - 1);
        mark(x, y - 1);
      }
    }
    for (int x = k - 1; x > 0; --x) {
      if (!visible(x, y) || opaque(x, y)) continue;
      mark(x - 1, y);
      if (y > 0) {
        mark(x - 1, y - 1);
        mark(x, y - 1);
      }
    }
  }

  std::vector<ViewCell> out(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (mask[i]) out[i] = encode_cell(cells[i]);
  }
  return out;
}

Observation observe(const EnvState& s) {
  Observation obs;
  obs.full_view = full_view(s);
  obs.student_view = student_view(obs.full_view);
  obs.mission_text = s.mission.text;
  return obs;
}

std::string render_full_text(const FullView& view) {
  std::ostringstream out;
  out << "mission: " << view.mission.text << "\n";
  out << "legend: ## wall, .. empty floor, ~~ lava (deadly), GG goal square, OO moving obstacle, "
         "D? closed door, d? open door, B? ball, K? key, X? box, "
         ">> vv << ^^ agent facing east/south/west/north; "
         "? is the color: r red, g green, b blue, p purple, y yellow, e grey\n";
  out << "grid (" << view.grid.width() << " columns x " << view.grid.height()
      << " rows; x grows to the right, y grows downward, (0,0) is the top-left corner):\n";
  for (int y = 0; y < view.grid.height(); ++y) {
    for (int x = 0; x < view.grid.width(); ++x) {
      if (x > 0) out << ' ';
      if (x == view.agent.x && y == view.agent.y) {
        out << agent_code(view.agent.dir);
      } else {
        out << cell_code(view.grid.at(x, y));
      }
    }
    out << "\n";
  }
  out << "agent: x=" << view.agent.x << " y=" << view.agent.y << " facing " << dir_name(view.agent.dir)
      << ", standing on " << cell_code(view.grid.at(view.agent.x, view.agent.y)) << "\n";
  out << "carrying: " << (view.carried ? cell_code(*view.carried) : std::string("nothing")) << "\n";
  return out.str();
}

std::string canonical_text(const FullView& view) {
  std::ostringstream out;
  out << "kdrl-view v1\n";
  out << "task " << task_name(view.task) << "\n";
  out << "size " << view.grid.width() << " " << view.grid.height() << "\n";
  out << "agent " << view.agent.x << " " << view.agent.y << " " << dir_name(view.agent.dir) << "\n";
  out << "carried " << (view.carried ? cell_code(*view.carried) : std::string("none")) << "\n";
  out << "target " << (view.mission.target_kind ? kind_name(*view.mission.target_kind) : "none") << " "
      << (view.mission.target_color ? color_name(*view.mission.target_color) : "none") << "\n";
  out << "mission " << view.mission.text.size() << " " << view.mission.text << "\n";
  for (int y = 0; y < view.grid.height(); ++y) {
    for (int x = 0; x < view.grid.width(); ++x) out << cell_code(view.grid.at(x, y));
    out << "\n";
  }
  return out.str();
}

std::string serialize_state(const EnvState& state) {
  std::ostringstream out;
  out << "kdrl-state v1\n";
  out << "step " << state.step_count << " " << state.max_steps << "\n";
  out << canonical_text(full_view(state));
  return out.str();
}

std::size_t encoded_size() {
  return static_cast<std::size_t>(kViewSize * kViewSize) * kCellChannels +
         kMissionKinds.size() * kNumColors;
}

void encode_student_into(const Observation& obs, std::span<double> out) {
  if (out.size() != encoded_size()) throw std::invalid_argument("encode_student_into: wrong output size");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < obs.student_view.size(); ++i) {
    const ViewCell& c = obs.student_view[i];
    double* block = out.data() + i * kCellChannels;
    block[c.kind] = 1.0;
    if (c.color > 0) block[10 + c.color - 1] = 1.0;
    if (c.state > 0) block[10 + kNumColors + c.state - 1] = 1.0;
  }
  const Mission& m = obs.full_view.mission;
  if (m.target_kind && m.target_color) {
    const auto it = std::find(kMissionKinds.begin(), kMissionKinds.end(), *m.target_kind);
    if (it != kMissionKinds.end()) {
      const auto kind_idx = static_cast<std::size_t>(it - kMissionKinds.begin());
      const std::size_t base = static_cast<std::size_t>(kViewSize * kViewSize) * kCellChannels;
      out[base + kind_idx * kNumColors + static_cast<std::size_t>(*m.target_color)] = 1.0;
    }
  }
}

std::vector<double> encode_student(const Observation& obs) {
  std::vector<double> out(encoded_size());
  encode_student_into(obs, out);
  return out;
}

}  // namespace kdrl::grid
