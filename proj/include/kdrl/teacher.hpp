// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdrl/gridworld.hpp"

namespace kdrl::teacher {

// Probability vector over a task's action set.
struct ActionDistribution {
  std::vector<double> probs;

  static ActionDistribution uniform(std::size_t n);
  std::size_t size() const { return probs.size(); }
  // Lowest index among the maxima.
  int argmax() const;
  bool is_valid(double tolerance = 1e-6) const;

  friend bool operator==(const ActionDistribution&, const ActionDistribution&) = default;
};

// pi_T(a | o, prompt): an action distribution computed from the full observation. The
// mission travels inside the view.
class TeacherPolicy {
 public:
  virtual ~TeacherPolicy() = default;

  virtual ActionDistribution query(const grid::FullView& view) = 0;
  // Answers in input order. The default runs query() sequentially.
  virtual std::vector<ActionDistribution> query_batch(std::span<const grid::FullView* const> views);
  // Identifies the teacher and its settings; part of every cache key.
  virtual std::string describe() const = 0;
  // Queries that produced a fallback (uniform) answer.
  virtual std::size_t failure_count() const { return 0; }
};

struct SoftenMode {
  bool hard = false;
  double epsilon_floor = 0.05;

  static SoftenMode make_hard() { return {true, 0.0}; }
  static SoftenMode make_soft(double epsilon = 0.05) { return {false, epsilon}; }
};

// Hard: one-hot at `optimal`. Soft: epsilon_floor on every other action and the
// remaining mass on `optimal`.
ActionDistribution soften(int optimal, std::size_t num_actions, SoftenMode mode);

class PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// First action of the scripted planner. Deterministic tasks use breadth-first search over
// (x, y, dir) to the task's target pose; DynamicObstacles uses a safe-greedy rule. Throws
// PlanError when the target cannot be reached.
grid::Action oracle_plan(const grid::FullView& view);

// Length of the planner's shortest plan (including a final Pickup/Done) for the
// deterministic tasks; nullopt when unreachable.
std::optional<int> oracle_plan_length(const grid::FullView& view);

class OracleTeacher final : public TeacherPolicy {
 public:
  explicit OracleTeacher(SoftenMode mode = SoftenMode::make_soft()) : mode_(mode) {}

  ActionDistribution query(const grid::FullView& view) override;
  std::string describe() const override;
  std::size_t failure_count() const override { return failures_.load(); }

 private:
  SoftenMode mode_;
  std::atomic<std::size_t> failures_{0};
};

}  // namespace kdrl::teacher
