// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <span>
#include <string_view>
#include <vector>

#include "kdrl/distill.hpp"
#include "kdrl/gridworld.hpp"
#include "kdrl/nn.hpp"
#include "kdrl/random.hpp"
#include "kdrl/teacher.hpp"

// On-policy training: rollout collection, GAE, and PPO / A2C updates with an optional
// distillation term.
namespace kdrl::rl {

enum class Algorithm { PPO, A2C };

std::string_view algorithm_name(Algorithm algo);
Algorithm parse_algorithm(std::string_view name);

struct TrainConfig {
  Algorithm algorithm = Algorithm::PPO;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double learning_rate = 1e-3;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
  int iterations = 100;  // N
  int epochs = 4;        // K
  int minibatch = 256;   // B
  int horizon = 128;     // T
  int num_envs = 8;      // E
  std::uint64_t seed = 1;

  static TrainConfig defaults(Algorithm algo);
  int frames_per_iteration() const { return horizon * num_envs; }
};

// Throws std::invalid_argument naming the first violated constraint.
void validate(const TrainConfig& config);

struct EpisodeStats {
  double total_return = 0.0;
  bool success = false;
  int length = 0;
};

// E independent environments that reset themselves with fresh seeds.
class EnvPool {
 public:
  EnvPool(grid::Task task, int size, int count, std::uint64_t seed);

  grid::Task task() const { return task_; }
  int size() const { return size_; }
  int count() const { return static_cast<int>(envs_.size()); }
  std::size_t num_actions() const { return grid::action_set(task_).size(); }

  const grid::EnvState& state(int e) const { return envs_[static_cast<std::size_t>(e)]; }
  const grid::Observation& observation(int e) const { return obs_[static_cast<std::size_t>(e)]; }

  struct Transition {
    double reward = 0.0;
    bool done = false;
    bool success = false;
  };
  // Steps env `e`; a finished episode is recorded and the env reset before returning.
  Transition step(int e, int action_index);

  // Episodes finished since the last call.
  std::vector<EpisodeStats> take_finished();

 private:
  void reset(int e);

  grid::Task task_;
  int size_;
  Rng seed_rng_;
  std::vector<grid::EnvState> envs_;
  std::vector<grid::Observation> obs_;
  std::vector<EpisodeStats> running_;
  std::vector<EpisodeStats> finished_;
};

// On-policy storage, record i = t * num_envs + e.
struct RolloutBuffer {
  int horizon = 0;
  int num_envs = 0;
  std::size_t feature_size = 0;
  std::size_t num_actions = 0;

  std::vector<double> features;  // [T*E, feature_size]
  std::vector<grid::FullView> full_views;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<char> dones;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> bootstrap_values;  // [E], value of each env's state after step T

  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> teacher;  // [T*E, num_actions]
  std::vector<char> teacher_ready;

  std::size_t size() const { return actions.size(); }
  std::span<const double> feature_row(std::size_t i) const {
    return {features.data() + i * feature_size, feature_size};
  }
  std::span<const double> teacher_row(std::size_t i) const {
    return {teacher.data() + i * num_actions, num_actions};
  }
};

// Forward pass without keeping a graph. Returns logits [B, A] and values [B].
struct PolicyOutput {
  std::vector<double> logits;
  std::vector<double> values;
};
PolicyOutput evaluate_policy(const nn::ActorCritic& policy, std::span<const double> features, std::size_t batch);

RolloutBuffer collect_rollout(const nn::ActorCritic& policy, EnvPool& envs, int horizon, Rng& rng);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Generalized advantage estimation over a time-major [T, E] layout.
//   delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
//   A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
GaeResult compute_gae(std::span<const double> rewards, std::span<const char> dones, std::span<const double> values,
                      std::span<const double> bootstrap_values, int num_envs, double gamma, double gae_lambda);

// Fills buffer.advantages / buffer.returns; optionally normalizes the advantages.
void compute_gae(RolloutBuffer& buffer, double gamma, double gae_lambda, bool normalize);

// Shifts and scales to zero mean, unit (population) variance. Constant input is only
// centred.
void normalize_advantages(std::span<double> advantages);

// Supplies teacher rows for buffer records, querying each record at most once per buffer.
class TeacherLabeler {
 public:
  explicit TeacherLabeler(teacher::TeacherPolicy& teacher) : teacher_(teacher) {}

  void label(RolloutBuffer& buffer, std::span<const std::size_t> indices);
  std::size_t queries() const { return queries_; }

 private:
  teacher::TeacherPolicy& teacher_;
  std::size_t queries_ = 0;
};

struct LossComponents {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
};

struct UpdateMetrics {
  LossComponents mean;
  std::vector<LossComponents> per_epoch;
  std::size_t teacher_queries = 0;
  // Probability ratios of the first minibatch of the first epoch, before any step.
  std::vector<double> first_ratios;
};

class UpdateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// K epochs of shuffled minibatches; clipped surrogate + value + entropy + lambda * KL.
UpdateMetrics ppo_update(nn::ActorCritic& policy, nn::AdamState& optimizer, RolloutBuffer& buffer,
                         const TrainConfig& config, const distill::DistillConfig& distill, TeacherLabeler* labeler,
                         Rng& rng);

// One step on the whole buffer: -mean(A * log pi) + value + entropy + lambda * KL.
UpdateMetrics a2c_update(nn::ActorCritic& policy, nn::AdamState& optimizer, RolloutBuffer& buffer,
                         const TrainConfig& config, const distill::DistillConfig& distill, TeacherLabeler* labeler);

struct IterationResult {
  UpdateMetrics update;
  std::vector<EpisodeStats> episodes;
  std::int64_t frames = 0;  // cumulative environment steps
};

// Owns one seeded run: policy, optimizer, environments and the random streams.
class Trainer {
 public:
  Trainer(grid::Task task, int size, const TrainConfig& config, const distill::DistillConfig& distill,
          teacher::TeacherPolicy* teacher);

  // Collect, estimate advantages, update.
  IterationResult iterate();

  const nn::ActorCritic& policy() const { return policy_; }
  nn::ActorCritic& policy() { return policy_; }
  std::int64_t frames() const { return frames_; }
  const TrainConfig& config() const { return config_; }
  std::size_t teacher_queries() const { return labeler_ ? labeler_->queries() : 0; }

 private:
  TrainConfig config_;
  distill::DistillConfig distill_;
  nn::ActorCritic policy_;
  nn::AdamState optimizer_;
  EnvPool envs_;
  Rng rollout_rng_;
  Rng update_rng_;
  std::optional<TeacherLabeler> labeler_;
  std::int64_t frames_ = 0;
};

// Greedy (argmax) closed-loop evaluation on the given episode seeds, all episodes stepped
// as one batch.
struct EvalResult {
  double mean_return = 0.0;
  double success_rate = 0.0;
};
EvalResult evaluate_greedy(const nn::ActorCritic& policy, grid::Task task, int size,
                           std::span<const std::uint64_t> episode_seeds);

}  // namespace kdrl::rl
