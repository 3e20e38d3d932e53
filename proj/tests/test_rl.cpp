// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "kdrl/rl.hpp"
#include "kdrl/teacher.hpp"
#include "support/oracles.hpp"

using namespace kdrl;
using namespace kdrl::rl;
using grid::Task;

namespace {

nn::ActorCritic make_policy(Task task, std::uint64_t seed = 1) {
  return nn::ActorCritic({grid::encoded_size(), grid::action_set(task).size(), {32, 32}, nn::Activation::Tanh}, seed);
}

nn::Tensor param(const nn::ActorCritic& policy, const std::string& name) {
  for (const auto& p : policy.parameters()) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range(name);
}

// Zeroes the actor weights and sets its bias, so the policy ignores the input.
void fix_action_logits(const nn::ActorCritic& policy, const std::vector<double>& logits) {
  auto w = param(policy, "actor.weight");
  std::fill(w.mutable_values().begin(), w.mutable_values().end(), 0.0);
  auto b = param(policy, "actor.bias");
  std::copy(logits.begin(), logits.end(), b.mutable_values().begin());
}

std::vector<double> flat_parameters(const nn::ActorCritic& policy) {
  std::vector<double> out;
  for (const auto& p : policy.parameters()) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

std::vector<double> values_of(const nn::Tensor& t) { return {t.values().begin(), t.values().end()}; }

// A teacher that answers with the given policy's own action distribution.
class SelfTeacher final : public teacher::TeacherPolicy {
 public:
  explicit SelfTeacher(const nn::ActorCritic& policy) : policy_(policy) {}
  teacher::ActionDistribution query(const grid::FullView& view) override {
    grid::Observation obs{grid::student_view(view), view.mission.text, view};
    const auto features = grid::encode_student(obs);
    const auto out = evaluate_policy(policy_, features, 1);
    return {nn::softmax_row(out.logits)};
  }
  std::string describe() const override { return "self"; }

 private:
  const nn::ActorCritic& policy_;
};

TrainConfig small_ppo() {
  auto c = TrainConfig::defaults(Algorithm::PPO);
  c.horizon = 16;
  c.num_envs = 4;
  c.minibatch = 16;
  c.epochs = 2;
  return c;
}

}  // namespace

TEST(Rollout, SizeContract) {
  auto policy = make_policy(Task::LavaGap);
  EnvPool envs(Task::LavaGap, 5, 2, 3);
  Rng rng(1);
  const auto b = collect_rollout(policy, envs, 8, rng);
  EXPECT_EQ(b.size(), 16u);
  EXPECT_EQ(b.full_views.size(), 16u);
  EXPECT_EQ(b.rewards.size(), 16u);
  EXPECT_EQ(b.dones.size(), 16u);
  EXPECT_EQ(b.log_probs.size(), 16u);
  EXPECT_EQ(b.values.size(), 16u);
  EXPECT_EQ(b.features.size(), 16u * grid::encoded_size());
  EXPECT_EQ(b.bootstrap_values.size(), 2u);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_LE(b.log_probs[i], 0.0);
    EXPECT_GE(b.actions[i], 0);
    EXPECT_LT(b.actions[i], 3);
  }
}

TEST(Rollout, SameSeedSameBuffer) {
  auto run = [](bool deterministic) {
    auto policy = make_policy(Task::DynamicObstacles, 4);
    if (deterministic) fix_action_logits(policy, {0.0, 0.0, 60.0});
    EnvPool envs(Task::DynamicObstacles, 6, 3, 11);
    Rng rng(5);
    return collect_rollout(policy, envs, 20, rng);
  };
  for (bool deterministic : {true, false}) {
    const auto a = run(deterministic), b = run(deterministic);
    EXPECT_EQ(a.actions, b.actions);
    EXPECT_EQ(a.rewards, b.rewards);
    EXPECT_EQ(a.dones, b.dones);
    EXPECT_EQ(a.log_probs, b.log_probs);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.full_views, b.full_views);
  }
}

TEST(Rollout, EpisodeEndResetsTheEnvironment) {
  // A policy that only walks forward: on LavaGap-5 it either steps into lava at once or,
  // when the gap is on its row, walks through it and stalls at the far wall.
  auto policy = make_policy(Task::LavaGap);
  fix_action_logits(policy, {-60.0, -60.0, 60.0});
  const int E = 4, T = 30;
  EnvPool envs(Task::LavaGap, 5, E, 21);
  std::vector<grid::EnvState> replay;
  for (int e = 0; e < E; ++e) replay.push_back(envs.state(e));
  Rng rng(2);
  const auto b = collect_rollout(policy, envs, T, rng);
  int episodes = 0;
  for (int e = 0; e < E; ++e) {
    for (int t = 0; t < T; ++t) {
      const auto i = static_cast<std::size_t>(t * E + e);
      auto& s = replay[static_cast<std::size_t>(e)];
      EXPECT_EQ(grid::full_view(s), b.full_views[i]) << "env " << e << " step " << t;
      const auto r = grid::step_index(s, b.actions[i]);
      EXPECT_EQ(r.reward, b.rewards[i]);
      EXPECT_EQ(r.terminated || r.truncated, b.dones[i] != 0);
      if (b.dones[i]) {
        ++episodes;
        if (t + 1 < T) {
          // The next record is the first step of a new episode.
          const auto& fresh = b.full_views[i + static_cast<std::size_t>(E)];
          s = grid::EnvState{};
          s.task = fresh.task;
          s.grid = fresh.grid;
          s.agent = fresh.agent;
          s.mission = fresh.mission;
          s.carried = fresh.carried;
          s.max_steps = grid::max_steps_for(fresh.task, fresh.grid.width());
          EXPECT_EQ(fresh.grid.count(grid::Kind::Goal), 1u);
        }
      }
    }
  }
  EXPECT_GT(episodes, 0);
  EXPECT_EQ(envs.take_finished().size(), static_cast<std::size_t>(episodes));
}

TEST(Rollout, RejectsMismatchedPolicies) {
  EnvPool envs(Task::Fetch, 8, 2, 1);
  Rng rng(1);
  auto three = make_policy(Task::LavaGap);
  EXPECT_THROW(collect_rollout(three, envs, 4, rng), std::invalid_argument);
  nn::ActorCritic narrow({10, 4, {8}, nn::Activation::Tanh}, 1);
  EXPECT_THROW(collect_rollout(narrow, envs, 4, rng), std::invalid_argument);
}

TEST(Gae, MatchesDoubleSumOnRandomFixtures) {
  Rng rng(31);
  for (int fixture = 0; fixture < 50; ++fixture) {
    const int T = 10, E = 1 + uniform_int(rng, 0, 3);
    std::vector<double> r(static_cast<std::size_t>(T * E)), v(r.size()), boot(static_cast<std::size_t>(E));
    std::vector<char> d(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] = uniform01(rng) < 0.3 ? uniform01(rng) : 0.0;
      v[i] = standard_normal(rng);
      d[i] = uniform01(rng) < 0.2;
    }
    for (double& x : boot) x = standard_normal(rng);
    const double gamma = 0.9 + 0.099 * uniform01(rng), lambda = uniform01(rng);
    const auto got = compute_gae(r, d, v, boot, E, gamma, lambda);
    const auto want = oracles::reference_gae(r, d, v, boot, E, gamma, lambda);
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_NEAR(got.advantages[i], want.advantages[i], 1e-10);
      EXPECT_NEAR(got.returns[i], want.returns[i], 1e-10);
    }
  }
}

TEST(Gae, Examples) {
  // gamma = 0: advantage is the one-step reward minus the value.
  const std::vector<double> r{0.0, 1.0, 0.5}, v{0.2, 0.4, -0.1}, boot{3.0};
  const std::vector<char> d{0, 1, 0};
  const auto g0 = compute_gae(r, d, v, boot, 1, 0.0, 0.7);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(g0.advantages[i], r[i] - v[i], 1e-15);

  // Three-step episode ending in success.
  const std::vector<double> r3{0.0, 0.0, 1.0}, v3{0.5, 0.4, 0.2}, b3{0.0};
  const std::vector<char> d3{0, 0, 1};
  const auto g3 = compute_gae(r3, d3, v3, b3, 1, 0.99, 0.95);
  const double d0 = 0.99 * 0.4 - 0.5, d1 = 0.99 * 0.2 - 0.4, d2 = 1.0 - 0.2;
  const double gl = 0.99 * 0.95;
  EXPECT_NEAR(g3.advantages[2], d2, 1e-12);
  EXPECT_NEAR(g3.advantages[1], d1 + gl * d2, 1e-12);
  EXPECT_NEAR(g3.advantages[0], d0 + gl * d1 + gl * gl * d2, 1e-12);
}

TEST(Gae, LambdaOneIsMonteCarloWithBootstrap) {
  Rng rng(8);
  for (int fixture = 0; fixture < 20; ++fixture) {
    const int T = 12;
    std::vector<double> r(T), v(T);
    for (int t = 0; t < T; ++t) {
      r[static_cast<std::size_t>(t)] = uniform01(rng);
      v[static_cast<std::size_t>(t)] = standard_normal(rng);
    }
    const std::vector<double> boot{standard_normal(rng)};
    const std::vector<char> d(T, 0);
    const double gamma = 0.97;
    const auto g = compute_gae(r, d, v, boot, 1, gamma, 1.0);
    for (int t = 0; t < T; ++t) {
      double mc = 0.0;
      for (int k = t; k < T; ++k) mc += std::pow(gamma, k - t) * r[static_cast<std::size_t>(k)];
      mc += std::pow(gamma, T - t) * boot[0];
      EXPECT_NEAR(g.advantages[static_cast<std::size_t>(t)], mc - v[static_cast<std::size_t>(t)], 1e-10);
    }
  }
}

TEST(Gae, RejectsMissingBootstrapValues) {
  const std::vector<double> r(6), v(6), boot(1);
  const std::vector<char> d(6);
  EXPECT_THROW(compute_gae(r, d, v, boot, 2, 0.99, 0.95), std::invalid_argument);
  EXPECT_THROW(compute_gae(r, d, std::vector<double>(5), std::vector<double>(2), 2, 0.99, 0.95),
               std::invalid_argument);
}

TEST(Gae, NormalizationGivesZeroMeanUnitStd) {
  Rng rng(9);
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<double> a(static_cast<std::size_t>(uniform_int(rng, 2, 300)));
    const double shift = 10.0 * standard_normal(rng), spread = 0.01 + 5.0 * uniform01(rng);
    for (double& x : a) x = shift + spread * standard_normal(rng);
    normalize_advantages(a);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    var /= static_cast<double>(a.size());
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_NEAR(std::sqrt(var), 1.0, 1e-6);
  }
  std::vector<double> constant(7, 2.5);
  normalize_advantages(constant);
  for (double x : constant) EXPECT_EQ(x, 0.0);
}

TEST(Ppo, FirstRatiosAreOne) {
  auto policy = make_policy(Task::LavaGap);
  EnvPool envs(Task::LavaGap, 5, 4, 1);
  Rng rng(1);
  auto buffer = collect_rollout(policy, envs, 16, rng);
  compute_gae(buffer, 0.99, 0.95, true);
  auto opt = nn::make_adam_state(policy.parameters(), {});
  const auto m = ppo_update(policy, opt, buffer, small_ppo(), {0.0, distill::LabelMode::Soft}, nullptr, rng);
  ASSERT_EQ(m.first_ratios.size(), 16u);
  for (double r : m.first_ratios) EXPECT_NEAR(r, 1.0, 1e-12);
  EXPECT_EQ(m.per_epoch.size(), 2u);
  EXPECT_EQ(m.teacher_queries, 0u);
}

TEST(Ppo, LambdaZeroIsBitIdenticalToVanilla) {
  teacher::OracleTeacher oracle;
  Trainer vanilla(Task::LavaGap, 5, small_ppo(), {0.0, distill::LabelMode::Soft}, nullptr);
  Trainer zero(Task::LavaGap, 5, small_ppo(), {0.0, distill::LabelMode::Soft}, &oracle);
  for (int i = 0; i < 3; ++i) {
    const auto a = vanilla.iterate(), b = zero.iterate();
    EXPECT_EQ(a.update.mean.policy, b.update.mean.policy);
    EXPECT_EQ(a.update.mean.value, b.update.mean.value);
    EXPECT_EQ(a.update.mean.entropy, b.update.mean.entropy);
  }
  EXPECT_EQ(flat_parameters(vanilla.policy()), flat_parameters(zero.policy()));
  EXPECT_EQ(zero.teacher_queries(), 0u);
  EXPECT_THROW(Trainer(Task::LavaGap, 5, small_ppo(), {0.01, distill::LabelMode::Soft}, nullptr),
               std::invalid_argument);
}

TEST(Ppo, SelfTeacherAddsNoGradient) {
  auto config = small_ppo();
  config.epochs = 1;
  config.minibatch = 64;  // the whole buffer in one step, so the teacher is the pre-step policy
  auto run = [&](double lambda, UpdateMetrics* metrics) {
    auto policy = make_policy(Task::LavaGap, 7);
    EnvPool envs(Task::LavaGap, 5, 4, 3);
    Rng rng(4);
    auto buffer = collect_rollout(policy, envs, 16, rng);
    compute_gae(buffer, 0.99, 0.95, true);
    auto opt = nn::make_adam_state(policy.parameters(), {});
    SelfTeacher self(policy);
    TeacherLabeler labeler(self);
    *metrics = ppo_update(policy, opt, buffer, config, {lambda, distill::LabelMode::Soft}, &labeler, rng);
    return flat_parameters(policy);
  };
  UpdateMetrics vanilla_metrics, self_metrics;
  const auto vanilla = run(0.0, &vanilla_metrics);
  const auto with_self = run(1.0, &self_metrics);
  EXPECT_NEAR(self_metrics.mean.kl, 0.0, 1e-12);
  EXPECT_EQ(self_metrics.teacher_queries, 64u);
  ASSERT_EQ(vanilla.size(), with_self.size());
  for (std::size_t i = 0; i < vanilla.size(); ++i) EXPECT_NEAR(vanilla[i], with_self[i], 1e-6);
}

TEST(Ppo, ZeroAdvantageLeavesPolicyGradientEmpty) {
  auto config = small_ppo();
  config.value_coef = 0.0;
  config.entropy_coef = 0.0;
  auto policy = make_policy(Task::LavaGap, 2);
  EnvPool envs(Task::LavaGap, 5, 4, 5);
  Rng rng(3);
  auto buffer = collect_rollout(policy, envs, 16, rng);
  compute_gae(buffer, 0.99, 0.95, false);
  std::fill(buffer.advantages.begin(), buffer.advantages.end(), 0.0);
  const auto before = flat_parameters(policy);
  auto opt = nn::make_adam_state(policy.parameters(), {});
  const auto m = ppo_update(policy, opt, buffer, config, {0.0, distill::LabelMode::Soft}, nullptr, rng);
  EXPECT_EQ(m.mean.policy, 0.0);
  EXPECT_EQ(flat_parameters(policy), before);
}

TEST(Ppo, DistillationQueriesEachRecordOnce) {
  auto config = small_ppo();
  config.epochs = 4;
  config.minibatch = 8;
  auto policy = make_policy(Task::LavaGap, 2);
  EnvPool envs(Task::LavaGap, 5, 4, 5);
  Rng rng(3);
  auto buffer = collect_rollout(policy, envs, 16, rng);
  compute_gae(buffer, 0.99, 0.95, true);
  auto opt = nn::make_adam_state(policy.parameters(), {});
  teacher::OracleTeacher oracle;
  TeacherLabeler labeler(oracle);
  const auto m = ppo_update(policy, opt, buffer, config, {0.01, distill::LabelMode::Soft}, &labeler, rng);
  EXPECT_EQ(m.teacher_queries, 64u);
  EXPECT_GT(m.mean.kl, 0.0);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    EXPECT_TRUE(buffer.teacher_ready[i]);
    const auto row = buffer.teacher_row(i);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(Ppo, NonFiniteLossNamesTheComponent) {
  auto policy = make_policy(Task::LavaGap, 2);
  EnvPool envs(Task::LavaGap, 5, 4, 5);
  Rng rng(3);
  auto buffer = collect_rollout(policy, envs, 16, rng);
  compute_gae(buffer, 0.99, 0.95, false);
  buffer.returns[3] = std::nan("");
  auto opt = nn::make_adam_state(policy.parameters(), {});
  try {
    ppo_update(policy, opt, buffer, small_ppo(), {0.0, distill::LabelMode::Soft}, nullptr, rng);
    FAIL() << "expected UpdateError";
  } catch (const UpdateError& e) {
    EXPECT_NE(std::string(e.what()).find("value"), std::string::npos) << e.what();
  }
}

TEST(A2c, PolicyTermOfASingleRecord) {
  auto policy = make_policy(Task::LavaGap);
  fix_action_logits(policy, {std::log(2.0), 0.0, 0.0});  // pi(action 0) = 0.5
  EnvPool envs(Task::LavaGap, 5, 1, 1);
  Rng rng(1);
  auto buffer = collect_rollout(policy, envs, 1, rng);
  buffer.actions[0] = 0;
  buffer.log_probs[0] = std::log(0.5);
  buffer.advantages = {1.0};
  buffer.returns = {buffer.values[0]};
  auto config = TrainConfig::defaults(Algorithm::A2C);
  auto opt = nn::make_adam_state(policy.parameters(), {});
  const auto m = a2c_update(policy, opt, buffer, config, {0.0, distill::LabelMode::Soft}, nullptr);
  EXPECT_NEAR(m.mean.policy, -std::log(0.5), 1e-12);
  EXPECT_NEAR(m.mean.value, 0.0, 1e-12);
}

TEST(A2c, OnlyTheValueSideMovesWithoutAdvantageOrEntropy) {
  auto config = TrainConfig::defaults(Algorithm::A2C);
  config.entropy_coef = 0.0;
  auto policy = make_policy(Task::LavaGap, 6);
  EnvPool envs(Task::LavaGap, 5, 16, 2);
  Rng rng(7);
  auto buffer = collect_rollout(policy, envs, 5, rng);
  compute_gae(buffer, config.gamma, config.gae_lambda, false);
  std::fill(buffer.advantages.begin(), buffer.advantages.end(), 0.0);
  const auto actor_w = values_of(param(policy, "actor.weight"));
  const auto actor_b = values_of(param(policy, "actor.bias"));
  const auto critic_w = values_of(param(policy, "critic.weight"));
  auto opt = nn::make_adam_state(policy.parameters(), {});
  a2c_update(policy, opt, buffer, config, {0.0, distill::LabelMode::Soft}, nullptr);
  EXPECT_EQ(values_of(param(policy, "actor.weight")), actor_w);
  EXPECT_EQ(values_of(param(policy, "actor.bias")), actor_b);
  EXPECT_NE(values_of(param(policy, "critic.weight")), critic_w);
}

TEST(A2c, LambdaZeroIsBitIdenticalToVanilla) {
  teacher::OracleTeacher oracle;
  const auto config = TrainConfig::defaults(Algorithm::A2C);
  Trainer vanilla(Task::LavaGap, 5, config, {0.0, distill::LabelMode::Soft}, nullptr);
  Trainer zero(Task::LavaGap, 5, config, {0.0, distill::LabelMode::Hard}, &oracle);
  for (int i = 0; i < 5; ++i) {
    vanilla.iterate();
    zero.iterate();
  }
  EXPECT_EQ(flat_parameters(vanilla.policy()), flat_parameters(zero.policy()));
  EXPECT_EQ(zero.teacher_queries(), 0u);
}

TEST(TrainConfig, DefaultsAndValidation) {
  const auto ppo = TrainConfig::defaults(Algorithm::PPO);
  EXPECT_EQ(ppo.gamma, 0.99);
  EXPECT_EQ(ppo.gae_lambda, 0.95);
  EXPECT_EQ(ppo.clip_epsilon, 0.2);
  EXPECT_EQ(ppo.epochs, 4);
  EXPECT_EQ(ppo.minibatch, 256);
  EXPECT_EQ(ppo.horizon, 128);
  EXPECT_EQ(ppo.num_envs, 8);
  EXPECT_TRUE(ppo.normalize_advantages);
  const auto a2c = TrainConfig::defaults(Algorithm::A2C);
  EXPECT_EQ(a2c.horizon, 5);
  EXPECT_EQ(a2c.num_envs, 16);
  EXPECT_EQ(a2c.epochs, 1);
  EXPECT_FALSE(a2c.normalize_advantages);
  EXPECT_NO_THROW(validate(ppo));
  EXPECT_NO_THROW(validate(a2c));

  auto bad = ppo;
  bad.gamma = 1.0;
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = ppo;
  bad.gae_lambda = 1.5;
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = ppo;
  bad.clip_epsilon = 0.0;
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = ppo;
  bad.num_envs = 0;
  EXPECT_THROW(validate(bad), std::invalid_argument);
  EXPECT_THROW(parse_algorithm("dqn"), std::invalid_argument);
}

TEST(Training, EmptyRoomIsSolvedQuickly) {
  auto config = TrainConfig::defaults(Algorithm::PPO);
  config.seed = 3;
  Trainer trainer(Task::EmptyRoom, 5, config, {0.0, distill::LabelMode::Soft}, nullptr);
  std::vector<std::uint64_t> seeds(50);
  std::iota(seeds.begin(), seeds.end(), std::uint64_t{1'000'000'000});
  EvalResult r;
  while (trainer.frames() < 60'000) {
    trainer.iterate();
    r = evaluate_greedy(trainer.policy(), Task::EmptyRoom, 5, seeds);
    if (r.success_rate >= 0.95) break;
  }
  EXPECT_GE(r.success_rate, 0.95);
  EXPECT_GT(r.mean_return, 0.5);
}
