// SPDX-License-Identifier: Apache-2.0
#include "kdrl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace kdrl::rl {

namespace {

enum Stream : std::uint64_t { kPolicyInit, kEnvSeeds, kRollout, kUpdate };

nn::Tensor gather_rows(std::span<const double> source, std::size_t row_size, std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size() * row_size);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(source.begin() + static_cast<std::ptrdiff_t>(rows[i] * row_size), row_size,
                out.begin() + static_cast<std::ptrdiff_t>(i * row_size));
  }
  return nn::Tensor::from({rows.size(), row_size}, std::move(out));
}

nn::Tensor column_of(std::span<const double> source, std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = source[rows[i]];
  return nn::Tensor::from({rows.size(), 1}, std::move(out));
}

void require_finite(double value, const char* component) {
  if (!std::isfinite(value)) throw UpdateError(std::string("non-finite ") + component + " loss");
}

struct LossParts {
  nn::Tensor total;
  LossComponents values;
};

// Shared tail of both updates: value, entropy and distillation terms around a policy term.
LossParts assemble_loss(nn::Tape& tape, const nn::ActorCritic::Output& out, nn::Tensor policy_loss,
                        RolloutBuffer& buffer, std::span<const std::size_t> rows, const TrainConfig& config,
                        const distill::DistillConfig& distill, TeacherLabeler* labeler) {
  const nn::Tensor returns = column_of(buffer.returns, rows);
  const nn::Tensor value_loss = nn::mean(tape, nn::square(tape, nn::sub(tape, out.value, returns)));
  const nn::Tensor entropy = nn::mean(tape, nn::entropy(tape, out.logits));

  LossParts parts;
  parts.values.policy = policy_loss.item();
  parts.values.value = value_loss.item();
  parts.values.entropy = entropy.item();
  require_finite(parts.values.policy, "policy");
  require_finite(parts.values.value, "value");
  require_finite(parts.values.entropy, "entropy");

  nn::Tensor rl = nn::add(tape, policy_loss, nn::scale(tape, value_loss, config.value_coef));
  rl = nn::sub(tape, rl, nn::scale(tape, entropy, config.entropy_coef));

  double kl_value = 0.0;
  parts.total = distill::combined_loss(tape, rl, distill.lambda, [&] {
    if (labeler == nullptr) throw std::invalid_argument("distillation weight > 0 but no teacher configured");
    labeler->label(buffer, rows);
    const nn::Tensor teacher = gather_rows(buffer.teacher, buffer.num_actions, rows);
    nn::Tensor kl = distill::distill_loss(tape, teacher.values(), out.logits, distill.label_mode);
    kl_value = kl.item();
    require_finite(kl_value, "distillation");
    return kl;
  });
  parts.values.kl = kl_value;
  return parts;
}

void apply_step(nn::ActorCritic& policy, nn::AdamState& optimizer, nn::Tape& tape, const nn::Tensor& loss,
                double max_grad_norm) {
  policy.zero_grad();
  tape.backward(loss);
  if (max_grad_norm > 0.0) clip_grad_norm(policy.parameters(), max_grad_norm);
  nn::adam_apply(policy.parameters(), optimizer);
}

void accumulate(LossComponents& into, const LossComponents& x, double weight) {
  into.policy += weight * x.policy;
  into.value += weight * x.value;
  into.entropy += weight * x.entropy;
  into.kl += weight * x.kl;
}

}  // namespace

std::string_view algorithm_name(Algorithm algo) { return algo == Algorithm::PPO ? "ppo" : "a2c"; }

Algorithm parse_algorithm(std::string_view name) {
  if (name == "ppo") return Algorithm::PPO;
  if (name == "a2c") return Algorithm::A2C;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) + "' (expected ppo or a2c)");
}

TrainConfig TrainConfig::defaults(Algorithm algo) {
  TrainConfig c;
  c.algorithm = algo;
  if (algo == Algorithm::A2C) {
    c.learning_rate = 7e-4;
    c.normalize_advantages = false;
    c.epochs = 1;
    c.horizon = 5;
    c.num_envs = 16;
    c.minibatch = c.horizon * c.num_envs;
  }
  return c;
}

void validate(const TrainConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + what);
  };
  require(c.gamma >= 0.0 && c.gamma < 1.0, "gamma must be in [0, 1)");
  require(c.gae_lambda >= 0.0 && c.gae_lambda <= 1.0, "gae_lambda must be in [0, 1]");
  require(c.clip_epsilon > 0.0, "clip_epsilon must be > 0");
  require(c.value_coef >= 0.0 && c.entropy_coef >= 0.0, "loss coefficients must be >= 0");
  require(c.learning_rate > 0.0, "learning_rate must be > 0");
  require(c.max_grad_norm >= 0.0, "max_grad_norm must be >= 0 (0 disables clipping)");
  require(c.iterations >= 1, "iterations must be >= 1");
  require(c.epochs >= 1, "epochs must be >= 1");
  require(c.minibatch >= 1, "minibatch must be >= 1");
  require(c.horizon >= 1, "horizon must be >= 1");
  require(c.num_envs >= 1, "num_envs must be >= 1");
}

EnvPool::EnvPool(grid::Task task, int size, int count, std::uint64_t seed)
    : task_(task), size_(size), seed_rng_(seed) {
  if (count < 1) throw std::invalid_argument("EnvPool needs at least one environment");
  envs_.resize(static_cast<std::size_t>(count));
  obs_.resize(envs_.size());
  running_.resize(envs_.size());
  for (int e = 0; e < count; ++e) reset(e);
}

void EnvPool::reset(int e) {
  const auto i = static_cast<std::size_t>(e);
  envs_[i] = grid::make_task(task_, size_, seed_rng_());
  obs_[i] = grid::observe(envs_[i]);
  running_[i] = {};
}

EnvPool::Transition EnvPool::step(int e, int action_index) {
  const auto i = static_cast<std::size_t>(e);
  grid::StepResult r = grid::step_index(envs_[i], action_index);
  running_[i].total_return += r.reward;
  running_[i].length += 1;
  Transition t{r.reward, r.terminated || r.truncated, r.success};
  if (t.done) {
    running_[i].success = r.success;
    finished_.push_back(running_[i]);
    reset(e);
  } else {
    obs_[i] = std::move(r.observation);
  }
  return t;
}

std::vector<EpisodeStats> EnvPool::take_finished() { return std::exchange(finished_, {}); }

PolicyOutput evaluate_policy(const nn::ActorCritic& policy, std::span<const double> features, std::size_t batch) {
  nn::Tape tape;
  const auto out = policy.forward(
      tape, nn::Tensor::from({batch, policy.input_size()}, std::vector<double>(features.begin(), features.end())));
  const auto logits = out.logits.values();
  const auto values = out.value.values();
  return {{logits.begin(), logits.end()}, {values.begin(), values.end()}};
}

RolloutBuffer collect_rollout(const nn::ActorCritic& policy, EnvPool& envs, int horizon, Rng& rng) {
  if (policy.num_actions() != envs.num_actions()) {
    throw std::invalid_argument("policy has " + std::to_string(policy.num_actions()) + " actions but task " +
                                std::string(grid::task_name(envs.task())) + " has " +
                                std::to_string(envs.num_actions()));
  }
  if (policy.input_size() != grid::encoded_size()) {
    throw std::invalid_argument("policy input size does not match the observation encoding");
  }
  const auto E = static_cast<std::size_t>(envs.count());
  const auto F = grid::encoded_size();
  const auto A = policy.num_actions();
  const std::size_t n = static_cast<std::size_t>(horizon) * E;

  RolloutBuffer buf;
  buf.horizon = horizon;
  buf.num_envs = envs.count();
  buf.feature_size = F;
  buf.num_actions = A;
  buf.features.resize(n * F);
  buf.full_views.reserve(n);
  buf.actions.resize(n);
  buf.rewards.resize(n);
  buf.dones.resize(n);
  buf.log_probs.resize(n);
  buf.values.resize(n);
  buf.teacher.assign(n * A, 0.0);
  buf.teacher_ready.assign(n, 0);

  for (int t = 0; t < horizon; ++t) {
    const std::size_t base = static_cast<std::size_t>(t) * E;
    for (std::size_t e = 0; e < E; ++e) {
      const auto& obs = envs.observation(static_cast<int>(e));
      grid::encode_student_into(obs, std::span<double>(buf.features).subspan((base + e) * F, F));
      buf.full_views.push_back(obs.full_view);
    }
    const PolicyOutput out =
        evaluate_policy(policy, std::span<const double>(buf.features).subspan(base * F, E * F), E);
    for (std::size_t e = 0; e < E; ++e) {
      const std::span<const double> logits(out.logits.data() + e * A, A);
      const auto probs = nn::softmax_row(logits);
      const auto log_probs = nn::log_softmax_row(logits);
      const int action = sample_categorical(rng, probs);
      const std::size_t i = base + e;
      buf.actions[i] = action;
      buf.log_probs[i] = log_probs[static_cast<std::size_t>(action)];
      buf.values[i] = out.values[e];
      const auto tr = envs.step(static_cast<int>(e), action);
      buf.rewards[i] = tr.reward;
      buf.dones[i] = tr.done ? 1 : 0;
    }
  }

  std::vector<double> last(E * F);
  for (std::size_t e = 0; e < E; ++e) {
    grid::encode_student_into(envs.observation(static_cast<int>(e)), std::span<double>(last).subspan(e * F, F));
  }
  buf.bootstrap_values = evaluate_policy(policy, last, E).values;
  return buf;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const char> dones, std::span<const double> values,
                      std::span<const double> bootstrap_values, int num_envs, double gamma, double gae_lambda) {
  if (num_envs < 1) throw std::invalid_argument("compute_gae: num_envs must be >= 1");
  const auto E = static_cast<std::size_t>(num_envs);
  const std::size_t n = rewards.size();
  if (dones.size() != n || values.size() != n || n % E != 0) {
    throw std::invalid_argument("compute_gae: rewards, dones and values must all have T * num_envs entries");
  }
  if (bootstrap_values.size() != E) {
    throw std::invalid_argument("compute_gae: missing bootstrap values (need one per environment)");
  }
  const std::size_t T = n / E;
  GaeResult out{std::vector<double>(n), std::vector<double>(n)};
  std::vector<double> next_adv(E, 0.0);
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t e = 0; e < E; ++e) {
      const std::size_t i = t * E + e;
      const double next_value = t + 1 == T ? bootstrap_values[e] : values[i + E];
      const double live = dones[i] ? 0.0 : 1.0;
      const double delta = rewards[i] + gamma * next_value * live - values[i];
      next_adv[e] = delta + gamma * gae_lambda * live * next_adv[e];
      out.advantages[i] = next_adv[e];
      out.returns[i] = next_adv[e] + values[i];
    }
  }
  return out;
}

void compute_gae(RolloutBuffer& buffer, double gamma, double gae_lambda, bool normalize) {
  auto r = compute_gae(buffer.rewards, buffer.dones, buffer.values, buffer.bootstrap_values, buffer.num_envs, gamma,
                       gae_lambda);
  buffer.advantages = std::move(r.advantages);
  buffer.returns = std::move(r.returns);
  if (normalize) normalize_advantages(buffer.advantages);
}

void normalize_advantages(std::span<double> advantages) {
  if (advantages.empty()) return;
  const double n = static_cast<double>(advantages.size());
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : advantages) a = sd > 1e-12 ? (a - mean) / sd : a - mean;
}

void TeacherLabeler::label(RolloutBuffer& buffer, std::span<const std::size_t> indices) {
  std::vector<std::size_t> todo;
  for (std::size_t i : indices) {
    if (!buffer.teacher_ready[i]) todo.push_back(i);
  }
  std::sort(todo.begin(), todo.end());
  todo.erase(std::unique(todo.begin(), todo.end()), todo.end());
  if (todo.empty()) return;
  std::vector<const grid::FullView*> views;
  views.reserve(todo.size());
  for (std::size_t i : todo) views.push_back(&buffer.full_views[i]);
  const auto answers = teacher_.query_batch(views);
  if (answers.size() != todo.size()) throw std::runtime_error("teacher returned the wrong number of answers");
  for (std::size_t k = 0; k < todo.size(); ++k) {
    const auto& d = answers[k];
    if (d.size() != buffer.num_actions || !d.is_valid()) {
      throw std::runtime_error("teacher " + teacher_.describe() + " returned an invalid distribution");
    }
    std::copy(d.probs.begin(), d.probs.end(),
              buffer.teacher.begin() + static_cast<std::ptrdiff_t>(todo[k] * buffer.num_actions));
    buffer.teacher_ready[todo[k]] = 1;
  }
  queries_ += todo.size();
}

UpdateMetrics ppo_update(nn::ActorCritic& policy, nn::AdamState& optimizer, RolloutBuffer& buffer,
                         const TrainConfig& config, const distill::DistillConfig& distill, TeacherLabeler* labeler,
                         Rng& rng) {
  const std::size_t n = buffer.size();
  if (buffer.advantages.size() != n || buffer.returns.size() != n) {
    throw std::logic_error("ppo_update: advantages not computed");
  }
  const std::size_t queries_before = labeler ? labeler->queries() : 0;
  const auto B = static_cast<std::size_t>(config.minibatch);
  std::vector<std::size_t> order(n);
  UpdateMetrics metrics;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(rng, std::span<std::size_t>(order));
    LossComponents epoch_sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += B) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(B, n - start));
      std::vector<int> actions(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) actions[i] = buffer.actions[rows[i]];

      nn::Tape tape;
      const auto out = policy.forward(tape, gather_rows(buffer.features, buffer.feature_size, rows));
      const nn::Tensor log_prob = nn::gather_log_prob(tape, out.logits, actions);
      const nn::Tensor ratio = nn::exp(tape, nn::sub(tape, log_prob, column_of(buffer.log_probs, rows)));
      if (epoch == 0 && start == 0) {
        const auto r = ratio.values();
        metrics.first_ratios.assign(r.begin(), r.end());
      }
      const nn::Tensor adv = column_of(buffer.advantages, rows);
      const nn::Tensor unclipped = nn::mul(tape, ratio, adv);
      const nn::Tensor clipped =
          nn::mul(tape, nn::clamp(tape, ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon), adv);
      const nn::Tensor surrogate = nn::scale(tape, nn::mean(tape, nn::minimum(tape, unclipped, clipped)), -1.0);

      const LossParts parts = assemble_loss(tape, out, surrogate, buffer, rows, config, distill, labeler);
      apply_step(policy, optimizer, tape, parts.total, config.max_grad_norm);
      accumulate(epoch_sum, parts.values, 1.0);
      ++batches;
    }
    LossComponents epoch_mean;
    accumulate(epoch_mean, epoch_sum, 1.0 / static_cast<double>(batches));
    metrics.per_epoch.push_back(epoch_mean);
    accumulate(metrics.mean, epoch_mean, 1.0 / static_cast<double>(config.epochs));
  }
  metrics.teacher_queries = labeler ? labeler->queries() - queries_before : 0;
  return metrics;
}

UpdateMetrics a2c_update(nn::ActorCritic& policy, nn::AdamState& optimizer, RolloutBuffer& buffer,
                         const TrainConfig& config, const distill::DistillConfig& distill, TeacherLabeler* labeler) {
  const std::size_t n = buffer.size();
  if (buffer.advantages.size() != n || buffer.returns.size() != n) {
    throw std::logic_error("a2c_update: advantages not computed");
  }
  const std::size_t queries_before = labeler ? labeler->queries() : 0;
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});

  nn::Tape tape;
  const auto out = policy.forward(tape, gather_rows(buffer.features, buffer.feature_size, rows));
  const nn::Tensor log_prob = nn::gather_log_prob(tape, out.logits, buffer.actions);
  const nn::Tensor pg =
      nn::scale(tape, nn::mean(tape, nn::mul(tape, column_of(buffer.advantages, rows), log_prob)), -1.0);
  const LossParts parts = assemble_loss(tape, out, pg, buffer, rows, config, distill, labeler);
  apply_step(policy, optimizer, tape, parts.total, config.max_grad_norm);

  UpdateMetrics metrics;
  metrics.mean = parts.values;
  metrics.per_epoch.push_back(parts.values);
  metrics.teacher_queries = labeler ? labeler->queries() - queries_before : 0;
  return metrics;
}

Trainer::Trainer(grid::Task task, int size, const TrainConfig& config, const distill::DistillConfig& distill,
                 teacher::TeacherPolicy* teacher)
    : config_(config),
      distill_(distill),
      policy_(nn::ActorCriticConfig{grid::encoded_size(), grid::action_set(task).size()},
              derive_seed(config.seed, kPolicyInit)),
      optimizer_(nn::make_adam_state(policy_.parameters(), nn::AdamConfig{config.learning_rate})),
      envs_(task, size, config.num_envs, derive_seed(config.seed, kEnvSeeds)),
      rollout_rng_(derive_seed(config.seed, kRollout)),
      update_rng_(derive_seed(config.seed, kUpdate)) {
  validate(config_);
  if (!(distill_.lambda >= 0.0) || !std::isfinite(distill_.lambda)) {
    throw std::invalid_argument("distillation weight must be finite and >= 0");
  }
  if (distill_.lambda > 0.0) {
    if (teacher == nullptr) throw std::invalid_argument("distillation weight > 0 needs a teacher");
    labeler_.emplace(*teacher);
  }
}

IterationResult Trainer::iterate() {
  RolloutBuffer buffer = collect_rollout(policy_, envs_, config_.horizon, rollout_rng_);
  frames_ += static_cast<std::int64_t>(buffer.size());
  compute_gae(buffer, config_.gamma, config_.gae_lambda, config_.normalize_advantages);
  TeacherLabeler* labeler = labeler_ ? &*labeler_ : nullptr;
  IterationResult result;
  result.update = config_.algorithm == Algorithm::PPO
                      ? ppo_update(policy_, optimizer_, buffer, config_, distill_, labeler, update_rng_)
                      : a2c_update(policy_, optimizer_, buffer, config_, distill_, labeler);
  result.episodes = envs_.take_finished();
  result.frames = frames_;
  return result;
}

EvalResult evaluate_greedy(const nn::ActorCritic& policy, grid::Task task, int size,
                           std::span<const std::uint64_t> episode_seeds) {
  if (episode_seeds.empty()) return {};
  const std::size_t F = grid::encoded_size();
  const std::size_t A = policy.num_actions();
  std::vector<grid::EnvState> envs;
  std::vector<grid::Observation> obs;
  envs.reserve(episode_seeds.size());
  for (std::uint64_t s : episode_seeds) {
    envs.push_back(grid::make_task(task, size, s));
    obs.push_back(grid::observe(envs.back()));
  }
  std::vector<double> returns(envs.size(), 0.0);
  std::vector<char> success(envs.size(), 0);
  std::vector<std::size_t> live(envs.size());
  std::iota(live.begin(), live.end(), std::size_t{0});
  std::vector<double> features;
  while (!live.empty()) {
    features.assign(live.size() * F, 0.0);
    for (std::size_t k = 0; k < live.size(); ++k) {
      grid::encode_student_into(obs[live[k]], std::span<double>(features).subspan(k * F, F));
    }
    const PolicyOutput out = evaluate_policy(policy, features, live.size());
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < live.size(); ++k) {
      const auto row = out.logits.begin() + static_cast<std::ptrdiff_t>(k * A);
      const int action = static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(A)) - row);
      const std::size_t i = live[k];
      grid::StepResult r = grid::step_index(envs[i], action);
      returns[i] += r.reward;
      if (r.terminated || r.truncated) {
        success[i] = r.success ? 1 : 0;
      } else {
        obs[i] = std::move(r.observation);
        still.push_back(i);
      }
    }
    live = std::move(still);
  }
  const double n = static_cast<double>(envs.size());
  return {std::accumulate(returns.begin(), returns.end(), 0.0) / n,
          static_cast<double>(std::count(success.begin(), success.end(), 1)) / n};
}

}  // namespace kdrl::rl
