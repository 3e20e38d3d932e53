// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kdrl/random.hpp"
#include "kdrl/tensor.hpp"

namespace kdrl::nn {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]

  // Gaussian init with standard deviation gain / sqrt(in); zero bias.
  static Linear init(std::size_t in, std::size_t out, double gain, Rng& rng);
  Tensor forward(Tape& tape, const Tensor& x) const { return affine(tape, x, weight, bias); }
};

enum class Activation { Tanh, Relu };

struct ActorCriticConfig {
  std::size_t input_size = 0;
  std::size_t num_actions = 0;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::Tanh;
};

// Shared trunk with a policy head (logits) and a value head.
class ActorCritic {
 public:
  struct Output {
    Tensor logits;  // [B, num_actions]
    Tensor value;   // [B, 1]
  };

  ActorCritic(const ActorCriticConfig& config, std::uint64_t seed);
  // Copies would alias parameter storage.
  ActorCritic(const ActorCritic&) = delete;
  ActorCritic& operator=(const ActorCritic&) = delete;
  ActorCritic(ActorCritic&&) = default;
  ActorCritic& operator=(ActorCritic&&) = default;

  Output forward(Tape& tape, const Tensor& features) const;

  std::size_t input_size() const { return config_.input_size; }
  std::size_t num_actions() const { return config_.num_actions; }
  const ActorCriticConfig& config() const { return config_; }

  const std::vector<NamedParam>& parameters() const { return params_; }
  void zero_grad();

 private:
  ActorCriticConfig config_;
  std::vector<Linear> trunk_;
  Linear actor_;
  Linear critic_;
  std::vector<NamedParam> params_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_counter = 0;
};

AdamState make_adam_state(const std::vector<NamedParam>& params, const AdamConfig& config);

// One bias-corrected Adam step from the gradients stored on `params`. Rejects NaN/Inf
// gradients before touching any parameter.
void adam_apply(const std::vector<NamedParam>& params, AdamState& state);

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns the norm
// before clipping.
double clip_grad_norm(const std::vector<NamedParam>& params, double max_norm);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedParam>& params);
// Loads values into `params`; names and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& path, const std::vector<NamedParam>& params);

}  // namespace kdrl::nn
