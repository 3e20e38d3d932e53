// SPDX-License-Identifier: Apache-2.0
#include "kdrl/nn.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace kdrl::nn {

namespace {

constexpr const char* kCheckpointHeader = "kdrl-checkpoint v1";

}  // namespace

Linear Linear::init(std::size_t in, std::size_t out, double gain, Rng& rng) {
  std::vector<double> w(in * out);
  const double stddev = gain / std::sqrt(static_cast<double>(in));
  for (double& v : w) v = stddev * standard_normal(rng);
  return {Tensor::from({in, out}, std::move(w), true), Tensor::zeros({1, out}, true)};
}

ActorCritic::ActorCritic(const ActorCriticConfig& config, std::uint64_t seed) : config_(config) {
  if (config.input_size == 0 || config.num_actions == 0) {
    throw std::invalid_argument("ActorCritic: input size and action count must be positive");
  }
  Rng rng(seed);
  std::size_t width = config.input_size;
  for (std::size_t h : config.hidden) {
    trunk_.push_back(Linear::init(width, h, 1.0, rng));
    width = h;
  }
  actor_ = Linear::init(width, config.num_actions, 0.01, rng);
  critic_ = Linear::init(width, 1, 1.0, rng);
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    params_.push_back({"trunk." + std::to_string(i) + ".weight", trunk_[i].weight});
    params_.push_back({"trunk." + std::to_string(i) + ".bias", trunk_[i].bias});
  }
  params_.push_back({"actor.weight", actor_.weight});
  params_.push_back({"actor.bias", actor_.bias});
  params_.push_back({"critic.weight", critic_.weight});
  params_.push_back({"critic.bias", critic_.bias});
}

ActorCritic::Output ActorCritic::forward(Tape& tape, const Tensor& features) const {
  if (features.cols() != config_.input_size) {
    throw ShapeError("ActorCritic: expected " + std::to_string(config_.input_size) + " features, got " +
                     std::to_string(features.cols()));
  }
  Tensor h = features;
  for (const Linear& layer : trunk_) {
    h = layer.forward(tape, h);
    h = config_.activation == Activation::Tanh ? tanh(tape, h) : relu(tape, h);
  }
  return {actor_.forward(tape, h), critic_.forward(tape, h)};
}

void ActorCritic::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

AdamState make_adam_state(const std::vector<NamedParam>& params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.tensor.size(), 0.0);
    state.second_moment.emplace_back(p.tensor.size(), 0.0);
  }
  return state;
}

void adam_apply(const std::vector<NamedParam>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam_apply: optimizer state built for a different parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.size() != state.first_moment[i].size()) {
      throw ShapeError("adam_apply: moment shape mismatch for " + params[i].name);
    }
    for (double g : params[i].tensor.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in parameter " + params[i].name);
    }
  }
  ++state.step_counter;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step_counter);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor tensor = params[i].tensor;
    auto values = tensor.mutable_values();
    auto grad = tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * grad[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / bias1;
      const double v_hat = v[k] / bias2;
      values[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

double clip_grad_norm(const std::vector<NamedParam>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / (norm + 1e-6);
    for (const auto& p : params) {
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedParam>& params) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out << kCheckpointHeader << "\n" << params.size() << "\n";
  out << std::setprecision(17);
  for (const auto& p : params) {
    out << p.name << " " << p.tensor.rows() << " " << p.tensor.cols() << "\n";
    const auto values = p.tensor.values();
    for (std::size_t k = 0; k < values.size(); ++k) out << (k ? " " : "") << values[k];
    out << "\n";
  }
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, const std::vector<NamedParam>& params) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::string header;
  std::getline(in, header);
  if (header != kCheckpointHeader) throw CheckpointError("not a checkpoint file (bad header): " + path.string());
  std::size_t count = 0;
  in >> count;
  if (!in || count != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  std::vector<std::vector<double>> loaded;
  for (const auto& p : params) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    in >> name >> rows >> cols;
    if (!in) throw CheckpointError("truncated checkpoint at tensor " + p.name);
    if (name != p.name) throw CheckpointError("checkpoint tensor '" + name + "' where '" + p.name + "' expected");
    if (rows != p.tensor.rows() || cols != p.tensor.cols()) {
      throw CheckpointError("shape mismatch for " + name + ": checkpoint " + Shape{rows, cols}.str() +
                            ", model " + p.tensor.shape().str());
    }
    std::vector<double> values(rows * cols);
    for (double& v : values) in >> v;
    if (!in) throw CheckpointError("truncated values for " + name);
    loaded.push_back(std::move(values));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(loaded[i].begin(), loaded[i].end(), t.mutable_values().begin());
  }
}

}  // namespace kdrl::nn
