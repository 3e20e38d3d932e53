// SPDX-License-Identifier: Apache-2.0
#include "kdrl/distill.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kdrl::distill {

std::string_view label_mode_name(LabelMode mode) { return mode == LabelMode::Soft ? "soft" : "hard"; }

LabelMode parse_label_mode(std::string_view name) {
  if (name == "soft") return LabelMode::Soft;
  if (name == "hard") return LabelMode::Hard;
  throw std::invalid_argument("unknown label mode '" + std::string(name) + "' (expected soft or hard)");
}

std::vector<double> collapse_to_argmax(std::span<const double> rows, std::size_t num_actions) {
  if (num_actions == 0 || rows.size() % num_actions != 0) {
    throw nn::ShapeError("collapse_to_argmax: rows do not divide into " + std::to_string(num_actions) + " actions");
  }
  std::vector<double> out(rows.size(), 0.0);
  for (std::size_t i = 0; i < rows.size() / num_actions; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < num_actions; ++j) {
      if (rows[i * num_actions + j] > rows[i * num_actions + best]) best = j;
    }
    out[i * num_actions + best] = 1.0;
  }
  return out;
}

nn::Tensor distill_loss(nn::Tape& tape, std::span<const double> teacher, const nn::Tensor& student_logits,
                        LabelMode mode) {
  const std::size_t n = student_logits.cols();
  if (teacher.size() != student_logits.size()) {
    throw nn::ShapeError("distill_loss: teacher batch has " + std::to_string(teacher.size()) +
                         " entries, student logits " + student_logits.shape().str());
  }
  nn::check_simplex_rows(teacher, n);
  if (mode == LabelMode::Hard) {
    const auto hard = collapse_to_argmax(teacher, n);
    return nn::mean(tape, nn::kl_categorical(tape, hard, student_logits));
  }
  return nn::mean(tape, nn::kl_categorical(tape, teacher, student_logits));
}

double combined_loss(double rl_loss, double distill_loss, double lambda) {
  if (!std::isfinite(rl_loss) || !std::isfinite(distill_loss) || !std::isfinite(lambda)) {
    throw std::invalid_argument("combined_loss: non-finite input");
  }
  if (lambda < 0.0) throw std::invalid_argument("combined_loss: lambda must be non-negative");
  if (lambda == 0.0) return rl_loss;
  return rl_loss + lambda * distill_loss;
}

nn::Tensor combined_loss(nn::Tape& tape, const nn::Tensor& rl_loss, double lambda,
                         const std::function<nn::Tensor()>& distill_term) {
  if (!std::isfinite(rl_loss.item())) throw std::invalid_argument("combined_loss: RL loss is not finite");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("combined_loss: lambda must be finite and non-negative");
  }
  if (lambda == 0.0) return rl_loss;
  const nn::Tensor kl = distill_term();
  if (!std::isfinite(kl.item())) throw std::invalid_argument("combined_loss: distillation loss is not finite");
  return nn::add(tape, rl_loss, nn::scale(tape, kl, lambda));
}

}  // namespace kdrl::distill
