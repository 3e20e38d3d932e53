// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "kdrl/tensor.hpp"

// Teacher-to-student distillation objective: the RL loss plus a lambda-weighted forward
// KL divergence KL(teacher || student).
namespace kdrl::distill {

enum class LabelMode { Soft, Hard };

std::string_view label_mode_name(LabelMode mode);
LabelMode parse_label_mode(std::string_view name);

struct DistillConfig {
  double lambda = 0.01;
  LabelMode label_mode = LabelMode::Soft;
};

// One-hot rows at each row's argmax, lowest index winning ties.
std::vector<double> collapse_to_argmax(std::span<const double> rows, std::size_t num_actions);

// Batch mean of KL(teacher_i || softmax(student_logits_i)). `teacher` is row-major
// [B, num_actions]. Hard mode collapses the teacher rows first.
nn::Tensor distill_loss(nn::Tape& tape, std::span<const double> teacher, const nn::Tensor& student_logits,
                        LabelMode mode);

// rl + lambda * distill on plain numbers; rejects non-finite inputs.
double combined_loss(double rl_loss, double distill_loss, double lambda);

// Taped form. The distillation term is produced lazily and never evaluated when
// lambda == 0, in which case `rl_loss` is returned unchanged.
nn::Tensor combined_loss(nn::Tape& tape, const nn::Tensor& rl_loss, double lambda,
                         const std::function<nn::Tensor()>& distill_term);

}  // namespace kdrl::distill
