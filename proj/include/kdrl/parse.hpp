// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <span>
#include <string>
#include <string_view>

#include "kdrl/teacher.hpp"

namespace kdrl::teacher {

struct ParseResult {
  ActionDistribution distribution;
  bool failed = false;
  // Action names for which a number was found.
  std::size_t matched = 0;
};

// Reads "<name>: <number>" style answers out of free-form model text. Case-insensitive,
// tolerant of prose, markdown and percent signs. Missing actions get 0, negatives are
// clamped to 0 and the result is renormalized. When nothing usable is found the result
// is uniform, `failed` is set and `failure_counter` (if given) is incremented.
// Never throws.
ParseResult parse_probabilities(std::string_view response, std::span<const std::string> action_names,
                                std::atomic<std::size_t>* failure_counter = nullptr) noexcept;

}  // namespace kdrl::teacher
