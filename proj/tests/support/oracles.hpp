// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations shared by the unit suites and the acceptance run.
#pragma once

#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kdrl/gridworld.hpp"
#include "kdrl/random.hpp"
#include "kdrl/rl.hpp"
#include "kdrl/tensor.hpp"

namespace kdrl::oracles {

using Build = std::function<nn::Tensor(nn::Tape&)>;

struct GradCheck {
  double worst = 0.0;
  std::size_t entries = 0;
};

// Tape gradients against central differences. Relative error is |a - n| / max(|a|, |n|),
// or the absolute difference when both are below 1e-6.
inline GradCheck check_gradients(const std::vector<nn::Tensor>& params, const Build& build, double h = 1e-4) {
  for (auto p : params) p.zero_grad();
  nn::Tape tape;
  const nn::Tensor loss = build(tape);
  tape.backward(loss);
  GradCheck out;
  for (auto p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values()[i];
      p.mutable_values()[i] = saved + h;
      nn::Tape t1;
      const double up = build(t1).item();
      p.mutable_values()[i] = saved - h;
      nn::Tape t2;
      const double down = build(t2).item();
      p.mutable_values()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max(std::abs(analytic[i]), std::abs(numeric));
      const double err = scale < 1e-6 ? std::abs(analytic[i] - numeric) : std::abs(analytic[i] - numeric) / scale;
      out.worst = std::max(out.worst, err);
      ++out.entries;
    }
  }
  return out;
}

// A_t = sum_k (gamma * lambda)^k delta_{t+k}, cut at the first done; time-major [T, E].
inline rl::GaeResult reference_gae(const std::vector<double>& r, const std::vector<char>& d,
                                   const std::vector<double>& v, const std::vector<double>& boot, int E,
                                   double gamma, double lambda) {
  const int T = static_cast<int>(r.size()) / E;
  rl::GaeResult out{std::vector<double>(r.size()), std::vector<double>(r.size())};
  auto value_after = [&](int t, int e) {
    return t + 1 < T ? v[static_cast<std::size_t>((t + 1) * E + e)] : boot[static_cast<std::size_t>(e)];
  };
  for (int e = 0; e < E; ++e) {
    for (int t = 0; t < T; ++t) {
      double total = 0.0, weight = 1.0;
      for (int k = t; k < T; ++k) {
        const auto i = static_cast<std::size_t>(k * E + e);
        const double nonterminal = d[i] ? 0.0 : 1.0;
        total += weight * (r[i] + gamma * value_after(k, e) * nonterminal - v[i]);
        if (d[i]) break;
        weight *= gamma * lambda;
      }
      const auto i = static_cast<std::size_t>(t * E + e);
      out.advantages[i] = total;
      out.returns[i] = total + v[i];
    }
  }
  return out;
}

// Fewest actions from `start` to a successful termination: breadth-first search over
// copies of the real environment, so it knows nothing about the planner.
inline std::optional<int> exhaustive_shortest(const grid::EnvState& start) {
  std::deque<std::pair<grid::EnvState, int>> frontier{{start, 0}};
  std::set<std::string> seen{grid::canonical_text(grid::full_view(start))};
  while (!frontier.empty()) {
    auto [state, depth] = frontier.front();
    frontier.pop_front();
    for (grid::Action a : grid::action_set(state.task)) {
      auto next = state;
      const auto r = grid::step(next, a);
      if (r.success) return depth + 1;
      if (r.terminated || r.truncated) continue;
      if (seen.insert(grid::canonical_text(grid::full_view(next))).second) frontier.emplace_back(next, depth + 1);
    }
  }
  return std::nullopt;
}

struct FuzzCase {
  std::string category;
  std::string text;
  std::optional<std::vector<double>> intended;  // set for well-formed answers
};

// Deterministic parser corpus: `per_category` cases each of well-formed, percent,
// prose-wrapped, truncated and garbage responses.
inline std::vector<FuzzCase> parser_corpus(const std::vector<std::string>& names, int per_category,
                                           std::uint64_t seed) {
  Rng rng(seed);
  auto distribution = [&] {
    std::vector<double> p(names.size());
    double s = 0.0;
    for (double& x : p) {
      x = uniform01(rng) < 0.2 ? 0.0 : uniform01(rng);
      s += x;
    }
    if (s == 0.0) {
      p[0] = 1.0;
      s = 1.0;
    }
    for (double& x : p) x /= s;
    return p;
  };
  auto number = [](double x, bool percent) {
    char buf[64];
    std::snprintf(buf, sizeof buf, percent ? "%.12g%%" : "%.15g", percent ? 100.0 * x : x);
    return std::string(buf);
  };
  auto cased = [&](const std::string& name) {
    std::string out = name;
    switch (uniform_int(rng, 0, 2)) {
      case 0: break;
      case 1:
        for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        break;
      default: out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    }
    return out;
  };
  auto answer = [&](const std::vector<double>& p, bool percent) {
    static const char* const seps[] = {": ", " = ", ":", " ", " - ", "** ", ": `"};
    static const char* const leads[] = {"", "- ", "* ", "**", "> "};
    std::vector<std::size_t> order(p.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(rng, std::span<std::size_t>(order));
    std::string s;
    for (std::size_t i : order) {
      const std::string lead = leads[uniform_int(rng, 0, 4)];
      const std::string sep = seps[uniform_int(rng, 0, 6)];
      s += lead + cased(names[i]) + (lead == "**" ? "**" : "") + sep + number(p[i], percent);
      s += uniform01(rng) < 0.5 ? "\n" : ", ";
    }
    return s;
  };
  std::vector<FuzzCase> out;
  for (int k = 0; k < per_category; ++k) {
    const auto p = distribution();
    out.push_back({"well-formed", answer(p, false), p});
  }
  for (int k = 0; k < per_category; ++k) {
    const auto p = distribution();
    out.push_back({"percent", answer(p, true), p});
  }
  for (int k = 0; k < per_category; ++k) {
    const auto p = distribution();
    out.push_back({"prose-wrapped",
                   "Looking at the map, the agent faces a wall to its left.\nMy probabilities are:\n" +
                       answer(p, uniform01(rng) < 0.5) + "\nThese should sum to one. Good luck!",
                   p});
  }
  for (int k = 0; k < per_category; ++k) {
    const auto full = answer(distribution(), false);
    out.push_back({"truncated", full.substr(0, static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(full.size())))),
                   std::nullopt});
  }
  static const char* const junk[] = {"I think the agent should go forward.", "", "%%%%", "null", "{\"a\": 1}",
                                     "left right forward", "1e999999", "-.-.-", "NaN: NaN"};
  for (int k = 0; k < per_category; ++k) {
    std::string s = junk[k % 9];
    const int extra = uniform_int(rng, 0, 24);
    for (int i = 0; i < extra; ++i) s += static_cast<char>(uniform_int(rng, 0, 255));
    out.push_back({"garbage", s, std::nullopt});
  }
  return out;
}

}  // namespace kdrl::oracles
