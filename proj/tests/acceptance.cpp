// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance run: one [PASS]/[FAIL] line per criterion, non-zero exit on any
// failure. Usage: acceptance [work_dir] [--only 1,3,...]
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>

#include "kdrl/distill.hpp"
#include "kdrl/harness.hpp"
#include "kdrl/nn.hpp"
#include "kdrl/parse.hpp"
#include "kdrl/prompt.hpp"
#include "kdrl/random.hpp"
#include "support/oracles.hpp"

using namespace kdrl;
using harness::ExperimentConfig;
using harness::TeacherKind;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

std::filesystem::path g_work;

// Frame budgets, frozen after bring-up runs on LavaGap-5.
constexpr std::int64_t kPpoEfficiencyFrames = 400'000;
constexpr std::int64_t kA2cEfficiencyFrames = 300'000;
constexpr std::int64_t kEfficiencyCadence = 2048;
constexpr std::int64_t kAblationFrames = 40'960;
constexpr std::int64_t kAblationCadence = 4096;
constexpr std::int64_t kSmokeFrames = 200'000;

ExperimentConfig lavagap(rl::Algorithm algo, std::int64_t frames, std::int64_t cadence,
                         const std::filesystem::path& out) {
  ExperimentConfig c;
  c.task = grid::Task::LavaGap;
  c.grid_size = 5;
  c.train = rl::TrainConfig::defaults(algo);
  c.frames = frames;
  c.eval_cadence = cadence;
  c.eval_episodes = 50;
  c.seeds = {1, 2, 3};
  c.teacher = TeacherKind::Oracle;
  c.soft_epsilon = 0.05;
  c.distill = {0.01, distill::LabelMode::Soft};
  c.wall_clock = false;
  c.out = out;
  return c;
}

Outcome efficiency(rl::Algorithm algo, std::int64_t frames) {
  const std::string name(rl::algorithm_name(algo));
  auto vanilla = lavagap(algo, frames, kEfficiencyCadence, g_work / "efficiency" / (name + "_vanilla"));
  vanilla.teacher = TeacherKind::None;
  const auto distilled = lavagap(algo, frames, kEfficiencyCadence, g_work / "efficiency" / (name + "_distilled"));
  const auto base = harness::run_experiment(vanilla);
  const auto dist = harness::run_experiment(distilled);
  harness::report(g_work / "efficiency", g_work / "efficiency" / "report", {0.85, 0.91});
  const auto r = harness::efficiency_ratio(base, dist, 0.85);
  if (!r.ratio) return {false, name + ": threshold 0.85 not reached (" + r.note + ")"};
  return {*r.ratio >= 1.5, fmt("%s: samples to mean return 0.85, vanilla %.0f vs distilled %.0f, ratio %.2f (need >= 1.5)",
                              name.c_str(), *r.baseline_mean, *r.distilled_mean, *r.ratio)};
}

Outcome criterion_1() {
  const auto ppo = efficiency(rl::Algorithm::PPO, kPpoEfficiencyFrames);
  const auto a2c = efficiency(rl::Algorithm::A2C, kA2cEfficiencyFrames);
  return {ppo.pass && a2c.pass, ppo.detail + "; " + a2c.detail};
}

Outcome criterion_2() {
  teacher::OracleTeacher oracle(teacher::SoftenMode::make_soft(0.05));
  bool pass = true;
  std::string detail;
  for (grid::Task task : {grid::Task::LavaGap, grid::Task::Fetch, grid::Task::GoToDoor, grid::Task::DynamicObstacles}) {
    const auto r = harness::teacher_check(oracle, task, grid::default_size(task), 200, 1'000'000'000);
    const bool ok = task == grid::Task::DynamicObstacles ? r.success_rate >= 0.90 : r.success_rate == 1.0;
    pass = pass && ok;
    detail += fmt("%s-%d %.3f ", std::string(grid::task_name(task)).c_str(), grid::default_size(task), r.success_rate);
  }
  return {pass, detail + "(200 episodes each)"};
}

Outcome criterion_3_and_4(bool want_lambda) {
  // One sweep serves both ablations; it is run once and cached for the second caller.
  static std::vector<harness::SweepCell> cells;
  if (cells.empty()) {
    const auto base = lavagap(rl::Algorithm::PPO, kAblationFrames, kAblationCadence, g_work / "ablation");
    cells = harness::sweep(base, {0.0, 0.01, 10.0}, {distill::LabelMode::Soft});
    auto hard = base;
    hard.out = g_work / "ablation_hard";
    const auto h = harness::sweep(hard, {0.01}, {distill::LabelMode::Hard});
    cells.insert(cells.end(), h.begin(), h.end());
  }
  for (const auto& c : cells) {
    if (!c.final_success) return {false, "sweep cell failed: " + c.error};
  }
  const auto zero = *cells[0].final_success, best = *cells[1].final_success, big = *cells[2].final_success,
             hard = *cells[3].final_success;
  if (want_lambda) {
    return {best.mean > zero.mean && big.mean <= best.mean,
            fmt("final success lambda=0 %.3f+-%.3f, lambda=0.01 %.3f+-%.3f, lambda=10 %.3f+-%.3f", zero.mean, zero.std,
                best.mean, best.std, big.mean, big.std)};
  }
  const double tie = std::max(best.std, hard.std);
  return {best.mean >= hard.mean - tie,
          fmt("final success soft %.3f+-%.3f, hard %.3f+-%.3f", best.mean, best.std, hard.mean, hard.std)};
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_5() {
  bool pass = true;
  std::string detail;
  for (rl::Algorithm algo : {rl::Algorithm::PPO, rl::Algorithm::A2C}) {
    const std::string name(rl::algorithm_name(algo));
    auto zero = lavagap(algo, 20'480, 4096, g_work / "vanilla" / (name + "_lambda0"));
    zero.distill.lambda = 0.0;
    zero.seeds = {1, 2};
    auto none = zero;
    none.distill.lambda = 0.01;
    none.teacher = TeacherKind::None;
    none.out = g_work / "vanilla" / (name + "_none");
    harness::run_experiment(zero);
    harness::run_experiment(none);
    for (std::uint64_t seed : zero.seeds) {
      const auto a = slurp(harness::metrics_path(zero.out, seed));
      const bool same = !a.empty() && a == slurp(harness::metrics_path(none.out, seed));
      pass = pass && same;
      detail += fmt("%s seed %llu %s; ", name.c_str(), static_cast<unsigned long long>(seed),
                    same ? "byte-identical" : "DIFFERENT");
    }
  }
  return {pass, detail};
}

Outcome criterion_6() {
  Rng rng(2024);
  auto tensor = [&](nn::Shape s, double scale = 1.0, bool grad = true) {
    std::vector<double> v(s.size());
    for (double& x : v) x = scale * standard_normal(rng);
    return nn::Tensor::from(s, std::move(v), grad);
  };
  int instances = 0;
  double worst = 0.0;
  // Ops with kinks (relu, clamp, minimum) are covered by the unit suite with inputs kept
  // away from the kink; here every instance is smooth.
  for (int inst = 0; inst < 60; ++inst) {
    const std::size_t batch = 1 + static_cast<std::size_t>(uniform_int(rng, 0, 4));
    const std::size_t in = 1 + static_cast<std::size_t>(uniform_int(rng, 0, 6));
    const std::size_t n = 3 + static_cast<std::size_t>(uniform_int(rng, 0, 2));
    auto x = tensor({batch, in});
    auto w = tensor({in, n});
    auto b = tensor({1, n});
    const auto weights = tensor({batch, n}, 1.0, false);
    std::vector<int> idx(batch);
    for (int& i : idx) i = uniform_int(rng, 0, static_cast<int>(n) - 1);
    std::vector<double> p(batch * n);
    for (std::size_t r = 0; r < batch; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += (p[r * n + j] = uniform01(rng) + 0.01);
      for (std::size_t j = 0; j < n; ++j) p[r * n + j] /= s;
    }
    const std::vector<oracles::Build> builds{
        [&](nn::Tape& t) { return nn::sum(t, nn::mul(t, nn::tanh(t, nn::affine(t, x, w, b)), weights)); },
        [&](nn::Tape& t) { return nn::sum(t, nn::mul(t, nn::log_softmax(t, nn::affine(t, x, w, b)), weights)); },
        [&](nn::Tape& t) { return nn::mean(t, nn::entropy(t, nn::affine(t, x, w, b))); },
        [&](nn::Tape& t) { return nn::mean(t, nn::kl_categorical(t, p, nn::affine(t, x, w, b))); },
        [&](nn::Tape& t) { return nn::mean(t, nn::gather_log_prob(t, nn::affine(t, x, w, b), idx)); },
    };
    for (const auto& build : builds) {
      worst = std::max(worst, oracles::check_gradients({x, w, b}, build).worst);
      ++instances;
    }
  }
  for (int inst = 0; inst < 20; ++inst) {
    nn::ActorCritic net({12, 3, {16, 16}, nn::Activation::Tanh}, static_cast<std::uint64_t>(inst));
    const auto x = tensor({3, 12}, 1.0, false);
    std::vector<nn::Tensor> params;
    for (const auto& p : net.parameters()) params.push_back(p.tensor);
    const std::vector<int> actions{0, 2, 1};
    worst = std::max(worst, oracles::check_gradients(params, [&](nn::Tape& t) {
                              const auto out = net.forward(t, x);
                              return nn::add(t, nn::mean(t, nn::gather_log_prob(t, out.logits, actions)),
                                             nn::mean(t, nn::square(t, out.value)));
                            }).worst);
    ++instances;
  }

  double kl_worst = 0.0;
  for (int inst = 0; inst < 200; ++inst) {
    auto z = tensor({1, 4}, 3.0);
    std::vector<double> p(4);
    double s = 0.0;
    for (double& v : p) s += (v = uniform01(rng) < 0.25 ? 0.0 : uniform01(rng));
    if (s == 0.0) p[0] = s = 1.0;
    for (double& v : p) v /= s;
    nn::Tape tape;
    tape.backward(nn::sum(tape, nn::kl_categorical(tape, p, z)));
    const auto q = nn::softmax_row(z.values());
    for (std::size_t i = 0; i < 4; ++i) kl_worst = std::max(kl_worst, std::abs(z.grad()[i] - (q[i] - p[i])));
  }

  double gae_worst = 0.0;
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
    const auto got = rl::compute_gae(r, d, v, boot, E, gamma, lambda);
    const auto want = oracles::reference_gae(r, d, v, boot, E, gamma, lambda);
    for (std::size_t i = 0; i < r.size(); ++i) gae_worst = std::max(gae_worst, std::abs(got.advantages[i] - want.advantages[i]));
  }
  return {instances >= 100 && worst < 1e-4 && kl_worst < 1e-6 && gae_worst < 1e-10,
          fmt("%d gradient instances, worst rel err %.2e; KL identity max err %.2e; GAE max err %.2e over 50 fixtures",
              instances, worst, kl_worst, gae_worst)};
}

Outcome criterion_7() {
  bool pass = true;
  std::string detail;
  for (grid::Task task : {grid::Task::LavaGap, grid::Task::Fetch, grid::Task::GoToDoor}) {
    const int size = grid::default_size(task);
    int agree = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto start = grid::make_task(task, size, 77'000 + seed);
      const auto truth = oracles::exhaustive_shortest(start);
      agree += truth && teacher::oracle_plan_length(grid::full_view(start)) == truth;
    }
    pass = pass && agree == 100;
    detail += fmt("%s-%d %d/100 ", std::string(grid::task_name(task)).c_str(), size, agree);
  }
  return {pass, detail + "plans match exhaustive search"};
}

Outcome criterion_8() {
  const auto names = teacher::action_names(grid::Task::Fetch);
  const auto corpus = oracles::parser_corpus(names, 40, 2024);
  int valid = 0, recovered = 0, well_formed = 0, exceptions = 0;
  for (const auto& c : corpus) {
    try {
      const auto r = teacher::parse_probabilities(c.text, names);
      valid += r.distribution.is_valid() && r.distribution.size() == names.size();
      if (c.intended) {
        ++well_formed;
        bool ok = !r.failed;
        for (std::size_t i = 0; i < names.size(); ++i) ok = ok && std::abs(r.distribution.probs[i] - (*c.intended)[i]) <= 1e-6;
        recovered += ok;
      }
    } catch (...) {
      ++exceptions;
    }
  }
  const int n = static_cast<int>(corpus.size());
  return {n >= 200 && valid == n && exceptions == 0 && recovered == well_formed,
          fmt("%d cases, %d valid, %d exceptions, %d/%d well-formed recovered to 1e-6", n, valid, exceptions, recovered,
              well_formed)};
}

Outcome criterion_9() {
  ExperimentConfig c;
  c.task = grid::Task::EmptyRoom;
  c.grid_size = 5;
  c.teacher = TeacherKind::None;
  c.frames = kSmokeFrames;
  c.eval_cadence = 4096;
  c.eval_episodes = 50;
  c.seeds = {1, 2, 3};
  c.wall_clock = false;
  c.out = g_work / "smoke";
  const auto runs = harness::run_experiment(c);
  bool pass = true;
  std::string detail;
  for (const auto& [seed, rows] : runs) {
    std::optional<std::int64_t> at;
    for (const auto& r : rows) {
      if (r.success_rate >= 0.95) {
        at = r.frames;
        break;
      }
    }
    pass = pass && at.has_value();
    detail += at ? fmt("seed %llu at %lld frames; ", static_cast<unsigned long long>(seed), static_cast<long long>(*at))
                 : fmt("seed %llu not within budget; ", static_cast<unsigned long long>(seed));
  }
  return {pass, detail + fmt("budget %lld", static_cast<long long>(kSmokeFrames))};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = std::filesystem::current_path() / "acceptance_runs";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream s(argv[++i]);
      std::string item;
      while (std::getline(s, item, ',')) only.insert(std::stoi(item));
    } else {
      g_work = arg;
    }
  }
  spdlog::set_level(spdlog::level::warn);
  std::filesystem::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"sample-efficiency direction (PPO and A2C, LavaGap-5)", criterion_1},
      {"oracle teacher closed-loop success", criterion_2},
      {"lambda ablation direction", [] { return criterion_3_and_4(true); }},
      {"soft vs hard labels", [] { return criterion_3_and_4(false); }},
      {"vanilla equivalence (lambda=0 vs no teacher)", criterion_5},
      {"numerical core", criterion_6},
      {"oracle optimality", criterion_7},
      {"parser robustness", criterion_8},
      {"smoke learning on EmptyRoom-5", criterion_9},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("[%s] criterion %d: %s -- %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d criterion(s) failed\n", failed);
  return failed == 0 ? 0 : 1;
}
