// SPDX-License-Identifier: Apache-2.0
// kdrl command-line entry point: train, eval, sweep, report, teacher-check.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "kdrl/harness.hpp"

namespace {

using namespace kdrl;

// Options shared by the subcommands that build an ExperimentConfig.
struct CommonOptions {
  std::string config_file;
  std::vector<std::string> sets;
  std::string task, algo, teacher, out, lambda, seed, size, frames;

  void add_to(CLI::App& app) {
    app.add_option("--config", config_file, "Config file with flat 'key = value' lines");
    app.add_option("--task", task, "lavagap | dynamicobstacles | fetch | gotodoor | emptyroom");
    app.add_option("--algo", algo, "ppo | a2c");
    app.add_option("--teacher", teacher, "oracle | lvlm | none");
    app.add_option("--lambda", lambda, "Distillation weight");
    app.add_option("--seed", seed, "Seed list, e.g. 1 or 1,2,3");
    app.add_option("--size", size, "Grid size");
    app.add_option("--frames", frames, "Training budget in environment steps");
    app.add_option("--out", out, "Output directory");
    app.add_option("--set", sets, "Extra key=value override (repeatable)");
  }

  harness::ExperimentConfig build() const {
    harness::Settings settings;
    if (!config_file.empty()) settings = harness::read_settings(config_file);
    auto put = [&](const char* key, const std::string& value) {
      if (!value.empty()) settings.emplace_back(key, value);
    };
    put("task", task);
    put("train.algo", algo);
    put("teacher.kind", teacher);
    put("distill.lambda", lambda);
    put("seeds", seed);
    put("grid_size", size);
    put("train.frames", frames);
    put("out", out);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw harness::ConfigError("--set expects key=value, got '" + kv + "'");
      settings.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return harness::make_config(settings);
  }
};

template <typename T, typename F>
std::vector<T> parse_list(const std::string& text, F&& parse) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kdrl: on-policy RL with teacher distillation on gridworld tasks"};
  app.require_subcommand(1);

  CommonOptions train_opts;
  auto* train = app.add_subcommand("train", "Train over every configured seed");
  train_opts.add_to(*train);

  CommonOptions eval_opts;
  std::string checkpoint;
  int eval_episodes = 0;
  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a saved checkpoint");
  eval_opts.add_to(*eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (default: <out>/checkpoint_seed<S>.txt)");
  eval->add_option("--episodes", eval_episodes, "Evaluation episodes (default: eval.episodes)");

  CommonOptions sweep_opts;
  std::string lambdas = "0,0.01,0.1,1,10";
  std::string modes = "soft";
  auto* sweep = app.add_subcommand("sweep", "Lambda x label-mode ablation grid");
  sweep_opts.add_to(*sweep);
  sweep->add_option("--lambdas", lambdas, "Comma-separated lambda values")->capture_default_str();
  sweep->add_option("--modes", modes, "Comma-separated label modes (soft, hard)")->capture_default_str();

  std::string runs_dir, report_out, thresholds = "0.85,0.91";
  auto* report = app.add_subcommand("report", "Aggregate runs into learning-curve and sample-count CSVs");
  report->add_option("--runs", runs_dir, "Directory scanned for runs")->required();
  report->add_option("--out", report_out, "Where the CSV files go (default: --runs)");
  report->add_option("--thresholds", thresholds, "Mean-return thresholds")->capture_default_str();

  CommonOptions check_opts;
  int check_episodes = 200;
  auto* check = app.add_subcommand("teacher-check", "Closed-loop success rate of the teacher acting alone");
  check_opts.add_to(*check);
  check->add_option("--episodes", check_episodes, "Episodes")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const auto config = train_opts.build();
      const auto runs = harness::run_experiment(config);
      for (const auto& [seed, rows] : runs) {
        std::printf("seed %llu: frames=%lld mean_return=%.4f success_rate=%.4f\n",
                    static_cast<unsigned long long>(seed), static_cast<long long>(rows.back().frames),
                    rows.back().mean_return, rows.back().success_rate);
      }
    } else if (eval->parsed()) {
      auto config = eval_opts.build();
      if (eval_episodes > 0) config.eval_episodes = eval_episodes;
      const auto path = checkpoint.empty() ? harness::checkpoint_path(config.out, config.seeds.front())
                                           : std::filesystem::path(checkpoint);
      const auto r = harness::evaluate_checkpoint(config, path);
      std::printf("episodes=%d mean_return=%.4f success_rate=%.4f\n", config.eval_episodes, r.mean_return,
                  r.success_rate);
    } else if (sweep->parsed()) {
      const auto config = sweep_opts.build();
      const auto cells = harness::sweep(config, parse_list<double>(lambdas, [](const std::string& s) {
                                          return std::stod(s);
                                        }),
                                        parse_list<distill::LabelMode>(modes, [](const std::string& s) {
                                          return distill::parse_label_mode(s);
                                        }));
      int failed = 0;
      for (const auto& c : cells) {
        if (c.final_success) {
          std::printf("lambda=%g mode=%s final_success=%.4f +- %.4f\n", c.lambda,
                      std::string(distill::label_mode_name(c.label_mode)).c_str(), c.final_success->mean,
                      c.final_success->std);
        } else {
          std::printf("lambda=%g mode=%s error: %s\n", c.lambda,
                      std::string(distill::label_mode_name(c.label_mode)).c_str(), c.error.c_str());
          ++failed;
        }
      }
      return failed == 0 ? 0 : 1;
    } else if (report->parsed()) {
      const auto out = harness::report(runs_dir, report_out.empty() ? runs_dir : report_out,
                                       parse_list<double>(thresholds, [](const std::string& s) {
                                         return std::stod(s);
                                       }));
      for (const auto& f : out.curve_files) std::printf("%s\n", f.string().c_str());
      std::printf("%s\n%s\n", out.samples_file.string().c_str(), out.efficiency_file.string().c_str());
    } else if (check->parsed()) {
      const auto config = check_opts.build();
      auto teacher = harness::make_teacher(config);
      if (!teacher.policy) throw harness::ConfigError("teacher-check needs --teacher oracle or lvlm");
      const auto r = harness::teacher_check(*teacher.policy, config.task, config.size(), check_episodes,
                                            config.eval_seed_base);
      std::printf("task=%s size=%d teacher=%s episodes=%d success_rate=%.4f mean_return=%.4f failures=%zu\n",
                  std::string(grid::task_name(config.task)).c_str(), config.size(),
                  std::string(harness::teacher_kind_name(config.teacher)).c_str(), r.episodes, r.success_rate,
                  r.mean_return, r.teacher_failures);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
