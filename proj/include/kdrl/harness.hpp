// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kdrl/cache.hpp"
#include "kdrl/distill.hpp"
#include "kdrl/gridworld.hpp"
#include "kdrl/lvlm.hpp"
#include "kdrl/rl.hpp"
#include "kdrl/teacher.hpp"

namespace kdrl::harness {

enum class TeacherKind { Oracle, Lvlm, None };

std::string_view teacher_kind_name(TeacherKind kind);
TeacherKind parse_teacher_kind(std::string_view name);

struct ExperimentConfig {
  grid::Task task = grid::Task::LavaGap;
  int grid_size = 0;  // 0 picks the task default
  rl::TrainConfig train = rl::TrainConfig::defaults(rl::Algorithm::PPO);
  std::int64_t frames = 0;  // when > 0, overrides train.iterations
  distill::DistillConfig distill;
  TeacherKind teacher = TeacherKind::Oracle;
  double soft_epsilon = 0.05;
  teacher::LvlmConfig lvlm;
  std::filesystem::path cache_dir;  // teacher cache location; defaults to $LVLM2P_CACHE_DIR
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::int64_t eval_cadence = 10240;
  int eval_episodes = 50;
  std::uint64_t eval_seed_base = 1'000'000'000;
  std::filesystem::path out = "runs/default";
  bool wall_clock = true;

  int size() const { return grid_size > 0 ? grid_size : grid::default_size(task); }
  int iterations() const;
  // Lambda actually applied: zero when there is no teacher.
  double effective_lambda() const { return teacher == TeacherKind::None ? 0.0 : distill.lambda; }
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Flat "key = value" settings; '#' starts a comment. Later entries win.
using Settings = std::vector<std::pair<std::string, std::string>>;

Settings parse_settings(std::string_view text);
Settings read_settings(const std::filesystem::path& path);

// Builds a config from defaults plus `settings`. train.algo is applied first so that its
// per-algorithm defaults sit underneath every other key. Unknown keys are errors.
ExperimentConfig make_config(const Settings& settings);
void validate(const ExperimentConfig& config);

// Every key in a fixed order; make_config(parse_settings(to_text(c))) reproduces c.
std::string to_text(const ExperimentConfig& config);

struct MetricsRow {
  std::uint64_t seed = 0;
  std::int64_t frames = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  double loss_policy = 0.0;
  double loss_value = 0.0;
  double entropy = 0.0;
  double loss_kl = 0.0;
  std::int64_t teacher_queries = 0;
  std::int64_t parse_failures = 0;
  double wall_clock_s = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "seed,frames,mean_return,success_rate,loss_policy,loss_value,entropy,loss_kl,teacher_queries,parse_failures,"
    "wall_clock_s";

std::string format_metrics_row(const MetricsRow& row);
// Reads a metrics file; an unterminated trailing line (torn write) is ignored.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

std::filesystem::path metrics_path(const std::filesystem::path& dir, std::uint64_t seed);
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t seed);
inline constexpr std::string_view kResolvedConfigName = "config.resolved.txt";

// Teacher for a config (nullptr for TeacherKind::None), plus the cache it may use.
struct TeacherHandle {
  std::unique_ptr<teacher::TeacherCache> cache;
  std::unique_ptr<teacher::TeacherPolicy> policy;
  std::size_t parse_failures() const;
};
TeacherHandle make_teacher(const ExperimentConfig& config);

std::vector<std::uint64_t> eval_seeds(const ExperimentConfig& config);

// One seed: trains, evaluating at frame 0, every eval_cadence frames and at the end.
// Rows are appended and flushed as they are produced.
std::vector<MetricsRow> run_training(const ExperimentConfig& config, std::uint64_t seed);

// All seeds; writes the resolved config first.
std::map<std::uint64_t, std::vector<MetricsRow>> run_experiment(const ExperimentConfig& config);

// Greedy evaluation of a saved checkpoint.
rl::EvalResult evaluate_checkpoint(const ExperimentConfig& config, const std::filesystem::path& checkpoint);

// First frame count at which mean_return reaches `threshold`, linearly interpolated
// between the straddling evaluations. nullopt when never reached.
std::optional<double> samples_to_threshold(const std::vector<MetricsRow>& rows, double threshold);

struct EfficiencyResult {
  std::optional<double> ratio;  // empty when some seed never reached the threshold
  std::optional<double> baseline_mean;
  std::optional<double> distilled_mean;
  std::vector<std::uint64_t> seeds;
  std::string note;
};

// Mean baseline samples-to-threshold over mean distilled samples-to-threshold, over the
// seeds present in both runs.
EfficiencyResult efficiency_ratio(const std::map<std::uint64_t, std::vector<MetricsRow>>& baseline,
                                  const std::map<std::uint64_t, std::vector<MetricsRow>>& distilled,
                                  double threshold);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population
};
Summary summarize(const std::vector<double>& xs);

struct SweepCell {
  double lambda = 0.0;
  distill::LabelMode label_mode = distill::LabelMode::Soft;
  std::filesystem::path dir;
  std::optional<Summary> final_success;
  std::optional<Summary> final_return;
  std::string error;
};

// Runs every (lambda, label mode) cell over all seeds under config.out and writes
// summary.csv there. A failing cell is recorded and the rest still run.
std::vector<SweepCell> sweep(const ExperimentConfig& config, const std::vector<double>& lambdas,
                             const std::vector<distill::LabelMode>& modes);

struct ReportOutput {
  std::vector<std::filesystem::path> curve_files;
  std::filesystem::path samples_file;
  std::filesystem::path efficiency_file;  // distilled vs vanilla samples-to-threshold
};

// Scans `runs_dir` for completed runs, aggregates seeds per (task, algorithm, teacher
// mode) and writes curve_*.csv plus samples_to_return.csv into `out_dir`.
ReportOutput report(const std::filesystem::path& runs_dir, const std::filesystem::path& out_dir,
                    const std::vector<double>& thresholds);

// Label of how a run used its teacher: "vanilla" or e.g. "oracle_soft_lambda0.01".
std::string teacher_mode_label(const ExperimentConfig& config);

struct TeacherCheckResult {
  int episodes = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  std::size_t teacher_failures = 0;
};

// Closed-loop rollouts acting on the teacher's argmax action.
TeacherCheckResult teacher_check(teacher::TeacherPolicy& teacher, grid::Task task, int size, int episodes,
                                 std::uint64_t seed_base);

}  // namespace kdrl::harness
