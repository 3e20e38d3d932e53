// SPDX-License-Identifier: Apache-2.0
#include "kdrl/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <tuple>

namespace kdrl::harness {

namespace {

std::string fmt_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  std::string field;
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_field(const std::string& s, const std::filesystem::path& path) {
  T out{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::runtime_error("malformed metrics value '" + s + "' in " + path.string());
  }
  return out;
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream s;
  s << r.seed << ',' << r.frames << ',' << fmt_double(r.mean_return) << ',' << fmt_double(r.success_rate) << ','
    << fmt_double(r.loss_policy) << ',' << fmt_double(r.loss_value) << ',' << fmt_double(r.entropy) << ','
    << fmt_double(r.loss_kl) << ',' << r.teacher_queries << ',' << r.parse_failures << ','
    << fmt_double(r.wall_clock_s);
  return s.str();
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read metrics file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<MetricsRow> rows;
  std::size_t pos = 0;
  bool header = true;
  while (true) {
    const std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) break;  // unterminated tail: a torn write
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (header) {
      if (line != kMetricsHeader) throw std::runtime_error("unexpected metrics header in " + path.string());
      header = false;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 11) throw std::runtime_error("metrics row with " + std::to_string(f.size()) + " fields");
    MetricsRow r;
    r.seed = parse_field<std::uint64_t>(f[0], path);
    r.frames = parse_field<std::int64_t>(f[1], path);
    r.mean_return = parse_field<double>(f[2], path);
    r.success_rate = parse_field<double>(f[3], path);
    r.loss_policy = parse_field<double>(f[4], path);
    r.loss_value = parse_field<double>(f[5], path);
    r.entropy = parse_field<double>(f[6], path);
    r.loss_kl = parse_field<double>(f[7], path);
    r.teacher_queries = parse_field<std::int64_t>(f[8], path);
    r.parse_failures = parse_field<std::int64_t>(f[9], path);
    r.wall_clock_s = parse_field<double>(f[10], path);
    rows.push_back(r);
  }
  if (header) throw std::runtime_error("metrics file " + path.string() + " has no header");
  return rows;
}

std::filesystem::path metrics_path(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / ("metrics_seed" + std::to_string(seed) + ".csv");
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / ("checkpoint_seed" + std::to_string(seed) + ".txt");
}

std::size_t TeacherHandle::parse_failures() const {
  if (const auto* lvlm = dynamic_cast<const teacher::LvlmTeacher*>(policy.get())) return lvlm->parse_failures();
  return 0;
}

TeacherHandle make_teacher(const ExperimentConfig& config) {
  TeacherHandle h;
  switch (config.teacher) {
    case TeacherKind::None:
      break;
    case TeacherKind::Oracle:
      h.policy = std::make_unique<teacher::OracleTeacher>(config.soft_epsilon > 0.0
                                                              ? teacher::SoftenMode::make_soft(config.soft_epsilon)
                                                              : teacher::SoftenMode::make_hard());
      break;
    case TeacherKind::Lvlm:
      h.cache = config.cache_dir.empty() ? std::make_unique<teacher::TeacherCache>()
                                         : std::make_unique<teacher::TeacherCache>(config.cache_dir /
                                                                                   "teacher-cache.log");
      h.policy = std::make_unique<teacher::LvlmTeacher>(config.lvlm, nullptr, h.cache.get());
      break;
  }
  return h;
}

std::vector<std::uint64_t> eval_seeds(const ExperimentConfig& config) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(config.eval_episodes));
  std::iota(seeds.begin(), seeds.end(), config.eval_seed_base);
  return seeds;
}

std::vector<MetricsRow> run_training(const ExperimentConfig& config, std::uint64_t seed) {
  validate(config);
  std::filesystem::create_directories(config.out);

  distill::DistillConfig distill = config.distill;
  distill.lambda = config.effective_lambda();
  // A run that never distils never builds its teacher, so both vanilla spellings take
  // the same path.
  TeacherHandle teacher = distill.lambda > 0.0 ? make_teacher(config) : TeacherHandle{};

  rl::TrainConfig train = config.train;
  train.seed = seed;
  train.iterations = config.iterations();
  rl::Trainer trainer(config.task, config.size(), train, distill, teacher.policy.get());
  const auto seeds = eval_seeds(config);

  const auto path = metrics_path(config.out, seed);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write metrics file " + path.string());
  out << kMetricsHeader << '\n';
  out.flush();

  const auto start = std::chrono::steady_clock::now();
  std::vector<MetricsRow> rows;
  auto emit = [&](const rl::LossComponents& loss) {
    const rl::EvalResult ev = rl::evaluate_greedy(trainer.policy(), config.task, config.size(), seeds);
    MetricsRow r;
    r.seed = seed;
    r.frames = trainer.frames();
    r.mean_return = ev.mean_return;
    r.success_rate = ev.success_rate;
    r.loss_policy = loss.policy;
    r.loss_value = loss.value;
    r.entropy = loss.entropy;
    r.loss_kl = loss.kl;
    r.teacher_queries = static_cast<std::int64_t>(trainer.teacher_queries());
    r.parse_failures = static_cast<std::int64_t>(teacher.parse_failures());
    r.wall_clock_s =
        config.wall_clock ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() : 0.0;
    out << format_metrics_row(r) << '\n';
    out.flush();
    rows.push_back(r);
  };

  emit({});
  std::int64_t next_eval = config.eval_cadence;
  rl::LossComponents last;
  for (int i = 0; i < train.iterations; ++i) {
    last = trainer.iterate().update.mean;
    if (trainer.frames() >= next_eval) {
      emit(last);
      while (next_eval <= trainer.frames()) next_eval += config.eval_cadence;
    }
  }
  if (rows.back().frames != trainer.frames()) emit(last);
  nn::save_checkpoint(checkpoint_path(config.out, seed), trainer.policy().parameters());
  return rows;
}

std::map<std::uint64_t, std::vector<MetricsRow>> run_experiment(const ExperimentConfig& config) {
  validate(config);
  std::filesystem::create_directories(config.out);
  write_text(config.out / kResolvedConfigName, to_text(config));
  std::map<std::uint64_t, std::vector<MetricsRow>> runs;
  for (std::uint64_t seed : config.seeds) {
    spdlog::info("training {} seed {} -> {}", grid::task_name(config.task), seed, config.out.string());
    runs[seed] = run_training(config, seed);
  }
  return runs;
}

rl::EvalResult evaluate_checkpoint(const ExperimentConfig& config, const std::filesystem::path& checkpoint) {
  nn::ActorCritic policy(nn::ActorCriticConfig{grid::encoded_size(), grid::action_set(config.task).size()}, 0);
  nn::load_checkpoint(checkpoint, policy.parameters());
  return rl::evaluate_greedy(policy, config.task, config.size(), eval_seeds(config));
}

std::optional<double> samples_to_threshold(const std::vector<MetricsRow>& rows, double threshold) {
  if (rows.empty()) throw std::invalid_argument("samples_to_threshold: no metrics rows");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].frames < rows[i - 1].frames) {
      throw std::invalid_argument("samples_to_threshold: rows are not sorted by frames");
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].mean_return < threshold) continue;
    if (i == 0) return static_cast<double>(rows[0].frames);
    const auto& a = rows[i - 1];
    const auto& b = rows[i];
    const double t = (threshold - a.mean_return) / (b.mean_return - a.mean_return);
    return static_cast<double>(a.frames) + t * static_cast<double>(b.frames - a.frames);
  }
  return std::nullopt;
}

Summary summarize(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / n)};
}

EfficiencyResult efficiency_ratio(const std::map<std::uint64_t, std::vector<MetricsRow>>& baseline,
                                  const std::map<std::uint64_t, std::vector<MetricsRow>>& distilled,
                                  double threshold) {
  EfficiencyResult result;
  std::vector<double> base, dist;
  std::vector<std::uint64_t> missing;
  for (const auto& [seed, rows] : baseline) {
    const auto it = distilled.find(seed);
    if (it == distilled.end()) continue;
    result.seeds.push_back(seed);
    const auto b = samples_to_threshold(rows, threshold);
    const auto d = samples_to_threshold(it->second, threshold);
    if (!b || !d) {
      missing.push_back(seed);
      continue;
    }
    base.push_back(*b);
    dist.push_back(*d);
  }
  if (result.seeds.empty()) throw std::invalid_argument("efficiency_ratio: no seeds in common");
  if (!missing.empty()) {
    result.note = "threshold not reached for seed(s)";
    for (auto s : missing) result.note += " " + std::to_string(s);
    return result;
  }
  result.baseline_mean = summarize(base).mean;
  result.distilled_mean = summarize(dist).mean;
  if (*result.distilled_mean <= 0.0) {
    result.note = "distilled run reached the threshold at frame 0";
    return result;
  }
  result.ratio = *result.baseline_mean / *result.distilled_mean;
  return result;
}

std::vector<SweepCell> sweep(const ExperimentConfig& config, const std::vector<double>& lambdas,
                             const std::vector<distill::LabelMode>& modes) {
  if (lambdas.empty() || modes.empty()) throw std::invalid_argument("sweep: empty axis");
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("sweep: lambda values must be finite and >= 0");
  }
  std::filesystem::create_directories(config.out);
  std::vector<SweepCell> cells;
  auto write_summary = [&] {
    std::ostringstream s;
    s << "lambda,label_mode,seeds,final_success_mean,final_success_std,final_return_mean,final_return_std,status\n";
    for (const auto& c : cells) {
      s << fmt_double(c.lambda) << ',' << distill::label_mode_name(c.label_mode) << ',' << config.seeds.size() << ',';
      if (c.final_success) {
        s << fmt_double(c.final_success->mean) << ',' << fmt_double(c.final_success->std) << ','
          << fmt_double(c.final_return->mean) << ',' << fmt_double(c.final_return->std) << ",ok\n";
      } else {
        s << ",,,,error: " << csv_safe(c.error) << '\n';
      }
    }
    write_text(config.out / "summary.csv", s.str());
  };
  for (double lambda : lambdas) {
    for (auto mode : modes) {
      SweepCell cell;
      cell.lambda = lambda;
      cell.label_mode = mode;
      cell.dir = config.out / ("lambda_" + fmt_double(lambda) + "_" + std::string(distill::label_mode_name(mode)));
      ExperimentConfig c = config;
      c.distill.lambda = lambda;
      c.distill.label_mode = mode;
      c.out = cell.dir;
      try {
        const auto runs = run_experiment(c);
        std::vector<double> success, ret;
        for (const auto& [seed, rows] : runs) {
          success.push_back(rows.back().success_rate);
          ret.push_back(rows.back().mean_return);
        }
        cell.final_success = summarize(success);
        cell.final_return = summarize(ret);
      } catch (const std::exception& e) {
        spdlog::error("sweep cell lambda={} mode={} failed: {}", lambda, distill::label_mode_name(mode), e.what());
        cell.error = e.what();
      }
      cells.push_back(cell);
      write_summary();
    }
  }
  return cells;
}

std::string teacher_mode_label(const ExperimentConfig& config) {
  if (config.effective_lambda() == 0.0) return "vanilla";
  return std::string(teacher_kind_name(config.teacher)) + "_" +
         std::string(distill::label_mode_name(config.distill.label_mode)) + "_lambda" +
         fmt_double(config.distill.lambda);
}

ReportOutput report(const std::filesystem::path& runs_dir, const std::filesystem::path& out_dir,
                    const std::vector<double>& thresholds) {
  if (!std::filesystem::is_directory(runs_dir)) throw std::invalid_argument("no such directory: " + runs_dir.string());
  using Key = std::tuple<std::string, int, std::string, std::string>;  // task, size, algorithm, teacher mode
  struct Group {
    std::int64_t cadence = 0;
    std::vector<std::filesystem::path> dirs;
    std::map<std::string, std::vector<MetricsRow>> seeds;  // "<dir>#<seed>" -> rows
  };
  std::map<Key, Group> groups;
  std::vector<std::filesystem::path> configs;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(runs_dir)) {
    if (entry.is_regular_file() && entry.path().filename() == kResolvedConfigName) configs.push_back(entry.path());
  }
  std::sort(configs.begin(), configs.end());
  for (const auto& path : configs) {
    const ExperimentConfig c = make_config(read_settings(path));
    const auto dir = path.parent_path();
    Key key{std::string(grid::task_name(c.task)), c.size(), std::string(rl::algorithm_name(c.train.algorithm)),
            teacher_mode_label(c)};
    Group& g = groups[key];
    if (g.cadence != 0 && g.cadence != c.eval_cadence) {
      throw std::invalid_argument("mismatched evaluation cadences in " + dir.string() + " (" +
                                  std::to_string(c.eval_cadence) + " vs " + std::to_string(g.cadence) + ")");
    }
    g.cadence = c.eval_cadence;
    g.dirs.push_back(dir);
    for (std::uint64_t seed : c.seeds) {
      const auto mpath = metrics_path(dir, seed);
      if (!std::filesystem::exists(mpath)) {
        spdlog::warn("report: {} is missing; skipping", mpath.string());
        continue;
      }
      auto rows = read_metrics(mpath);
      if (!rows.empty()) g.seeds[dir.string() + "#" + std::to_string(seed)] = std::move(rows);
    }
  }
  if (groups.empty()) throw std::invalid_argument("no completed runs under " + runs_dir.string());

  std::filesystem::create_directories(out_dir);
  ReportOutput output;
  const std::string note = "# frames = environment steps summed over all parallel environments; std = population std "
                           "across seeds\n";
  std::ostringstream samples;
  samples << note << "task,grid_size,algorithm,teacher_mode,threshold,seeds,seeds_reached,samples_mean,samples_std\n";
  std::ostringstream efficiency;
  efficiency << note << "task,grid_size,algorithm,teacher_mode,threshold,baseline_samples,samples,ratio\n";

  for (const auto& [key, g] : groups) {
    const auto& [task, size, algo, mode] = key;
    if (g.seeds.empty()) continue;
    std::size_t length = SIZE_MAX;
    for (const auto& [name, rows] : g.seeds) length = std::min(length, rows.size());
    std::ostringstream curve;
    curve << note << "frames,seeds,mean_return_mean,mean_return_std,success_rate_mean,success_rate_std\n";
    for (std::size_t k = 0; k < length; ++k) {
      std::vector<double> ret, succ;
      const std::int64_t frames = g.seeds.begin()->second[k].frames;
      for (const auto& [name, rows] : g.seeds) {
        if (rows[k].frames != frames) {
          throw std::invalid_argument("evaluation frames do not line up across runs of " + task + "/" + algo + "/" +
                                      mode);
        }
        ret.push_back(rows[k].mean_return);
        succ.push_back(rows[k].success_rate);
      }
      const Summary r = summarize(ret), s = summarize(succ);
      curve << frames << ',' << g.seeds.size() << ',' << fmt_double(r.mean) << ',' << fmt_double(r.std) << ','
            << fmt_double(s.mean) << ',' << fmt_double(s.std) << '\n';
    }
    const auto file = out_dir / ("curve_" + task + "-" + std::to_string(size) + "_" + algo + "_" + mode + ".csv");
    write_text(file, curve.str());
    output.curve_files.push_back(file);

    for (double threshold : thresholds) {
      std::vector<double> reached;
      for (const auto& [name, rows] : g.seeds) {
        if (auto n = samples_to_threshold(rows, threshold)) reached.push_back(*n);
      }
      samples << task << ',' << size << ',' << algo << ',' << mode << ',' << fmt_double(threshold) << ','
              << g.seeds.size() << ',' << reached.size() << ',';
      if (reached.size() == g.seeds.size()) {
        const Summary s = summarize(reached);
        samples << fmt_double(s.mean) << ',' << fmt_double(s.std) << '\n';
      } else {
        samples << "not reached,not reached\n";
      }
    }
  }

  // Efficiency of each distilled mode against the vanilla group of the same task and algorithm.
  for (const auto& [key, g] : groups) {
    const auto& [task, size, algo, mode] = key;
    if (mode == "vanilla") continue;
    const auto base_it = groups.find(Key{task, size, algo, "vanilla"});
    if (base_it == groups.end()) continue;
    for (double threshold : thresholds) {
      std::vector<double> b, d;
      for (const auto& [name, rows] : base_it->second.seeds) {
        if (auto n = samples_to_threshold(rows, threshold)) b.push_back(*n);
      }
      for (const auto& [name, rows] : g.seeds) {
        if (auto n = samples_to_threshold(rows, threshold)) d.push_back(*n);
      }
      efficiency << task << ',' << size << ',' << algo << ',' << mode << ',' << fmt_double(threshold) << ',';
      const bool all = b.size() == base_it->second.seeds.size() && d.size() == g.seeds.size() && !d.empty();
      const double dm = all ? summarize(d).mean : 0.0;
      if (all && dm > 0.0) {
        const double bm = summarize(b).mean;
        efficiency << fmt_double(bm) << ',' << fmt_double(dm) << ',' << fmt_double(bm / dm) << '\n';
      } else {
        efficiency << "not reached,not reached,not reached\n";
      }
    }
  }
  output.samples_file = out_dir / "samples_to_return.csv";
  write_text(output.samples_file, samples.str());
  output.efficiency_file = out_dir / "efficiency.csv";
  write_text(output.efficiency_file, efficiency.str());
  return output;
}

TeacherCheckResult teacher_check(teacher::TeacherPolicy& teacher, grid::Task task, int size, int episodes,
                                 std::uint64_t seed_base) {
  if (episodes < 1) throw std::invalid_argument("teacher_check: episodes must be >= 1");
  const std::size_t failures_before = teacher.failure_count();
  const auto actions = grid::action_set(task);
  TeacherCheckResult result;
  result.episodes = episodes;
  int successes = 0;
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) {
    grid::EnvState env = grid::make_task(task, size, seed_base + static_cast<std::uint64_t>(i));
    while (true) {
      const auto dist = teacher.query(grid::full_view(env));
      const grid::StepResult r = grid::step(env, actions[static_cast<std::size_t>(dist.argmax())]);
      total += r.reward;
      if (r.terminated || r.truncated) {
        successes += r.success ? 1 : 0;
        break;
      }
    }
  }
  result.success_rate = static_cast<double>(successes) / episodes;
  result.mean_return = total / episodes;
  result.teacher_failures = teacher.failure_count() - failures_before;
  return result;
}

}  // namespace kdrl::harness
