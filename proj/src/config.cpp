// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "kdrl/harness.hpp"

namespace kdrl::harness {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto r = std::from_chars(value.data(), value.data() + value.size(), out);
  if (r.ec != std::errc() || r.ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': '" + value + "' is not a valid number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key '" + key + "': '" + value + "' is not a boolean");
}

std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& value) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) seeds.push_back(parse_number<std::uint64_t>(key, item));
  }
  return seeds;
}

// Parse-and-assign wrapped so every error names its key.
template <typename F>
void wrap(const std::string& key, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto dbl = [](double ExperimentConfig::*member) {
      return [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.*member = parse_number<double>(k, v);
      };
    };
    auto train_dbl = [](double rl::TrainConfig::*member) {
      return [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.train.*member = parse_number<double>(k, v);
      };
    };
    auto train_int = [](int rl::TrainConfig::*member) {
      return [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.train.*member = parse_number<int>(k, v);
      };
    };
    auto lvlm_int = [](int teacher::LvlmConfig::*member) {
      return [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.lvlm.*member = parse_number<int>(k, v);
      };
    };

    t["task"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      wrap(k, [&] { c.task = grid::parse_task(v); });
    };
    t["grid_size"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.grid_size = parse_number<int>(k, v);
    };
    t["seeds"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seeds = parse_seeds(k, v); };
    t["out"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out = v; };

    // train.algo is handled by make_config before everything else.
    t["train.algo"] = [](ExperimentConfig&, const std::string&, const std::string&) {};
    t["train.gamma"] = train_dbl(&rl::TrainConfig::gamma);
    t["train.gae_lambda"] = train_dbl(&rl::TrainConfig::gae_lambda);
    t["train.clip_epsilon"] = train_dbl(&rl::TrainConfig::clip_epsilon);
    t["train.value_coef"] = train_dbl(&rl::TrainConfig::value_coef);
    t["train.entropy_coef"] = train_dbl(&rl::TrainConfig::entropy_coef);
    t["train.learning_rate"] = train_dbl(&rl::TrainConfig::learning_rate);
    t["train.max_grad_norm"] = train_dbl(&rl::TrainConfig::max_grad_norm);
    t["train.normalize_advantages"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.normalize_advantages = parse_bool(k, v);
    };
    t["train.iterations"] = train_int(&rl::TrainConfig::iterations);
    t["train.frames"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.frames = parse_number<std::int64_t>(k, v);
    };
    t["train.epochs"] = train_int(&rl::TrainConfig::epochs);
    t["train.minibatch"] = train_int(&rl::TrainConfig::minibatch);
    t["train.horizon"] = train_int(&rl::TrainConfig::horizon);
    t["train.num_envs"] = train_int(&rl::TrainConfig::num_envs);

    t["distill.lambda"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.distill.lambda = parse_number<double>(k, v);
    };
    t["distill.label_mode"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      wrap(k, [&] { c.distill.label_mode = distill::parse_label_mode(v); });
    };

    t["teacher.kind"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      wrap(k, [&] { c.teacher = parse_teacher_kind(v); });
    };
    t["teacher.soft_epsilon"] = dbl(&ExperimentConfig::soft_epsilon);

    t["lvlm.url"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.lvlm.url = v; };
    t["lvlm.model"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.lvlm.model = v; };
    t["lvlm.temperature"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.lvlm.temperature = parse_number<double>(k, v);
    };
    t["lvlm.max_retries"] = lvlm_int(&teacher::LvlmConfig::max_retries);
    t["lvlm.backoff_ms"] = lvlm_int(&teacher::LvlmConfig::backoff_ms);
    t["lvlm.max_backoff_ms"] = lvlm_int(&teacher::LvlmConfig::max_backoff_ms);
    t["lvlm.parallel"] = lvlm_int(&teacher::LvlmConfig::parallel);
    t["lvlm.min_interval_ms"] = lvlm_int(&teacher::LvlmConfig::min_interval_ms);
    t["lvlm.single_request"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.lvlm.single_request = parse_bool(k, v);
    };
    t["lvlm.few_shot"] = lvlm_int(&teacher::LvlmConfig::few_shot);
    t["lvlm.timeout_s"] = lvlm_int(&teacher::LvlmConfig::timeout_s);
    t["lvlm.prompt_dir"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.lvlm.prompt_dir = v;
    };
    t["lvlm.cache_dir"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.cache_dir = v; };

    t["eval.cadence"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.eval_cadence = parse_number<std::int64_t>(k, v);
    };
    t["eval.episodes"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.eval_episodes = parse_number<int>(k, v);
    };
    t["eval.seed_base"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.eval_seed_base = parse_number<std::uint64_t>(k, v);
    };
    t["log.wall_clock"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.wall_clock = parse_bool(k, v);
    };
    return t;
  }();
  return table;
}

}  // namespace

std::string_view teacher_kind_name(TeacherKind kind) {
  switch (kind) {
    case TeacherKind::Oracle: return "oracle";
    case TeacherKind::Lvlm: return "lvlm";
    case TeacherKind::None: return "none";
  }
  return "?";
}

TeacherKind parse_teacher_kind(std::string_view name) {
  if (name == "oracle") return TeacherKind::Oracle;
  if (name == "lvlm") return TeacherKind::Lvlm;
  if (name == "none") return TeacherKind::None;
  throw ConfigError("unknown teacher '" + std::string(name) + "' (expected oracle, lvlm or none)");
}

int ExperimentConfig::iterations() const {
  if (frames <= 0) return train.iterations;
  const std::int64_t per = train.frames_per_iteration();
  return static_cast<int>((frames + per - 1) / per);
}

Settings parse_settings(std::string_view text) {
  Settings out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

Settings read_settings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_settings(text.str());
}

ExperimentConfig make_config(const Settings& settings) {
  ExperimentConfig config;
  for (const auto& [key, value] : settings) {
    if (key == "train.algo") wrap(key, [&] { config.train = rl::TrainConfig::defaults(rl::parse_algorithm(value)); });
  }
  if (const char* dir = std::getenv(teacher::kCacheDirEnv); dir != nullptr && *dir != '\0') config.cache_dir = dir;
  const auto& table = setters();
  for (const auto& [key, value] : settings) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(config, key, value);
  }
  validate(config);
  return config;
}

void validate(const ExperimentConfig& c) {
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (c.eval_cadence <= 0) throw ConfigError("eval.cadence must be > 0");
  if (c.eval_episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  if (c.frames < 0) throw ConfigError("train.frames must be >= 0");
  if (c.grid_size != 0 && c.grid_size < grid::min_size(c.task)) {
    throw ConfigError("grid_size " + std::to_string(c.grid_size) + " is below the minimum " +
                      std::to_string(grid::min_size(c.task)) + " for " + std::string(grid::task_name(c.task)));
  }
  if (!(c.distill.lambda >= 0.0) || !std::isfinite(c.distill.lambda)) {
    throw ConfigError("distill.lambda must be finite and >= 0");
  }
  if (!(c.soft_epsilon >= 0.0) || c.soft_epsilon * 4.0 >= 1.0) {
    throw ConfigError("teacher.soft_epsilon must be in [0, 0.25)");
  }
  try {
    rl::validate(c.train);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream s;
  auto line = [&s](std::string_view key, const std::string& value) { s << key << " = " << value << "\n"; };
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  std::string seeds;
  for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(c.seeds[i]);

  line("task", std::string(grid::task_name(c.task)));
  line("grid_size", std::to_string(c.size()));
  line("seeds", seeds);
  line("out", c.out.string());
  line("train.algo", std::string(rl::algorithm_name(c.train.algorithm)));
  line("train.gamma", fmt_double(c.train.gamma));
  line("train.gae_lambda", fmt_double(c.train.gae_lambda));
  line("train.clip_epsilon", fmt_double(c.train.clip_epsilon));
  line("train.value_coef", fmt_double(c.train.value_coef));
  line("train.entropy_coef", fmt_double(c.train.entropy_coef));
  line("train.learning_rate", fmt_double(c.train.learning_rate));
  line("train.max_grad_norm", fmt_double(c.train.max_grad_norm));
  line("train.normalize_advantages", b(c.train.normalize_advantages));
  line("train.iterations", std::to_string(c.iterations()));
  line("train.frames", std::to_string(c.frames));
  line("train.epochs", std::to_string(c.train.epochs));
  line("train.minibatch", std::to_string(c.train.minibatch));
  line("train.horizon", std::to_string(c.train.horizon));
  line("train.num_envs", std::to_string(c.train.num_envs));
  line("distill.lambda", fmt_double(c.distill.lambda));
  line("distill.label_mode", std::string(distill::label_mode_name(c.distill.label_mode)));
  line("teacher.kind", std::string(teacher_kind_name(c.teacher)));
  line("teacher.soft_epsilon", fmt_double(c.soft_epsilon));
  line("lvlm.url", c.lvlm.url);
  line("lvlm.model", c.lvlm.model);
  line("lvlm.temperature", fmt_double(c.lvlm.temperature));
  line("lvlm.max_retries", std::to_string(c.lvlm.max_retries));
  line("lvlm.backoff_ms", std::to_string(c.lvlm.backoff_ms));
  line("lvlm.max_backoff_ms", std::to_string(c.lvlm.max_backoff_ms));
  line("lvlm.parallel", std::to_string(c.lvlm.parallel));
  line("lvlm.min_interval_ms", std::to_string(c.lvlm.min_interval_ms));
  line("lvlm.single_request", b(c.lvlm.single_request));
  line("lvlm.few_shot", std::to_string(c.lvlm.few_shot));
  line("lvlm.timeout_s", std::to_string(c.lvlm.timeout_s));
  line("lvlm.prompt_dir", c.lvlm.prompt_dir.string());
  line("lvlm.cache_dir", c.cache_dir.string());
  line("eval.cadence", std::to_string(c.eval_cadence));
  line("eval.episodes", std::to_string(c.eval_episodes));
  line("eval.seed_base", std::to_string(c.eval_seed_base));
  line("log.wall_clock", b(c.wall_clock));
  return s.str();
}

}  // namespace kdrl::harness
