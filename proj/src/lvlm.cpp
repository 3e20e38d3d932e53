// SPDX-License-Identifier: Apache-2.0
#include "kdrl/lvlm.hpp"

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <sstream>
#include <thread>

#include "kdrl/parse.hpp"

namespace kdrl::teacher {

namespace {

std::pair<std::string, std::string> split_url(const std::string& url) {
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("LVLM url needs a scheme: " + url);
  const std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpTransport::HttpTransport(std::string url, std::string api_key, int timeout_s)
    : api_key_(std::move(api_key)), timeout_s_(timeout_s) {
  std::tie(origin_, path_) = split_url(url);
}

TransportResponse HttpTransport::post(const std::string& json_body) {
  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_s_, 0);
  client.set_read_timeout(timeout_s_, 0);
  httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
  auto res = client.Post(path_, headers, json_body, "application/json");
  if (!res) return {0, "", httplib::to_string(res.error())};
  return {res->status, res->body, ""};
}

void RateLimiter::acquire() {
  if (min_interval_.count() <= 0) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + min_interval_;
  }
  std::this_thread::sleep_until(slot);
}

std::string make_chat_request(const std::string& model, double temperature, const std::string& prompt) {
  nlohmann::json body;
  body["model"] = model;
  body["temperature"] = temperature;
  body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
  return body.dump();
}

std::string extract_message_text(const std::string& body) {
  const auto json = nlohmann::json::parse(body, nullptr, false);
  if (json.is_discarded()) throw std::runtime_error("response is not JSON");
  if (json.contains("choices") && json["choices"].is_array() && !json["choices"].empty()) {
    const auto& message = json["choices"][0].value("message", nlohmann::json::object());
    const auto& content = message.value("content", nlohmann::json());
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
      std::string text;
      for (const auto& part : content) {
        if (part.is_object() && part.contains("text") && part["text"].is_string()) text += part["text"].get<std::string>();
      }
      return text;
    }
  }
  if (json.contains("candidates") && json["candidates"].is_array() && !json["candidates"].empty()) {
    const auto& parts = json["candidates"][0]["content"]["parts"];
    if (parts.is_array()) {
      std::string text;
      for (const auto& part : parts) {
        if (part.contains("text") && part["text"].is_string()) text += part["text"].get<std::string>();
      }
      return text;
    }
  }
  throw std::runtime_error("response has no message text");
}

LvlmTeacher::LvlmTeacher(LvlmConfig config, std::shared_ptr<ChatTransport> transport, TeacherCache* cache)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      cache_(cache),
      templates_(config_.prompt_dir.empty() ? PromptTemplates::defaults() : PromptTemplates::load(config_.prompt_dir)),
      limiter_(std::chrono::milliseconds(config_.min_interval_ms)) {
  if (config_.max_retries < 0 || config_.parallel < 1 || config_.few_shot < 0) {
    throw ConfigError("LVLM config: max_retries >= 0, parallel >= 1 and few_shot >= 0 required");
  }
  if (!transport_) {
    if (config_.url.empty()) throw ConfigError("LVLM teacher needs an endpoint url (lvlm.url)");
    const char* key = std::getenv(kApiKeyEnv);
    if (key == nullptr || *key == '\0') {
      throw ConfigError(std::string("LVLM teacher needs credentials in the environment variable ") + kApiKeyEnv);
    }
    transport_ = std::make_shared<HttpTransport>(config_.url, key, config_.timeout_s);
  }
}

std::string LvlmTeacher::describe() const {
  std::ostringstream s;
  s << "lvlm model=" << config_.model << " temperature=" << config_.temperature << " few_shot=" << config_.few_shot
    << " single=" << config_.single_request << " " << templates_.version();
  return s.str();
}

const std::vector<FewShotExample>& LvlmTeacher::examples_for(const grid::FullView& view) {
  std::lock_guard lock(examples_mutex_);
  const auto key = std::make_pair(static_cast<int>(view.task), view.grid.width());
  auto it = examples_.find(key);
  if (it == examples_.end()) {
    it = examples_.emplace(key, make_few_shot_examples(view.task, view.grid.width(), config_.few_shot)).first;
  }
  return it->second;
}

Prompt LvlmTeacher::analysis_prompt(const grid::FullView& view) const {
  return build_analysis_prompt(templates_, grid::render_full_text(view), view.mission.text);
}

Prompt LvlmTeacher::action_prompt(const grid::FullView& view, const std::string& analysis) {
  const auto names = action_names(view.task);
  return build_action_prompt(templates_, analysis, examples_for(view), names, view.mission.text);
}

void LvlmTeacher::backoff(int attempt) const {
  const long delay = std::min<long>(config_.max_backoff_ms, static_cast<long>(config_.backoff_ms) << std::min(attempt, 20));
  if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
}

std::optional<std::string> LvlmTeacher::send(const std::string& prompt) {
  const std::string body = make_chat_request(config_.model, config_.temperature, prompt);
  limiter_.acquire();
  requests_.fetch_add(1);
  const TransportResponse res = transport_->post(body);
  if (res.status != 200) {
    spdlog::warn("LVLM request failed (status {}{}{})", res.status, res.error.empty() ? "" : ", ", res.error);
    return std::nullopt;
  }
  try {
    return extract_message_text(res.body);
  } catch (const std::exception& e) {
    spdlog::warn("LVLM response unusable: {}", e.what());
    return std::nullopt;
  }
}

std::optional<ActionDistribution> LvlmTeacher::query_uncached(const grid::FullView& view) {
  const auto names = action_names(view.task);
  std::string analysis;
  if (!config_.single_request) {
    const std::string prompt = analysis_prompt(view).text;
    bool ok = false;
    for (int attempt = 0; attempt <= config_.max_retries && !ok; ++attempt) {
      if (attempt > 0) backoff(attempt - 1);
      if (auto text = send(prompt)) {
        analysis = *text;
        ok = true;
      }
    }
    if (!ok) return std::nullopt;
  }
  std::string prompt;
  if (config_.single_request) {
    prompt = analysis_prompt(view).text + "\nAfter writing the analysis, answer the following.\n\n" +
             action_prompt(view, "(your analysis above)").text;
  } else {
    prompt = action_prompt(view, analysis).text;
  }
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) backoff(attempt - 1);
    const auto text = send(prompt);
    if (!text) continue;
    ParseResult parsed = parse_probabilities(*text, names, &parse_failures_);
    if (!parsed.failed) return parsed.distribution;
  }
  return std::nullopt;
}

ActionDistribution LvlmTeacher::query(const grid::FullView& view) {
  std::string key;
  if (cache_) {
    key = teacher_cache_key(*this, view);
    if (auto hit = cache_->lookup(key)) return *hit;
  }
  auto answer = query_uncached(view);
  if (!answer) {
    // Fallback answers are not cached so a later query can try again.
    failures_.fetch_add(1);
    return ActionDistribution::uniform(grid::action_set(view.task).size());
  }
  if (cache_) cache_->store(key, *answer);
  return *answer;
}

std::vector<ActionDistribution> LvlmTeacher::query_batch(std::span<const grid::FullView* const> views) {
  std::vector<ActionDistribution> out(views.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < views.size(); i = next.fetch_add(1)) out[i] = query(*views[i]);
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(config_.parallel), views.size());
  if (threads <= 1) {
    worker();
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace kdrl::teacher
