// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdrl/cache.hpp"
#include "kdrl/prompt.hpp"
#include "kdrl/teacher.hpp"

namespace kdrl::teacher {

inline constexpr const char* kApiKeyEnv = "LVLM2P_API_KEY";
inline constexpr const char* kCacheDirEnv = "LVLM2P_CACHE_DIR";

struct LvlmConfig {
  // Chat-completions style endpoint, e.g. http://localhost:8000/v1/chat/completions.
  std::string url;
  std::string model = "gemini-1.5-flash";
  double temperature = 0.0;
  int max_retries = 3;
  int backoff_ms = 500;
  int max_backoff_ms = 8000;
  // Requests in flight at once during batch queries.
  int parallel = 4;
  // Minimum spacing between request starts, shared by all workers.
  int min_interval_ms = 0;
  // Send analysis and action inference as one request instead of two.
  bool single_request = false;
  int few_shot = 3;
  int timeout_s = 60;
  std::filesystem::path prompt_dir;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TransportResponse {
  int status = 0;  // 0 when the request never completed
  std::string body;
  std::string error;
};

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual TransportResponse post(const std::string& json_body) = 0;
};

// POSTs JSON to the configured URL with a bearer token.
class HttpTransport final : public ChatTransport {
 public:
  HttpTransport(std::string url, std::string api_key, int timeout_s);
  TransportResponse post(const std::string& json_body) override;

 private:
  std::string origin_;
  std::string path_;
  std::string api_key_;
  int timeout_s_;
};

class RateLimiter {
 public:
  explicit RateLimiter(std::chrono::milliseconds min_interval) : min_interval_(min_interval) {}
  // Blocks until at least min_interval has passed since the previous acquire().
  void acquire();

 private:
  std::chrono::milliseconds min_interval_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_{};
};

// {"model":..., "temperature":..., "messages":[{"role":"user","content":prompt}]}
std::string make_chat_request(const std::string& model, double temperature, const std::string& prompt);
// Message text of an OpenAI-style ("choices") or Gemini-style ("candidates") response.
// Throws std::runtime_error when neither shape is present.
std::string extract_message_text(const std::string& body);

// Teacher backed by a prompted vision-language model endpoint.
class LvlmTeacher final : public TeacherPolicy {
 public:
  // With no transport, an HttpTransport is built from config.url and the API key in
  // LVLM2P_API_KEY; either missing throws ConfigError.
  explicit LvlmTeacher(LvlmConfig config, std::shared_ptr<ChatTransport> transport = nullptr,
                       TeacherCache* cache = nullptr);

  ActionDistribution query(const grid::FullView& view) override;
  std::vector<ActionDistribution> query_batch(std::span<const grid::FullView* const> views) override;
  std::string describe() const override;
  std::size_t failure_count() const override { return failures_.load(); }

  std::size_t request_count() const { return requests_.load(); }
  std::size_t parse_failures() const { return parse_failures_.load(); }

  Prompt analysis_prompt(const grid::FullView& view) const;
  Prompt action_prompt(const grid::FullView& view, const std::string& analysis);

 private:
  // Nothing when retries are exhausted.
  std::optional<ActionDistribution> query_uncached(const grid::FullView& view);
  // Response text, or nothing once retries are exhausted.
  std::optional<std::string> send(const std::string& prompt);
  void backoff(int attempt) const;
  const std::vector<FewShotExample>& examples_for(const grid::FullView& view);

  LvlmConfig config_;
  std::shared_ptr<ChatTransport> transport_;
  TeacherCache* cache_;
  PromptTemplates templates_;
  RateLimiter limiter_;
  std::mutex examples_mutex_;
  std::map<std::pair<int, int>, std::vector<FewShotExample>> examples_;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> parse_failures_{0};
  std::atomic<std::size_t> failures_{0};
};

}  // namespace kdrl::teacher
