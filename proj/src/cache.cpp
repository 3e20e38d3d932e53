// SPDX-License-Identifier: Apache-2.0
#include "kdrl/cache.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>
#include <sstream>

#include "kdrl/digest.hpp"

namespace kdrl::teacher {

namespace {

constexpr const char* kCacheHeader = "kdrl-teacher-cache v1";

std::string format_record(std::uint64_t digest, const std::string& key, const ActionDistribution& dist) {
  std::string out = hex64(digest) + " " + std::to_string(key.size()) + " " + std::to_string(dist.size());
  char buf[40];
  for (double p : dist.probs) {
    std::snprintf(buf, sizeof buf, " %.17g", p);
    out += buf;
  }
  out += "\n";
  out += key;
  out += "\n";
  return out;
}

}  // namespace

TeacherCache::TeacherCache(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  load();
  log_.open(path_, std::ios::binary | std::ios::app);
  if (!log_) throw std::runtime_error("cannot open teacher cache for appending: " + path_.string());
}

void TeacherCache::load() {
  std::ifstream in(path_, std::ios::binary);
  if (!in) {
    rewrite_locked();
    return;
  }
  std::string header;
  if (!std::getline(in, header) || header != kCacheHeader) {
    if (!header.empty() || in.peek() != std::ifstream::traits_type::eof()) {
      spdlog::warn("teacher cache {} is unreadable; starting an empty cache", path_.string());
      rebuilt_ = true;
    }
    rewrite_locked();
    return;
  }
  bool damaged = false;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string digest_hex;
    std::size_t length = 0, n = 0;
    fields >> digest_hex >> length >> n;
    ActionDistribution dist;
    dist.probs.resize(n);
    for (double& p : dist.probs) fields >> p;
    if (!fields || n == 0 || !dist.is_valid()) {
      damaged = true;
      break;
    }
    std::string key(length, '\0');
    in.read(key.data(), static_cast<std::streamsize>(length));
    if (static_cast<std::size_t>(in.gcount()) != length || in.get() != '\n' ||
        hex64(fnv1a64(key)) != digest_hex) {
      damaged = true;
      break;
    }
    auto& bucket = buckets_[fnv1a64(key)];
    bool present = false;
    for (auto& [k, d] : bucket) present = present || k == key;
    if (!present) {
      bucket.emplace_back(std::move(key), std::move(dist));
      ++size_;
    }
  }
  if (damaged) {
    spdlog::warn("teacher cache {} has a damaged record; keeping the {} intact entries before it", path_.string(),
                 size_);
    rebuilt_ = true;
    rewrite_locked();
  }
}

void TeacherCache::rewrite_locked() {
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write teacher cache: " + path_.string());
  out << kCacheHeader << "\n";
  for (const auto& [digest, bucket] : buckets_) {
    for (const auto& [key, dist] : bucket) out << format_record(digest, key, dist);
  }
}

void TeacherCache::append_locked(std::uint64_t digest, const std::string& key, const ActionDistribution& dist) {
  if (!log_.is_open()) return;
  log_ << format_record(digest, key, dist);
  log_.flush();
}

std::optional<ActionDistribution> TeacherCache::lookup(const std::string& key) const {
  std::shared_lock lock(mutex_);
  const auto it = buckets_.find(fnv1a64(key));
  if (it == buckets_.end()) return std::nullopt;
  for (const auto& [k, d] : it->second) {
    if (k == key) return d;
  }
  return std::nullopt;
}

void TeacherCache::store(const std::string& key, const ActionDistribution& dist) {
  if (!dist.is_valid()) throw std::invalid_argument("TeacherCache::store: not a valid distribution");
  std::unique_lock lock(mutex_);
  const std::uint64_t digest = fnv1a64(key);
  auto& bucket = buckets_[digest];
  for (auto& [k, d] : bucket) {
    if (k == key) return;
  }
  bucket.emplace_back(key, dist);
  ++size_;
  append_locked(digest, key, dist);
}

std::size_t TeacherCache::size() const {
  std::shared_lock lock(mutex_);
  return size_;
}

std::string teacher_cache_key(const TeacherPolicy& teacher, const grid::FullView& view) {
  return grid::canonical_text(view) + "teacher " + teacher.describe() + "\n";
}

ActionDistribution query_with_cache(TeacherPolicy& teacher, const grid::FullView& view, TeacherCache& cache) {
  const std::string key = teacher_cache_key(teacher, view);
  if (auto hit = cache.lookup(key)) return *hit;
  ActionDistribution d = teacher.query(view);
  cache.store(key, d);
  return d;
}

}  // namespace kdrl::teacher
