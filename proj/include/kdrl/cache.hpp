// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "kdrl/teacher.hpp"

namespace kdrl::teacher {

// Content-keyed store of teacher answers. Keys are full canonical texts; the 64-bit digest
// only picks the bucket, so distinct texts never collide. With a backing file every new
// entry is appended to a versioned record log:
//
//   kdrl-teacher-cache v1
//   <digest hex> <text length> <n> <p_1> ... <p_n>
//   <text bytes>
//
// Concurrent lookups share a lock; stores are serialized.
class TeacherCache {
 public:
  TeacherCache() = default;
  // Opens (or creates) the log at `path`. A log that cannot be read is replaced by an
  // empty one with a warning; a torn tail record is dropped.
  explicit TeacherCache(std::filesystem::path path);

  TeacherCache(const TeacherCache&) = delete;
  TeacherCache& operator=(const TeacherCache&) = delete;

  std::optional<ActionDistribution> lookup(const std::string& key) const;
  void store(const std::string& key, const ActionDistribution& dist);

  std::size_t size() const;
  bool persistent() const { return !path_.empty(); }
  const std::filesystem::path& path() const { return path_; }
  // True when opening found a damaged log and rebuilt it.
  bool rebuilt() const { return rebuilt_; }

 private:
  void load();
  void rewrite_locked();
  void append_locked(std::uint64_t digest, const std::string& key, const ActionDistribution& dist);

  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::uint64_t, std::vector<std::pair<std::string, ActionDistribution>>> buckets_;
  std::size_t size_ = 0;
  std::ofstream log_;
  bool rebuilt_ = false;
};

// Cache key for a teacher answer: canonical view text plus the teacher's description
// (which carries any prompt-template version).
std::string teacher_cache_key(const TeacherPolicy& teacher, const grid::FullView& view);

// Lookup; on a miss ask the teacher, store, return.
ActionDistribution query_with_cache(TeacherPolicy& teacher, const grid::FullView& view, TeacherCache& cache);

}  // namespace kdrl::teacher
