// Copyright 2026 The deideval Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

namespace deideval {

inline constexpr std::string_view kToolVersion = "0.1.0";

//===----------------------------------------------------------------------===//
// Errors
//===----------------------------------------------------------------------===//

enum class ErrorCode {
  kParse,
  kInvalidDictionary,
  kDuplicateFeature,
  kUnknownFeature,
  kOutOfDomain,
  kMissingValue,
  kRaggedRow,
  kEmptyFile,
  kEmptySelection,
  kNotBinnable,
  kEmptyDataset,
  kSchemaMismatch,
  kDegenerateFeature,
  kEntropyMismatch,
  kFlatCalibration,
  kTooManyCells,
  kInsufficientData,
  kInvalidArgument,
  kUnsupportedVersion,
  kIo,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kInvalidDictionary: return "InvalidDictionary";
    case ErrorCode::kDuplicateFeature: return "DuplicateFeature";
    case ErrorCode::kUnknownFeature: return "UnknownFeature";
    case ErrorCode::kOutOfDomain: return "OutOfDomain";
    case ErrorCode::kMissingValue: return "MissingValue";
    case ErrorCode::kRaggedRow: return "RaggedRow";
    case ErrorCode::kEmptyFile: return "EmptyFile";
    case ErrorCode::kEmptySelection: return "EmptySelection";
    case ErrorCode::kNotBinnable: return "NotBinnable";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kDegenerateFeature: return "DegenerateFeature";
    case ErrorCode::kEntropyMismatch: return "EntropyMismatch";
    case ErrorCode::kFlatCalibration: return "FlatCalibration";
    case ErrorCode::kTooManyCells: return "TooManyCells";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

// Position of an offending cell. `row` is the 1-based data row (the header
// is not counted).
struct CellLocation {
  std::size_t row = 0;
  std::string column;
  std::string value;
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}
  Error(ErrorCode code, const std::string& message, CellLocation location)
      : Error(code, message) {
    location_ = std::move(location);
  }

  ErrorCode code() const noexcept { return code_; }
  const std::optional<CellLocation>& location() const noexcept {
    return location_;
  }

 private:
  ErrorCode code_;
  std::optional<CellLocation> location_;
};

//===----------------------------------------------------------------------===//
// Logging
//===----------------------------------------------------------------------===//

enum class LogLevel { kQuiet = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Verbosity comes from DEIDEVAL_LOG (quiet|warn|info|debug), default warn.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("DEIDEVAL_LOG");
    if (env == nullptr) return LogLevel::kWarn;
    std::string_view v(env);
    if (v == "quiet") return LogLevel::kQuiet;
    if (v == "info") return LogLevel::kInfo;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return level;
}

inline void log_message(LogLevel level, std::string_view message) {
  if (level > log_level()) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const char* tag = level == LogLevel::kWarn   ? "warning"
                    : level == LogLevel::kInfo ? "info"
                                               : "debug";
  std::cerr << "deideval " << tag << ": " << message << "\n";
}

//===----------------------------------------------------------------------===//
// Seeded randomness
//===----------------------------------------------------------------------===//

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a, 64 bit.
constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Labeled derivation: a child stream depends only on (parent, label), so
// adding or reconfiguring one consumer never shifts another's stream.
constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                    std::string_view label) noexcept {
  return mix64(parent ^ mix64(hash_label(label)));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                    std::uint64_t index) noexcept {
  return mix64(parent ^ mix64(index ^ 0x5851f42d4c957f2dULL));
}

// xoshiro256** seeded through SplitMix64. All sampling in the library goes
// through this type so results do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept {
    std::uint64_t s = seed;
    for (auto& word : state_) {
      s += 0x9e3779b97f4a7c15ULL;
      word = mix64(s);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound), bound > 0 (Lemire's method).
  std::uint64_t below(std::uint64_t bound) noexcept {
    unsigned __int128 m =
        static_cast<unsigned __int128>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4];
};

// Moves a uniform random `count`-element sample to the front of `items`
// (partial Fisher-Yates).
template <typename T>
void partial_shuffle(std::span<T> items, std::size_t count, Rng& rng) {
  count = std::min(count, items.size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(items.size() - i);
    std::swap(items[i], items[j]);
  }
}

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  partial_shuffle(items, items.size(), rng);
}

//===----------------------------------------------------------------------===//
// Ordered parallel map
//===----------------------------------------------------------------------===//

inline std::atomic<unsigned>& worker_count_storage() {
  static std::atomic<unsigned> workers{[] {
    if (const char* env = std::getenv("DEIDEVAL_WORKERS")) {
      const int n = std::atoi(env);
      if (n > 0) return static_cast<unsigned>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
  }()};
  return workers;
}

inline unsigned worker_count() { return worker_count_storage().load(); }
inline void set_worker_count(unsigned n) {
  worker_count_storage().store(std::max(1u, n));
}

// Evaluates fn(0..n-1) on up to worker_count() threads and returns results in
// index order. The output never depends on the number of workers as long as
// fn(i) depends only on i. The exception from the lowest failing index is
// rethrown.
template <typename Fn>
auto parallel_map(std::size_t n, Fn&& fn)
    -> std::vector<std::invoke_result_t<Fn&, std::size_t>> {
  using R = std::invoke_result_t<Fn&, std::size_t>;
  const std::size_t workers =
      std::min<std::size_t>(worker_count(), n);
  if (workers <= 1) {
    std::vector<R> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(fn(i));
    return out;
  }
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(run);
  run();
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

//===----------------------------------------------------------------------===//
// Text helpers
//===----------------------------------------------------------------------===//

// Shortest representation that round-trips.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string join(std::span<const std::string> parts,
                        std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    return std::nullopt;
  }
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace deideval
