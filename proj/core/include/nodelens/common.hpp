/* Copyright 2026 The NodeLens Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nodelens {

/// Per-layer list of FFN channel indices (sorted, unique by convention).
using ChannelSets = std::vector<std::vector<std::size_t>>;

/// Broad failure classes. The CLI maps each class to a process exit code.
enum class ErrorKind {
  kInvalidArgument,  // precondition / config violation
  kInfeasible,       // pruning budget cannot be met under the constraints
  kFormat,           // file-format or validation failure
  kNumerical,        // non-finite values, divergence
  kIo,               // filesystem failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Finer classification for file-format failures.
enum class FormatErrorKind {
  kBadMagic,
  kVersionMismatch,
  kChecksum,
  kTruncated,
  kMissingSection,
  kValidation,
};

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : Error(ErrorKind::kFormat, what), format_kind_(kind) {}

  FormatErrorKind format_kind() const noexcept { return format_kind_; }

 private:
  FormatErrorKind format_kind_;
};

[[noreturn]] void throw_invalid(const std::string& what);

// ---------------------------------------------------------------------------
// Hashing and keyed random streams

/// FNV-1a 64-bit over raw bytes.
std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Uniform double in [0, 1) from the top 53 bits.
constexpr double unit_double(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Counter-based stream: value i of the stream identified by `key`.
/// Identical on every platform, independent of evaluation order.
inline double counter_uniform(std::uint64_t key, std::uint64_t index) {
  return unit_double(mix64(key ^ mix64(index)));
}

/// Sequential generator with platform-independent bounded draws
/// (std::uniform_*_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return unit_double(engine_()); }
  /// Uniform integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent per-trial seed from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix64(base ^ mix64(stream + 0x51ed270b27e3a1f5ULL));
}

// ---------------------------------------------------------------------------
// Checksums

std::uint32_t crc32(std::span<const std::byte> bytes, std::uint32_t crc = 0);

// ---------------------------------------------------------------------------
// Parallelism

/// Number of worker threads used by parallel helpers (>= 1).
std::size_t worker_count();
void set_worker_count(std::size_t workers);

/// Runs body(i) for i in [0, n) on up to worker_count() threads. Work items
/// are assigned in contiguous blocks; callers aggregate results by index so
/// the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace nodelens
