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

// File formats.
//
// Stats file (binary, little-endian):
//
//   "NLS1"  u32 version (=1)
//   u32 header_len, header bytes (key=value lines), u32 crc32(header)
//   u32 section_count
//   per section:
//     char[16] tag (NUL padded), u32 dtype (1=f64, 2=f32, 3=bytes),
//     u64 payload_bytes, payload, u32 crc32(payload)
//
// Required sections LP, ACTPOW, CURV hold f64 arrays, layer-major with m_l
// values per layer. Optional: WDOWN_ABS (f32, per layer m x d row-major,
// |W_down| transposed so row i is channel i), ACTMEAN and INPOW (f64),
// QCROSS (bytes). Unknown sections are skipped with a warning.
//
// Masks are key=value text. Checkpoints ("NLCK") are binary with a trailing
// CRC32 over the whole body.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodelens/calib.hpp"
#include "nodelens/model.hpp"
#include "nodelens/scar.hpp"
#include "nodelens/train.hpp"

namespace nodelens {

inline constexpr std::uint32_t kStatsVersion = 1;
inline constexpr std::uint32_t kMaskVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Version string written into artifacts.
const char* tool_version();

struct StatsFile {
  std::string model_name = "tiny-swiglu";
  std::size_t d_model = 0;
  std::string calibration;  // free-form descriptor
  ChannelStats stats;
  /// Per layer |W_down|^T as f32, m_l x d row-major.
  std::vector<std::vector<float>> wdown_abs;
  std::optional<QCross> qcross;
  /// Filled by the reader (skipped sections and similar).
  std::vector<std::string> warnings;
};

std::vector<std::byte> encode_stats(const StatsFile& file);
StatsFile decode_stats(std::span<const std::byte> bytes);

void write_stats(const StatsFile& file, const std::filesystem::path& path);
StatsFile read_stats(const std::filesystem::path& path);

/// |W_down|^T per layer in the WDOWN_ABS layout.
std::vector<std::vector<float>> wdown_abs_of(const TinyModel& model);

/// Rebuilds W_down-like matrices [d x m] from a WDOWN_ABS payload, enough to
/// compute write patterns and connectivity for external models.
std::vector<Matrix> wdown_from_abs(const StatsFile& file);

std::string encode_mask(const PruneMask& mask);
/// Warnings (e.g. a missing fingerprint) are appended to `warnings`.
PruneMask decode_mask(const std::string& text,
                      std::vector<std::string>* warnings = nullptr);

void write_mask(const PruneMask& mask, const std::filesystem::path& path);
PruneMask read_mask(const std::filesystem::path& path,
                    std::vector<std::string>* warnings = nullptr);

std::vector<std::byte> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::byte> bytes);

void write_checkpoint(const Checkpoint& checkpoint,
                      const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::byte> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

/// Scientific notation with 17 significant digits (round-trips exactly).
std::string format_double(double value);
/// Parses a full-precision double; throws FormatError(kValidation).
double parse_double(const std::string& text);

}  // namespace nodelens
