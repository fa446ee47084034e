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

#include "nodelens/io.hpp"

#include <unistd.h>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace nodelens {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kStatsMagic = {'N', 'L', 'S', '1'};
constexpr std::array<char, 4> kCheckpointMagic = {'N', 'L', 'C', 'K'};

enum class DType : std::uint32_t { kF64 = 1, kF32 = 2, kBytes = 3 };

[[noreturn]] void fail(FormatErrorKind kind, const std::string& what) {
  throw FormatError(kind, what);
}

// ---------------------------------------------------------------------------
// Little-endian byte writer / reader

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::byte*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void uint(T value) {
    for (std::size_t k = 0; k < sizeof(T); ++k) {
      out_.push_back(static_cast<std::byte>((value >> (8 * k)) & 0xff));
    }
  }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void text(const std::string& s) { bytes(s.data(), s.size()); }
  std::size_t size() const { return out_.size(); }
  std::span<const std::byte> view(std::size_t from) const {
    return std::span<const std::byte>(out_).subspan(from);
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}
  std::span<const std::byte> take(std::size_t n, const char* what) {
    if (n > in_.size() - pos_) {
      fail(FormatErrorKind::kTruncated, std::string("file truncated while reading ") + what);
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T uint(const char* what) {
    const auto s = take(sizeof(T), what);
    T v = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) {
      v |= static_cast<T>(std::to_integer<std::uint8_t>(s[k])) << (8 * k);
    }
    return v;
  }
  std::uint32_t u32(const char* what) { return uint<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return uint<std::uint64_t>(what); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::span<const std::byte> all() const { return in_; }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

std::uint64_t load_u64(std::span<const std::byte> s, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t k = 0; k < 8; ++k) {
    v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(s[at + k])) << (8 * k);
  }
  return v;
}

std::uint32_t load_u32(std::span<const std::byte> s, std::size_t at) {
  std::uint32_t v = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    v |= static_cast<std::uint32_t>(std::to_integer<std::uint8_t>(s[at + k])) << (8 * k);
  }
  return v;
}

// ---------------------------------------------------------------------------
// key=value documents

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(FormatErrorKind::kValidation, "malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& require(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) fail(FormatErrorKind::kValidation, "missing field '" + key + "'");
  return it->second;
}

std::uint64_t parse_u64(const std::string& text, int base = 10) {
  std::string_view sv(text);
  if (base == 16 && sv.starts_with("0x")) sv.remove_prefix(2);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v, base);
  if (ec != std::errc() || ptr != sv.data() + sv.size() || sv.empty()) {
    fail(FormatErrorKind::kValidation, "not an integer: '" + text + "'");
  }
  return v;
}

std::string hex64(std::uint64_t v) {
  char buf[19] = "0x";
  const auto [ptr, ec] = std::to_chars(buf + 2, buf + sizeof(buf), v, 16);
  (void)ec;
  std::string digits(buf + 2, ptr);
  return "0x" + std::string(16 - digits.size(), '0') + digits;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto at = text.find(sep, start);
    out.push_back(text.substr(start, at - start));
    if (at == std::string::npos) break;
    start = at + 1;
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& values, F&& format) {
  std::string out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k) out += ',';
    out += format(values[k]);
  }
  return out;
}

std::vector<std::size_t> parse_index_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& part : split(text, ',')) out.push_back(parse_u64(part));
  return out;
}

std::string index_list(const std::vector<std::size_t>& v) {
  return join(v, [](std::size_t x) { return std::to_string(x); });
}

// ---------------------------------------------------------------------------
// Stats sections

std::string section_tag(std::span<const std::byte> raw) {
  std::string tag;
  for (std::byte b : raw) {
    if (b == std::byte{0}) break;
    tag.push_back(static_cast<char>(b));
  }
  return tag;
}

void write_section(Writer& w, const std::string& tag, DType dtype,
                   const std::vector<std::byte>& payload) {
  std::array<char, 16> name{};
  std::copy_n(tag.begin(), std::min<std::size_t>(tag.size(), name.size()), name.begin());
  w.bytes(name.data(), name.size());
  w.u32(static_cast<std::uint32_t>(dtype));
  w.u64(payload.size());
  w.bytes(payload.data(), payload.size());
  w.u32(crc32(payload));
}

std::vector<std::byte> f64_payload(const std::vector<std::vector<double>>& table) {
  Writer w;
  for (const auto& row : table) {
    for (double v : row) w.f64(v);
  }
  return w.take();
}

std::vector<std::vector<double>> f64_table(std::span<const std::byte> payload,
                                           const std::vector<std::size_t>& widths,
                                           std::size_t per_layer_scale,
                                           const std::string& tag) {
  std::size_t expected = 0;
  for (std::size_t m : widths) expected += m * per_layer_scale;
  if (payload.size() != expected * 8) {
    fail(FormatErrorKind::kValidation,
         "section " + tag + " holds " + std::to_string(payload.size() / 8) +
             " values, header implies " + std::to_string(expected));
  }
  std::vector<std::vector<double>> out(widths.size());
  std::size_t at = 0;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    out[l].resize(widths[l] * per_layer_scale);
    for (double& v : out[l]) {
      v = std::bit_cast<double>(load_u64(payload, at));
      at += 8;
    }
  }
  return out;
}

std::vector<std::byte> qcross_payload(const QCross& q) {
  Writer w;
  w.u64(q.token_count);
  w.u64(q.layers.size());
  for (const auto& layer : q.layers) {
    w.u64(layer.core.size());
    w.u64(layer.mean_q.size());
    for (std::size_t c : layer.core) w.u64(c);
    for (double v : layer.mean_q) w.f64(v);
    for (double v : layer.mean_q2) w.f64(v);
    for (Eigen::Index i = 0; i < layer.mean_cross.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.mean_cross.cols(); ++j) w.f64(layer.mean_cross(i, j));
    }
  }
  return w.take();
}

QCross parse_qcross(std::span<const std::byte> payload, std::uint64_t fingerprint) {
  Reader r(payload);
  QCross q;
  q.fingerprint = fingerprint;
  q.token_count = r.u64("QCROSS");
  const std::uint64_t layers = r.u64("QCROSS");
  if (layers > payload.size()) fail(FormatErrorKind::kValidation, "QCROSS: bad layer count");
  for (std::uint64_t l = 0; l < layers; ++l) {
    QCrossLayer layer;
    const std::uint64_t c = r.u64("QCROSS");
    const std::uint64_t m = r.u64("QCROSS");
    if (c > m || m * (c + 2) * 8 > r.remaining()) {
      fail(FormatErrorKind::kValidation, "QCROSS: inconsistent layer sizes");
    }
    for (std::uint64_t k = 0; k < c; ++k) {
      const std::uint64_t idx = r.u64("QCROSS");
      if (idx >= m) fail(FormatErrorKind::kValidation, "QCROSS: core index out of range");
      layer.core.push_back(idx);
    }
    layer.mean_q.resize(m);
    layer.mean_q2.resize(m);
    for (double& v : layer.mean_q) v = r.f64("QCROSS");
    for (double& v : layer.mean_q2) v = r.f64("QCROSS");
    layer.mean_cross.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < layer.mean_cross.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.mean_cross.cols(); ++j) {
        layer.mean_cross(i, j) = r.f64("QCROSS");
      }
    }
    q.layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0) fail(FormatErrorKind::kValidation, "QCROSS: trailing bytes");
  return q;
}

std::string stats_header(const StatsFile& f) {
  const auto widths = f.stats.widths();
  std::string h;
  h += "model=" + f.model_name + "\n";
  h += "n_layers=" + std::to_string(widths.size()) + "\n";
  h += "widths=" + index_list(widths) + "\n";
  h += "d_model=" + std::to_string(f.d_model) + "\n";
  h += "token_count=" + std::to_string(f.stats.token_count) + "\n";
  h += "calibration=" + f.calibration + "\n";
  h += "fingerprint=" + hex64(f.stats.fingerprint) + "\n";
  return h;
}

}  // namespace

const char* tool_version() { return "nodelens 0.3.0"; }

// ---------------------------------------------------------------------------
// Stats

std::vector<std::byte> encode_stats(const StatsFile& file) {
  file.stats.validate();
  if (file.model_name.find('\n') != std::string::npos ||
      file.calibration.find('\n') != std::string::npos) {
    throw_invalid("stats header fields must be single-line");
  }
  const auto widths = file.stats.widths();
  Writer w;
  w.bytes(kStatsMagic.data(), kStatsMagic.size());
  w.u32(kStatsVersion);
  const std::string header = stats_header(file);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.text(header);
  w.u32(crc32(std::as_bytes(std::span(header.data(), header.size()))));

  std::vector<std::pair<std::string, std::pair<DType, std::vector<std::byte>>>> sections;
  sections.push_back({"LP", {DType::kF64, f64_payload(file.stats.lp)}});
  sections.push_back({"ACTPOW", {DType::kF64, f64_payload(file.stats.act_power)}});
  sections.push_back({"CURV", {DType::kF64, f64_payload(file.stats.curvature)}});
  if (!file.stats.act_mean.empty()) {
    sections.push_back({"ACTMEAN", {DType::kF64, f64_payload(file.stats.act_mean)}});
  }
  if (!file.stats.input_power.empty()) {
    sections.push_back({"INPOW", {DType::kF64, f64_payload(file.stats.input_power)}});
  }
  if (!file.wdown_abs.empty()) {
    if (file.wdown_abs.size() != widths.size()) throw_invalid("WDOWN_ABS: layer count");
    Writer p;
    for (std::size_t l = 0; l < widths.size(); ++l) {
      if (file.wdown_abs[l].size() != widths[l] * file.d_model) {
        throw_invalid("WDOWN_ABS: layer " + std::to_string(l) + " has the wrong size");
      }
      for (float v : file.wdown_abs[l]) p.f32(v);
    }
    sections.push_back({"WDOWN_ABS", {DType::kF32, p.take()}});
  }
  if (file.qcross) sections.push_back({"QCROSS", {DType::kBytes, qcross_payload(*file.qcross)}});

  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [tag, body] : sections) write_section(w, tag, body.first, body.second);
  return w.take();
}

StatsFile decode_stats(std::span<const std::byte> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kStatsMagic.begin(),
                  [](std::byte b, char c) { return b == static_cast<std::byte>(c); })) {
    fail(FormatErrorKind::kBadMagic, "not a stats file (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kStatsVersion) {
    fail(FormatErrorKind::kVersionMismatch,
         "stats file version " + std::to_string(version) + " is not supported (expected " +
             std::to_string(kStatsVersion) + ")");
  }
  const std::uint32_t header_len = r.u32("header length");
  const auto header_raw = r.take(header_len, "header");
  if (r.u32("header checksum") != crc32(header_raw)) {
    fail(FormatErrorKind::kChecksum, "stats header checksum mismatch");
  }
  const KeyValues kv = parse_key_values(
      std::string(reinterpret_cast<const char*>(header_raw.data()), header_raw.size()));

  StatsFile file;
  file.model_name = require(kv, "model");
  file.calibration = require(kv, "calibration");
  file.d_model = parse_u64(require(kv, "d_model"));
  const std::size_t n_layers = parse_u64(require(kv, "n_layers"));
  const auto widths = parse_index_list(require(kv, "widths"));
  if (widths.size() != n_layers) {
    fail(FormatErrorKind::kValidation, "header widths disagree with n_layers");
  }
  file.stats.token_count = parse_u64(require(kv, "token_count"));
  file.stats.fingerprint = parse_u64(require(kv, "fingerprint"), 16);

  const std::uint32_t count = r.u32("section count");
  std::map<std::string, std::span<const std::byte>> found;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string tag = section_tag(r.take(16, "section tag"));
    const std::uint32_t dtype = r.u32("section dtype");
    const std::uint64_t size = r.u64("section size");
    if (size > r.remaining()) fail(FormatErrorKind::kTruncated, "section " + tag + " truncated");
    const auto payload = r.take(static_cast<std::size_t>(size), "section payload");
    if (r.u32("section checksum") != crc32(payload)) {
      fail(FormatErrorKind::kChecksum, "checksum mismatch in section " + tag);
    }
    static const std::map<std::string, DType> kKnown = {
        {"LP", DType::kF64},     {"ACTPOW", DType::kF64},   {"CURV", DType::kF64},
        {"ACTMEAN", DType::kF64}, {"INPOW", DType::kF64},   {"WDOWN_ABS", DType::kF32},
        {"QCROSS", DType::kBytes}};
    const auto known = kKnown.find(tag);
    if (known == kKnown.end()) {
      file.warnings.push_back("skipping unknown section '" + tag + "'");
      continue;
    }
    if (static_cast<std::uint32_t>(known->second) != dtype) {
      fail(FormatErrorKind::kValidation, "section " + tag + " has an unexpected dtype");
    }
    if (found.count(tag)) fail(FormatErrorKind::kValidation, "duplicate section " + tag);
    found[tag] = payload;
  }
  if (r.remaining() != 0) fail(FormatErrorKind::kValidation, "trailing bytes after sections");

  for (const char* req : {"LP", "ACTPOW", "CURV"}) {
    if (!found.count(req)) {
      fail(FormatErrorKind::kMissingSection, std::string("required section ") + req + " missing");
    }
  }
  file.stats.lp = f64_table(found["LP"], widths, 1, "LP");
  file.stats.act_power = f64_table(found["ACTPOW"], widths, 1, "ACTPOW");
  file.stats.curvature = f64_table(found["CURV"], widths, 1, "CURV");
  if (found.count("ACTMEAN")) file.stats.act_mean = f64_table(found["ACTMEAN"], widths, 1, "ACTMEAN");
  if (found.count("INPOW")) {
    const std::vector<std::size_t> dims(widths.size(), file.d_model);
    file.stats.input_power = f64_table(found["INPOW"], dims, 1, "INPOW");
  }
  if (found.count("WDOWN_ABS")) {
    const auto payload = found["WDOWN_ABS"];
    std::size_t expected = 0;
    for (std::size_t m : widths) expected += m * file.d_model;
    if (payload.size() != expected * 4) {
      fail(FormatErrorKind::kValidation, "WDOWN_ABS size disagrees with the header");
    }
    std::size_t at = 0;
    for (std::size_t m : widths) {
      std::vector<float> layer(m * file.d_model);
      for (float& v : layer) {
        v = std::bit_cast<float>(load_u32(payload, at));
        at += 4;
      }
      file.wdown_abs.push_back(std::move(layer));
    }
  }
  if (found.count("QCROSS")) {
    file.qcross = parse_qcross(found["QCROSS"], file.stats.fingerprint);
    if (file.qcross->layers.size() != widths.size()) {
      fail(FormatErrorKind::kValidation, "QCROSS layer count disagrees with the header");
    }
    for (std::size_t l = 0; l < widths.size(); ++l) {
      if (file.qcross->layers[l].mean_q.size() != widths[l]) {
        fail(FormatErrorKind::kValidation, "QCROSS width disagrees with the header");
      }
    }
  }
  try {
    file.stats.validate();
  } catch (const Error& e) {
    fail(FormatErrorKind::kValidation, e.what());
  }
  return file;
}

void write_stats(const StatsFile& file, const fs::path& path) {
  write_file_atomic(path, encode_stats(file));
}

StatsFile read_stats(const fs::path& path) { return decode_stats(read_file_bytes(path)); }

std::vector<std::vector<float>> wdown_abs_of(const TinyModel& model) {
  std::vector<std::vector<float>> out;
  for (const auto& layer : model.layers) {
    const Matrix& w = layer.w_down;
    std::vector<float> t(static_cast<std::size_t>(w.rows() * w.cols()));
    for (Eigen::Index i = 0; i < w.cols(); ++i) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        t[static_cast<std::size_t>(i * w.rows() + r)] = static_cast<float>(std::abs(w(r, i)));
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Matrix> wdown_from_abs(const StatsFile& file) {
  if (file.wdown_abs.empty()) throw_invalid("stats file has no WDOWN_ABS section");
  const auto widths = file.stats.widths();
  const auto d = static_cast<Eigen::Index>(file.d_model);
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    Matrix w(d, static_cast<Eigen::Index>(widths[l]));
    for (Eigen::Index i = 0; i < w.cols(); ++i) {
      for (Eigen::Index r = 0; r < d; ++r) {
        w(r, i) = static_cast<double>(file.wdown_abs[l][static_cast<std::size_t>(i * d + r)]);
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masks

std::string encode_mask(const PruneMask& mask) {
  if (mask.pruned.size() != mask.widths.size()) throw_invalid("mask: widths missing");
  std::string out = "# nodelens prune mask\n";
  out += "format_version=" + std::to_string(kMaskVersion) + "\n";
  out += std::string("tool_version=") + tool_version() + "\n";
  if (!mask.fingerprint_missing) out += "fingerprint=" + hex64(mask.fingerprint) + "\n";
  out += "method=" + mask.method + "\n";
  out += "aggregation=" + mask.aggregation + "\n";
  out += "sparsity=" + format_double(mask.sparsity) + "\n";
  out += "caps=" + join(mask.caps, format_double) + "\n";
  out += "seed=" + std::to_string(mask.seed) + "\n";
  out += "hit_rate=" + (mask.hit_rate ? format_double(*mask.hit_rate) : std::string("none")) + "\n";
  out += "widths=" + index_list(mask.widths) + "\n";
  out += "total_pruned=" + std::to_string(mask.total_pruned()) + "\n";
  for (std::size_t l = 0; l < mask.pruned.size(); ++l) {
    out += "layer." + std::to_string(l) + "=" + index_list(mask.pruned[l]) + "\n";
  }
  if (mask.supernode_reference) {
    for (std::size_t l = 0; l < mask.supernode_reference->size(); ++l) {
      out += "supernodes." + std::to_string(l) + "=" +
             index_list((*mask.supernode_reference)[l]) + "\n";
    }
  }
  return out;
}

PruneMask decode_mask(const std::string& text, std::vector<std::string>* warnings) {
  const KeyValues kv = parse_key_values(text);
  const auto version = parse_u64(require(kv, "format_version"));
  if (version != kMaskVersion) {
    fail(FormatErrorKind::kVersionMismatch,
         "mask format version " + std::to_string(version) + " is not supported");
  }
  PruneMask mask;
  if (const auto it = kv.find("fingerprint"); it != kv.end()) {
    mask.fingerprint = parse_u64(it->second, 16);
  } else {
    mask.fingerprint_missing = true;
    if (warnings) warnings->push_back("mask has no model fingerprint; loading without a model check");
  }
  mask.method = require(kv, "method");
  mask.aggregation = kv.count("aggregation") ? kv.at("aggregation") : std::string();
  mask.sparsity = parse_double(require(kv, "sparsity"));
  for (const auto& c : split(require(kv, "caps"), ',')) mask.caps.push_back(parse_double(c));
  mask.seed = parse_u64(require(kv, "seed"));
  if (const std::string& h = require(kv, "hit_rate"); h != "none") mask.hit_rate = parse_double(h);
  mask.widths = parse_index_list(require(kv, "widths"));
  mask.pruned.resize(mask.widths.size());

  auto read_layers = [&](const std::string& prefix, ChannelSets& into) {
    for (std::size_t l = 0; l < mask.widths.size(); ++l) {
      into[l] = parse_index_list(require(kv, prefix + std::to_string(l)));
      for (std::size_t k = 0; k < into[l].size(); ++k) {
        if (into[l][k] >= mask.widths[l]) {
          fail(FormatErrorKind::kValidation,
               prefix + std::to_string(l) + ": index " + std::to_string(into[l][k]) +
                   " out of range for width " + std::to_string(mask.widths[l]));
        }
        if (k > 0 && into[l][k] <= into[l][k - 1]) {
          fail(FormatErrorKind::kValidation,
               prefix + std::to_string(l) + ": indices must be sorted and unique");
        }
      }
    }
  };
  read_layers("layer.", mask.pruned);
  if (mask.caps.size() != mask.widths.size()) {
    fail(FormatErrorKind::kValidation, "caps must list one value per layer");
  }
  if (kv.count("total_pruned") && parse_u64(kv.at("total_pruned")) != mask.total_pruned()) {
    fail(FormatErrorKind::kValidation, "total_pruned disagrees with the layer lists");
  }
  if (kv.count("supernodes.0")) {
    ChannelSets ref(mask.widths.size());
    read_layers("supernodes.", ref);
    mask.supernode_reference = ref;
    if (mask.hit_rate) {
      SupernodeSet s;
      s.layers = ref;
      const double expected = s.total() > 0 ? hit_rate(mask.pruned, s) : 0.0;
      if (std::abs(expected - *mask.hit_rate) > 1e-12) {
        fail(FormatErrorKind::kValidation,
             "hit_rate " + format_double(*mask.hit_rate) +
                 " disagrees with the embedded supernode set (" + format_double(expected) + ")");
      }
    }
  }
  return mask;
}

void write_mask(const PruneMask& mask, const fs::path& path) {
  write_text_atomic(path, encode_mask(mask));
}

PruneMask read_mask(const fs::path& path, std::vector<std::string>* warnings) {
  const auto bytes = read_file_bytes(path);
  return decode_mask(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                     warnings);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::byte> encode_checkpoint(const Checkpoint& checkpoint) {
  const TinyModel& model = checkpoint.model;
  const ModelConfig& c = model.config;
  Writer w;
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  for (std::uint64_t v : {std::uint64_t{c.d_model}, std::uint64_t{c.m_ffn},
                          std::uint64_t{c.n_layers}, std::uint64_t{c.n_heads},
                          std::uint64_t{c.vocab_size}, std::uint64_t{c.max_seq}, c.seed}) {
    w.u64(v);
  }
  w.u64(checkpoint.step);
  for (std::size_t m : model.ffn_widths()) w.u64(m);
  const auto tensors = model.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.text(t.name);
    w.u64(t.rows);
    w.u64(t.cols);
    for (double v : t.data) w.f64(v);
  }
  w.u32(crc32(w.view(0)));
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  if (bytes.size() < 8) fail(FormatErrorKind::kTruncated, "checkpoint truncated");
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin(),
                  [](char c, std::byte b) { return b == static_cast<std::byte>(c); })) {
    fail(FormatErrorKind::kBadMagic, "not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = load_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    fail(FormatErrorKind::kVersionMismatch,
         "checkpoint version " + std::to_string(version) + " is not supported");
  }
  if (bytes.size() < 12) fail(FormatErrorKind::kTruncated, "checkpoint truncated");
  const auto body = bytes.first(bytes.size() - 4);
  if (load_u32(bytes, bytes.size() - 4) != crc32(body)) {
    fail(FormatErrorKind::kChecksum, "checkpoint checksum mismatch");
  }
  Reader r(body);
  r.take(8, "magic");
  ModelConfig c;
  c.d_model = r.u64("config");
  c.m_ffn = r.u64("config");
  c.n_layers = r.u64("config");
  c.n_heads = r.u64("config");
  c.vocab_size = r.u64("config");
  c.max_seq = r.u64("config");
  c.seed = r.u64("config");
  try {
    c.validate();
  } catch (const Error& e) {
    fail(FormatErrorKind::kValidation, e.what());
  }
  if (c.n_layers > 4096) fail(FormatErrorKind::kValidation, "implausible layer count");
  Checkpoint out;
  out.step = r.u64("step");
  TinyModel model = init_model(c);
  std::vector<std::size_t> widths(c.n_layers);
  for (auto& m : widths) {
    m = r.u64("widths");
    if (m == 0 || m > c.m_ffn) fail(FormatErrorKind::kValidation, "invalid FFN width");
  }
  // Shrink pruned layers before loading tensors into them.
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto m = static_cast<Eigen::Index>(widths[l]);
    const auto d = static_cast<Eigen::Index>(c.d_model);
    model.layers[l].w_gate.resize(m, d);
    model.layers[l].w_up.resize(m, d);
    model.layers[l].w_down.resize(d, m);
  }
  auto tensors = model.tensors();
  if (r.u32("tensor count") != tensors.size()) {
    fail(FormatErrorKind::kValidation, "checkpoint tensor count mismatch");
  }
  for (auto& t : tensors) {
    const std::uint32_t name_len = r.u32("tensor name");
    const auto raw = r.take(name_len, "tensor name");
    const std::string name(reinterpret_cast<const char*>(raw.data()), raw.size());
    if (name != t.name) fail(FormatErrorKind::kValidation, "expected tensor " + t.name + ", found " + name);
    if (r.u64("rows") != t.rows || r.u64("cols") != t.cols) {
      fail(FormatErrorKind::kValidation, "tensor " + name + " has the wrong shape");
    }
    for (double& v : t.data) v = r.f64("tensor data");
  }
  if (r.remaining() != 0) fail(FormatErrorKind::kValidation, "trailing bytes in checkpoint");
  out.model = std::move(model);
  return out;
}

void write_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
  write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint read_checkpoint(const fs::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Files

void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorKind::kIo, "failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorKind::kIo, "cannot move output into place at " + path.string());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::vector<std::byte> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] =
      std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::scientific, 16);
  if (ec != std::errc()) throw_invalid("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    fail(FormatErrorKind::kValidation, "not a number: '" + text + "'");
  }
  return v;
}

}  // namespace nodelens
