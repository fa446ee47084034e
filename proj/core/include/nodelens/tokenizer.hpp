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

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nodelens {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

/// Character-level vocabulary over Unicode codepoints, sorted ascending.
class CharTokenizer {
 public:
  CharTokenizer() = default;
  explicit CharTokenizer(std::vector<char32_t> codepoints);

  /// Builds the vocabulary from every codepoint that occurs in `text`.
  static CharTokenizer from_corpus(std::string_view utf8_text);

  std::size_t vocab_size() const { return codepoints_.size(); }
  const std::vector<char32_t>& codepoints() const { return codepoints_; }

  /// Throws Error(kInvalidArgument) on codepoints outside the vocabulary.
  TokenSequence encode(std::string_view utf8_text) const;
  std::string decode(const TokenSequence& tokens) const;

 private:
  std::vector<char32_t> codepoints_;
};

std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(const std::vector<char32_t>& codepoints);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace nodelens
