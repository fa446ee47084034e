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

#include "nodelens/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include "nodelens/common.hpp"

namespace nodelens {

std::vector<char32_t> utf8_decode(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    int extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      cp = lead & 0x1F;
      extra = 1;
    } else if ((lead & 0xF0) == 0xE0) {
      cp = lead & 0x0F;
      extra = 2;
    } else if ((lead & 0xF8) == 0xF0) {
      cp = lead & 0x07;
      extra = 3;
    } else {
      throw_invalid("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (extra > 0 && i + static_cast<std::size_t>(extra) >= text.size()) {
      throw_invalid("truncated UTF-8 sequence at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) {
        throw_invalid("invalid UTF-8 continuation at offset " +
                      std::to_string(i + k));
      }
      cp = (cp << 6) | (cont & 0x3F);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::string utf8_encode(const std::vector<char32_t>& codepoints) {
  std::string out;
  for (char32_t cp : codepoints) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

CharTokenizer::CharTokenizer(std::vector<char32_t> codepoints)
    : codepoints_(std::move(codepoints)) {
  std::sort(codepoints_.begin(), codepoints_.end());
  codepoints_.erase(std::unique(codepoints_.begin(), codepoints_.end()),
                    codepoints_.end());
}

CharTokenizer CharTokenizer::from_corpus(std::string_view utf8_text) {
  return CharTokenizer(utf8_decode(utf8_text));
}

TokenSequence CharTokenizer::encode(std::string_view utf8_text) const {
  TokenSequence tokens;
  for (char32_t cp : utf8_decode(utf8_text)) {
    auto it = std::lower_bound(codepoints_.begin(), codepoints_.end(), cp);
    if (it == codepoints_.end() || *it != cp) {
      throw_invalid("codepoint U+" + std::to_string(static_cast<unsigned>(cp)) +
                    " is not in the vocabulary");
    }
    tokens.push_back(static_cast<TokenId>(it - codepoints_.begin()));
  }
  return tokens;
}

std::string CharTokenizer::decode(const TokenSequence& tokens) const {
  std::vector<char32_t> cps;
  cps.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t >= codepoints_.size()) throw_invalid("token id out of vocabulary");
    cps.push_back(codepoints_[t]);
  }
  return utf8_encode(cps);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace nodelens
