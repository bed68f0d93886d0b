#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "t2tlab/util.hpp"

namespace t2t {

using TokenSeq = std::vector<int>;

// Byte-level vocabulary with reserved special tokens.
//
// Id layout (a pure function of the construction inputs):
//   0..2                      PAD, EOS, SEP
//   3 .. 3+S-1                sentinels S_0 .. S_{S-1}
//   3+S .. 3+S+L-1            language codes, in the order given
//   byte_offset .. +255       raw bytes 0..255, byte_offset = 3+S+L
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kSep = 2;

  int sentinel_count = 0;
  std::vector<std::string> lang_codes;
  std::map<std::string, int> lang_ids;
  int byte_offset = 0;

  int size() const { return byte_offset + 256; }

  int sentinel(int i) const {
    check(i >= 0 && i < sentinel_count, "sentinel index ", i, " out of range [0,", sentinel_count, ")");
    return 3 + i;
  }
  bool is_sentinel(int id) const { return id >= 3 && id < 3 + sentinel_count; }
  int sentinel_index(int id) const {
    check(is_sentinel(id), "token ", id, " is not a sentinel");
    return id - 3;
  }

  int lang_id(const std::string& code) const {
    auto it = lang_ids.find(code);
    if (it == lang_ids.end()) fail("unknown language code \"", code, "\"");
    return it->second;
  }
  bool is_lang(int id) const {
    return id >= 3 + sentinel_count && id < 3 + sentinel_count + int(lang_codes.size());
  }
  const std::string& lang_code_of(int id) const {
    check(is_lang(id), "token ", id, " is not a language code");
    return lang_codes[size_t(id - 3 - sentinel_count)];
  }

  bool is_byte(int id) const { return id >= byte_offset && id < byte_offset + 256; }
  int byte_token(unsigned char b) const { return byte_offset + int(b); }
};

inline Vocab build_vocab(const std::vector<std::string>& lang_codes, int sentinel_count) {
  check(sentinel_count >= 1, "sentinel_count must be >= 1, got ", sentinel_count);
  check(!lang_codes.empty(), "lang_codes must be non-empty");
  Vocab v;
  v.sentinel_count = sentinel_count;
  v.lang_codes = lang_codes;
  for (size_t i = 0; i < lang_codes.size(); ++i) {
    check(!lang_codes[i].empty(), "empty language code at position ", i);
    auto [it, inserted] = v.lang_ids.emplace(lang_codes[i], 3 + sentinel_count + int(i));
    if (!inserted) fail("duplicate language code \"", lang_codes[i], "\"");
  }
  v.byte_offset = 3 + sentinel_count + int(lang_codes.size());
  return v;
}

inline TokenSeq encode(const Vocab& v, std::string_view text) {
  TokenSeq out;
  out.reserve(text.size());
  for (unsigned char b : text) out.push_back(v.byte_token(b));
  return out;
}

// Byte tokens decode to their bytes; specials render as bracketed markers
// ("<pad>", "<eos>", "<sep>", "<S_i>", "<2xx>").
inline std::string decode(const Vocab& v, const TokenSeq& t) {
  std::string out;
  out.reserve(t.size());
  for (int id : t) {
    check(id >= 0 && id < v.size(), "token id ", id, " out of range for vocab of size ", v.size());
    if (v.is_byte(id)) {
      out.push_back(char(id - v.byte_offset));
    } else if (id == Vocab::kPad) {
      out += "<pad>";
    } else if (id == Vocab::kEos) {
      out += "<eos>";
    } else if (id == Vocab::kSep) {
      out += "<sep>";
    } else if (v.is_sentinel(id)) {
      out += "<S_" + std::to_string(v.sentinel_index(id)) + ">";
    } else {
      out += "<2" + v.lang_code_of(id) + ">";
    }
  }
  return out;
}

}  // namespace t2t
