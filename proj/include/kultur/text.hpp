#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "kultur/ids.hpp"

namespace kultur {

struct MissingField : Error {
  explicit MissingField(std::string name)
      : Error("missing field: " + name), field(std::move(name)) {}
  std::string field;
};

// NFC, full case folding, whitespace runs collapsed to one space, ends
// trimmed. Punctuation is kept.
inline std::string normalize_text(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");

  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  u = nfc->normalize(u, status);
  u.foldCase();
  u = nfc->normalize(u, status);
  if (U_FAILURE(status)) throw Error("ICU normalization failed");

  icu::UnicodeString out;
  bool pending_space = false;
  for (int32_t i = 0; i < u.length();) {
    UChar32 c = u.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = !out.isEmpty();
      continue;
    }
    if (pending_space) out.append(UChar32{' '});
    pending_space = false;
    out.append(c);
  }
  std::string result;
  out.toUTF8String(result);
  return result;
}

// 64-bit FNV-1a. Fields are length-prefixed so ("ab","c") != ("a","bc").
class StableHasher {
 public:
  StableHasher& add(std::string_view field) {
    std::uint64_t n = field.size();
    for (int i = 0; i < 8; ++i) byte(static_cast<unsigned char>(n >> (8 * i)));
    for (char c : field) byte(static_cast<unsigned char>(c));
    return *this;
  }

  std::uint64_t value() const { return state_; }

  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = digits[(state_ >> (4 * i)) & 0xF];
    return out;
  }

 private:
  void byte(unsigned char b) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string stable_hash_hex(std::string_view data) {
  StableHasher h;
  h.add(data);
  return h.hex();
}

// Replaces `{name}` placeholders (name = [a-z_]+) with values from `fields`.
// Unknown names raise MissingField; braces not forming a placeholder are
// copied through.
inline std::string substitute(std::string_view tmpl, const std::map<std::string, std::string>& fields) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      std::size_t j = i + 1;
      while (j < tmpl.size() && ((tmpl[j] >= 'a' && tmpl[j] <= 'z') || tmpl[j] == '_')) ++j;
      if (j < tmpl.size() && tmpl[j] == '}' && j > i + 1) {
        std::string name(tmpl.substr(i + 1, j - i - 1));
        auto it = fields.find(name);
        if (it == fields.end()) throw MissingField(name);
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out += tmpl[i++];
  }
  return out;
}

inline bool contains_placeholder(std::string_view tmpl, std::string_view name) {
  std::string needle = "{" + std::string(name) + "}";
  return tmpl.find(needle) != std::string_view::npos;
}

inline std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n\f\v";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline bool starts_with_icase(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    char a = s[i], b = prefix[i];
    if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
    if (b >= 'A' && b <= 'Z') b = static_cast<char>(b - 'A' + 'a');
    if (a != b) return false;
  }
  return true;
}

}  // namespace kultur
