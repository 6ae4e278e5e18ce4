#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace kultur {

// Base class for every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidId : Error {
  using Error::Error;
};

namespace detail {

inline bool prefixed_digits(std::string_view s, char prefix) {
  if (s.size() < 2 || s.front() != prefix) return false;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] < '0' || s[i] > '9') return false;
  return true;
}

}  // namespace detail

// `Q` followed by decimal digits. Comparison is byte equality.
class EntityId {
 public:
  EntityId() = default;
  explicit EntityId(std::string value) : value_(std::move(value)) {
    if (!valid(value_)) throw InvalidId("invalid entity id: '" + value_ + "'");
  }

  static bool valid(std::string_view s) { return detail::prefixed_digits(s, 'Q'); }

  const std::string& str() const { return value_; }
  bool empty() const { return value_.empty(); }

  friend bool operator==(const EntityId&, const EntityId&) = default;
  friend std::strong_ordering operator<=>(const EntityId& a, const EntityId& b) {
    return a.value_ <=> b.value_;
  }
  friend std::ostream& operator<<(std::ostream& os, const EntityId& id) { return os << id.value_; }

 private:
  std::string value_;
};

// `P` followed by decimal digits.
class PropertyId {
 public:
  PropertyId() = default;
  explicit PropertyId(std::string value) : value_(std::move(value)) {
    if (!valid(value_)) throw InvalidId("invalid property id: '" + value_ + "'");
  }

  static bool valid(std::string_view s) { return detail::prefixed_digits(s, 'P'); }

  const std::string& str() const { return value_; }

  friend bool operator==(const PropertyId&, const PropertyId&) = default;
  friend std::strong_ordering operator<=>(const PropertyId& a, const PropertyId& b) {
    return a.value_ <=> b.value_;
  }
  friend std::ostream& operator<<(std::ostream& os, const PropertyId& id) { return os << id.value_; }

 private:
  std::string value_;
};

using LanguageCode = std::string;

// Lowercase BCP-47-style tag: a 2-3 letter primary subtag followed by
// optional `-`-separated lowercase alphanumeric subtags ("en", "zh-hans",
// "be-tarask").
inline bool valid_language_code(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] >= 'a' && s[i] <= 'z') ++i;
  if (i < 2 || i > 3) return false;
  while (i < s.size()) {
    if (s[i] != '-') return false;
    std::size_t start = ++i;
    while (i < s.size() && ((s[i] >= 'a' && s[i] <= 'z') || (s[i] >= '0' && s[i] <= '9'))) ++i;
    if (i == start) return false;
  }
  return true;
}

}  // namespace kultur

template <>
struct std::hash<kultur::EntityId> {
  std::size_t operator()(const kultur::EntityId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};

template <>
struct std::hash<kultur::PropertyId> {
  std::size_t operator()(const kultur::PropertyId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
