#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <string>
#include <vector>

#include "kultur/ids.hpp"

namespace kultur {

struct IoError : Error {
  using Error::Error;
};

struct Line {
  std::string text;
  std::size_t number = 0;   // 1-based
  bool terminated = false;  // ended with '\n' (false only for a final unterminated line)
  bool overflow = false;    // exceeded the reader's line cap; `text` is empty
};

// Chunked line reader. Memory held at any time is one chunk plus the current
// line, and lines longer than `max_line_bytes` are discarded (reported via
// `overflow`) instead of growing the buffer.
class LineReader {
 public:
  static constexpr std::size_t kDefaultMaxLine = std::size_t{256} << 20;
  static constexpr std::size_t kDefaultChunk = std::size_t{1} << 16;

  explicit LineReader(std::istream& in, std::size_t max_line_bytes = kDefaultMaxLine,
                      std::size_t chunk_bytes = kDefaultChunk)
      : in_(in), max_line_(max_line_bytes), chunk_(std::max<std::size_t>(chunk_bytes, 1)) {}

  bool next(Line& out) {
    out.text.clear();
    out.overflow = false;
    out.terminated = false;
    bool any = false;
    for (;;) {
      if (pos_ == len_ && !refill()) break;
      any = true;
      const char* begin = chunk_.data() + pos_;
      const char* end = chunk_.data() + len_;
      const char* nl = std::find(begin, end, '\n');
      append(out, begin, nl);
      pos_ = static_cast<std::size_t>(nl - chunk_.data());
      if (nl != end) {
        ++pos_;
        out.terminated = true;
        break;
      }
    }
    if (!any) return false;
    if (!out.text.empty() && out.text.back() == '\r') out.text.pop_back();
    out.number = ++line_no_;
    return true;
  }

  // Largest amount of buffered bytes (chunk + pending line) seen so far.
  std::size_t peak_buffer_bytes() const { return peak_; }
  std::size_t bytes_read() const { return total_; }

 private:
  bool refill() {
    if (eof_) return false;
    in_.read(chunk_.data(), static_cast<std::streamsize>(chunk_.size()));
    std::streamsize got = in_.gcount();
    if (in_.bad()) throw IoError("read failure on input stream");
    if (got <= 0) {
      eof_ = true;
      return false;
    }
    if (in_.eof()) eof_ = true;
    pos_ = 0;
    len_ = static_cast<std::size_t>(got);
    total_ += len_;
    return true;
  }

  void append(Line& out, const char* b, const char* e) {
    if (out.overflow) return;
    std::size_t n = static_cast<std::size_t>(e - b);
    if (out.text.size() + n > max_line_) {
      out.overflow = true;
      out.text.clear();
      out.text.shrink_to_fit();
      return;
    }
    out.text.append(b, n);
    peak_ = std::max(peak_, chunk_.size() + out.text.size());
  }

  std::istream& in_;
  std::size_t max_line_;
  std::vector<char> chunk_;
  std::size_t pos_ = 0, len_ = 0;
  std::size_t line_no_ = 0;
  std::size_t peak_ = 0;
  std::size_t total_ = 0;
  bool eof_ = false;
};

}  // namespace kultur
