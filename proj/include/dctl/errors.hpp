#pragma once

#include <stdexcept>
#include <string>

namespace dctl {

/// Raised when a factorization or inner solver cannot produce a finite result.
class numerical_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Dataset text/binary parse failure. Row and column are 1-based; 0 means
/// "not applicable".
class parse_error : public std::runtime_error {
public:
  parse_error(const std::string& what, std::size_t row, std::size_t col)
      : std::runtime_error(what), row_(row), col_(col) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

private:
  std::size_t row_;
  std::size_t col_;
};

enum class load_error_kind { io, truncated, bad_magic, unsupported_version, checksum_mismatch, bad_payload };

inline const char* to_string(load_error_kind k) {
  switch (k) {
    case load_error_kind::io: return "io";
    case load_error_kind::truncated: return "truncated";
    case load_error_kind::bad_magic: return "bad magic";
    case load_error_kind::unsupported_version: return "unsupported version";
    case load_error_kind::checksum_mismatch: return "checksum mismatch";
    case load_error_kind::bad_payload: return "bad payload";
  }
  return "unknown";
}

class model_load_error : public std::runtime_error {
public:
  model_load_error(load_error_kind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  load_error_kind kind() const noexcept { return kind_; }

private:
  load_error_kind kind_;
};

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail
}  // namespace dctl
