#ifndef WGFH_ERROR_HPP
#define WGFH_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wgfh {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed expression text. `offset` is the byte offset of the offending token.
class ParseError : public Error {
public:
  ParseError(std::size_t offset, const std::string& message)
      : Error("syntax error at offset " + std::to_string(offset) + ": " + message),
        offset_(offset), detail_(message) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& detail() const noexcept { return detail_; }

private:
  std::size_t offset_;
  std::string detail_;
};

/// Expression evaluation failure (unbound variable or domain violation).
class EvalError : public Error {
public:
  enum class Kind { unbound_variable, domain };

  EvalError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

/// Invalid configuration or medium definition. `pointer` is a JSON pointer when known.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& message, std::string pointer = {})
      : Error(pointer.empty() ? message : pointer + ": " + message), pointer_(std::move(pointer)) {}

  const std::string& pointer() const noexcept { return pointer_; }

private:
  std::string pointer_;
};

/// Linear solver breakdown, loss of positivity and similar numerical failures.
class NumericalError : public Error {
public:
  using Error::Error;
};

}  // namespace wgfh

#endif  // WGFH_ERROR_HPP
