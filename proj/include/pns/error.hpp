#pragma once

#include <stdexcept>
#include <string>

namespace pns {

/// Error carrying a short machine-readable code alongside the message.
class PnsError : public std::runtime_error {
 public:
  PnsError(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Non-finite activations or losses.
class NumericalError : public PnsError {
 public:
  explicit NumericalError(const std::string& message)
      : PnsError("numerical", message) {}
};

class DimensionError : public PnsError {
 public:
  explicit DimensionError(const std::string& message)
      : PnsError("dimension", message) {}
};

}  // namespace pns
