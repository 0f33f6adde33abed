#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ahstn {

// Shape or dimension disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Hyperparameter or argument outside its valid domain.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, failed factorizations, divergence.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files. The message carries the line number when known.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation not allowed in the object's current state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using WarningHandler = std::function<void(std::string_view)>;

// Non-fatal diagnostics (disconnected graphs, flagged forecasts) are routed
// here. The default handler writes to stderr.
void warn(std::string_view message);
WarningHandler set_warning_handler(WarningHandler handler);

}  // namespace ahstn
