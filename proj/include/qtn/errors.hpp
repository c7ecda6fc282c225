#ifndef QTN_ERRORS_HPP
#define QTN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace qtn {

/// Tensor shapes that do not fit an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid model, loss, training or data configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Binary container (QTNW checkpoint / QTNS slice) decoding failures.
class FormatError : public std::runtime_error {
 public:
  enum class Kind {
    kBadMagic,
    kUnsupportedVersion,
    kBadDtype,
    kBadKind,
    kTruncated,
    kChecksum,
    kInvalidClass,
    kMalformed,
  };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Manifest and dataset content problems (missing files, split leakage, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system failures with the offending path in the message.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during optimization.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qtn

#endif  // QTN_ERRORS_HPP
