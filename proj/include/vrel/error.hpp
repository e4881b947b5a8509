#pragma once

#include <stdexcept>
#include <string>

namespace vrel {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class AxisError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class MissingTensorError : public Error {
 public:
  explicit MissingTensorError(const std::string& name)
      : Error("missing tensor '" + name + "'"), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed container or clip file.
class FormatError : public Error {
 public:
  enum class Kind {
    kBadMagic,
    kTruncated,
    kBadHeader,
    kOverlap,
    kOutOfBounds,
    kBadDtype,
    kFrameSize,
    kFrameCount,
    kDecode,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace vrel
