#pragma once

#include <stdexcept>
#include <string>

namespace forge {

/// Base for every error the toolkit raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration, bad arguments, malformed inputs. CLI exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A request that cannot be satisfied by the available data (budget too
/// small, empty corpus cells). CLI exit code 3.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// A stage was asked to run before the stage producing its inputs. CLI exit
/// code 4.
class UpstreamMissingError : public Error {
 public:
  UpstreamMissingError(std::string stage, const std::string& what)
      : Error(what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace forge
