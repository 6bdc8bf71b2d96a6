#pragma once

#include <stdexcept>
#include <string>

namespace f2v {

// User-facing failures (bad config, bad input files) map to CLI exit code 1;
// everything else derived from Error maps to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated precondition of a library call (shape mismatch, bad factor, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class MalformedSampleError : public Error {
 public:
  using Error::Error;
};

class InsufficientFramesError : public Error {
 public:
  InsufficientFramesError(std::string phase, std::size_t available, std::size_t needed)
      : Error("phase '" + phase + "' has " + std::to_string(available) +
              " frames, need at least " + std::to_string(needed)),
        phase_(std::move(phase)) {}
  const std::string& phase() const noexcept { return phase_; }

 private:
  std::string phase_;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace f2v
