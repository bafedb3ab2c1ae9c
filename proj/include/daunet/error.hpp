#pragma once

#include <stdexcept>
#include <string>

namespace daunet {

// Base of everything the library throws for bad input or bad state.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree. The message names the offending dimension or
// parameter.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read or written. The message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

// A file was readable but its contents are malformed (bad magic, truncated,
// unsupported version).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given masks (e.g. empty boundary).
class MetricError : public Error {
 public:
  using Error::Error;
};

// Training diverged. Carries the position of the failure.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch, int batch, double loss)
      : Error(what), epoch_(epoch), batch_(batch), loss_(loss) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }
  double loss() const { return loss_; }

 private:
  int epoch_;
  int batch_;
  double loss_;
};

}  // namespace daunet
