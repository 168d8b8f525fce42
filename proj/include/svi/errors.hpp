#pragma once

#include <stdexcept>
#include <string>

namespace svi {

// Tensor shapes or sequence lengths that do not line up.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateRotation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateDisparity : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BehindCamera : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyCloud : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BadImuFrame : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StageOrderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed data, template, checkpoint or sequence files.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace svi
