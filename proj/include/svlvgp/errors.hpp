#pragma once

#include <stdexcept>
#include <string>

namespace svlvgp {

// Thrown when a matrix stays indefinite after the jitter ladder is exhausted.
struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN or Inf showed up where a finite value is required.
struct NonFinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Qualitative input coded outside [1, levels] for its variable.
struct LevelOutOfRange : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Malformed or inconsistent external data (CSV, JSON artifact, config).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every optimizer restart diverged or failed to factorize.
struct AllRestartsFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Natural-gradient step could not produce a valid covariance even after
// step halving.
struct StepRejected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Saved and reloaded model disagreed on probe predictions.
struct RoundTripMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace svlvgp
