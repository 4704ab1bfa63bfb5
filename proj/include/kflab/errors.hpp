#pragma once

#include <stdexcept>
#include <string>

namespace kflab {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad EnvSpec / ExperimentConfig / ArchConfig values. Message names the field.
struct ConfigError : Error {
  using Error::Error;
};

// Caller broke a precondition (stepping a done episode, mode mismatch, ...).
struct UsageError : Error {
  using Error::Error;
};

// Malformed file content; carries the offending line when known.
struct ParseError : Error {
  using Error::Error;
};

// File is syntactically fine but inconsistent (truncation, digest mismatch).
struct IntegrityError : Error {
  using Error::Error;
};

struct UnsupportedVersionError : Error {
  using Error::Error;
};

// Demo generation could not produce enough successful episodes.
struct GenerationError : Error {
  using Error::Error;
};

// Remote detector transport/protocol failure; carries the query tick.
struct DetectorError : Error {
  DetectorError(const std::string& msg, long long query_tick)
      : Error(msg), query_tick(query_tick) {}
  long long query_tick = -1;
};

struct TrainingError : Error {
  using Error::Error;
};

struct SamplingError : Error {
  using Error::Error;
};

struct AggregationError : Error {
  using Error::Error;
};

}  // namespace kflab
