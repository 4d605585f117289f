#pragma once

#include <stdexcept>
#include <string>

namespace piu {

// Configuration problems (bad/unknown keys, bad sweep specs). CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem problems (missing files, unwritable directories). CLI exit code 4.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Everything below is a runtime/numeric failure. CLI exit code 3.

struct NoAnchorFound : std::runtime_error {
  NoAnchorFound(const std::string& msg, double nearest)
      : std::runtime_error(msg), nearest_gap(nearest) {}
  double nearest_gap;  // smallest achievable |s_j - tau| over candidates
};

struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(const std::string& msg, long step_index)
      : std::runtime_error(msg), step(step_index) {}
  long step;
};

struct SingularSystem : std::runtime_error {
  explicit SingularSystem(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateGradient : std::runtime_error {
  explicit DegenerateGradient(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateSchedule : std::runtime_error {
  explicit DegenerateSchedule(const std::string& msg) : std::runtime_error(msg) {}
};

struct Unrecognizable : std::runtime_error {
  explicit Unrecognizable(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace piu
