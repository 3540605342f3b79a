#pragma once

#include <stdexcept>
#include <string>

namespace schedev {

// A schedule coefficient divided by a vanishing sigma(s) or alpha(s).
class SingularScheduleError : public std::runtime_error {
 public:
  explicit SingularScheduleError(const std::string& what) : std::runtime_error(what) {}
};

// Reverse integration produced a non-finite state.
class DivergedSamplerError : public std::runtime_error {
 public:
  DivergedSamplerError(const std::string& what, int step) : std::runtime_error(what), step(step) {}
  int step;
};

// Finite-volume transport step violates the CFL stability limit.
class InstabilityError : public std::runtime_error {
 public:
  InstabilityError(const std::string& what, int suggested_substeps)
      : std::runtime_error(what), suggested_substeps(suggested_substeps) {}
  int suggested_substeps;
};

// Training produced a non-finite loss.
class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(const std::string& what, int iteration)
      : std::runtime_error(what), iteration(iteration) {}
  int iteration;
};

// No path exists between the requested maze cells.
class ConnectivityError : public std::runtime_error {
 public:
  explicit ConnectivityError(const std::string& what) : std::runtime_error(what) {}
};

// A divergence strategy was requested that the flow cannot provide.
class StrategyError : public std::runtime_error {
 public:
  explicit StrategyError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace schedev
