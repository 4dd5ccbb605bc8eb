#pragma once

#include <stdexcept>
#include <string>

namespace mgdecomp {

/// Invalid model data: malformed topology, bad parameters, ragged inputs.
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A subproblem admits no feasible solution.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A subproblem is unbounded below.
class UnboundedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mgdecomp
