#pragma once

#include <stdexcept>
#include <string>

namespace fedgp {

// File or wire-format violation; the message names the offending file.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values or failed factorizations inside numeric kernels.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Constrained solver could not reach a feasible point.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// Conditioning or scoring a client whose variance is numerically zero.
class DegenerateVarianceError : public std::runtime_error {
 public:
  explicit DegenerateVarianceError(const std::string& what)
      : std::runtime_error(what) {}
};

// No admissible candidate remained during a selection round.
class SelectionError : public std::runtime_error {
 public:
  explicit SelectionError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fedgp
