#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace magic {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Error hierarchy. The CLI maps each kind to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : IoError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Pointwise nonlinearity between convolution layers.
enum class Activation { Relu, Identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

inline double activate(Activation a, double v) { return a == Activation::Relu ? (v > 0.0 ? v : 0.0) : v; }
// Derivative evaluated at the pre-activation value.
inline double activate_grad(Activation a, double pre) { return a == Activation::Relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0; }
Matrix activate(Activation a, const Matrix& pre);
// grad_out * activation'(pre), elementwise.
Matrix activate_backward(Activation a, const Matrix& pre, const Matrix& grad_out);

// Worker count used by the parallel loops below. 1 means run inline.
void set_num_threads(int n);
int num_threads();

// Calls fn(i) for i in [begin, end). Each index must own its output so that
// results do not depend on the schedule.
void parallel_for(int begin, int end, const std::function<void(int)>& fn);

}  // namespace magic
