#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace csd {

using Shape = std::vector<int64_t>;

// Thrown on dimension mismatches; message names the operation and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Contract violations (bad argument values, preconditions).
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input files. `offset` is the byte position of the first bad byte.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, size_t offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        offset(offset) {}
  size_t offset;
};

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major real tensor, float64 storage.
struct RTensor {
  Shape shape;
  std::vector<double> data;

  RTensor() = default;
  explicit RTensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {}
  RTensor(Shape s, std::vector<double> d);

  static RTensor zeros(const Shape& s) { return RTensor(s); }
  static RTensor full(const Shape& s, double v) { return RTensor(s, v); }
  static RTensor scalar(double v) { return RTensor(Shape{1}, v); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool same_shape(const RTensor& o) const { return shape == o.shape; }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  bool all_finite() const;
  double min_value() const;
  double max_value() const;
};

RTensor randn(const Shape& s, std::mt19937_64& rng, double sigma = 1.0);
RTensor rand_uniform(const Shape& s, std::mt19937_64& rng, double lo, double hi);
// Normal(0, sigma) resampled until within 2 sigma.
RTensor trunc_normal(const Shape& s, std::mt19937_64& rng, double sigma);

}  // namespace csd
