#include "csdenoise/tensor.hpp"

#include <cmath>

namespace csd {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

RTensor::RTensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (static_cast<int64_t>(data.size()) != shape_numel(shape))
    throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
}

bool RTensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double RTensor::min_value() const {
  double m = data.empty() ? 0.0 : data[0];
  for (double v : data) m = std::min(m, v);
  return m;
}

double RTensor::max_value() const {
  double m = data.empty() ? 0.0 : data[0];
  for (double v : data) m = std::max(m, v);
  return m;
}

RTensor randn(const Shape& s, std::mt19937_64& rng, double sigma) {
  RTensor t(s);
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

RTensor rand_uniform(const Shape& s, std::mt19937_64& rng, double lo, double hi) {
  RTensor t(s);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

RTensor trunc_normal(const Shape& s, std::mt19937_64& rng, double sigma) {
  RTensor t(s);
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : t.data) {
    do {
      v = dist(rng);
    } while (std::abs(v) > 2.0 * sigma);
  }
  return t;
}

}  // namespace csd
