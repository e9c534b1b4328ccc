#include "cortexforge/tensor.hpp"

#include <cmath>

namespace cortexforge {

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::require_finite(const char* context) const {
  if (!all_finite()) {
    throw NumericError(std::string("non-finite value in tensor: ") + context);
  }
}

double dot64(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw GeometryError("dot64: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

double norm2_64(const Tensor& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) acc += double(t[i]) * double(t[i]);
  return std::sqrt(acc);
}

void axpy(Tensor& y, float alpha, const Tensor& x) {
  if (y.numel() != x.numel()) throw GeometryError("axpy: size mismatch");
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += alpha * x[i];
}

}  // namespace cortexforge
