// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace gvqa {

// Exact GELU; the erf form keeps finite-difference gradient checks clean.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

// In-place stable softmax over a contiguous row.
inline void softmax_inplace(double* row, size_t n) {
  double mx = row[0];
  for (size_t i = 1; i < n; ++i) mx = row[i] > mx ? row[i] : mx;
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - mx);
    sum += row[i];
  }
  for (size_t i = 0; i < n; ++i) row[i] /= sum;
}

// y = W x for row-major W [rows][cols].
inline void matvec(const double* W, const double* x, double* y, size_t rows, size_t cols) {
  for (size_t r = 0; r < rows; ++r) {
    const double* wr = W + r * cols;
    double acc = 0.0;
    for (size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

// Backward of y = W x: accumulates dW += dy xᵀ and dx += Wᵀ dy.
inline void matvec_backward(const double* W, const double* x, const double* dy, double* dW,
                            double* dx, size_t rows, size_t cols) {
  for (size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    const double* wr = W + r * cols;
    double* dwr = dW + r * cols;
    for (size_t c = 0; c < cols; ++c) {
      dwr[c] += g * x[c];
      dx[c] += g * wr[c];
    }
  }
}

}  // namespace gvqa
