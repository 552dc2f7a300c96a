#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "deftri/common.hpp"

namespace deftri {

// Dense row-major 2-D tensor. Training instantiates T = float, tests T = double.
template <typename T>
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<T> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) throw InternalError("tensor shape/data mismatch");
  }

  std::size_t size() const { return data.size(); }
  T& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  T* row_ptr(std::size_t r) { return data.data() + r * cols; }
  const T* row_ptr(std::size_t r) const { return data.data() + r * cols; }

  bool same_shape(const Tensor& other) const { return rows == other.rows && cols == other.cols; }

  std::string shape_str() const {
    return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.rows, other.cols); }

  bool all_finite() const {
    T probe = T(0);
    for (const T x : data) probe += x * T(0);  // NaN/Inf poison the accumulator
    return probe == T(0);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

namespace blas {

// C += A(m x k) * B(k x n)
template <typename T>
void gemm_nn(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict__ crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      const T* __restrict__ brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C += A(m x k) * B(n x k)^T. Large B blocks are transposed into scratch and
// routed through the streaming kernel; small ones use an eight-lane dot
// product that vectorizes without reassociating a strict reduction. Both
// paths have a fixed summation order, so results stay deterministic.
template <typename T>
void gemm_nt(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, std::size_t m,
             std::size_t k, std::size_t n) {
  if (k >= 32 && k * n >= 4096 && m >= 16) {
    static thread_local std::vector<T> scratch;
    scratch.assign(k * n, T(0));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
    gemm_nn(a, scratch.data(), c, m, k, n);
    return;
  }
  constexpr std::size_t kLanes = 8;
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict__ arow = a + i * k;
    T* __restrict__ crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* __restrict__ brow = b + j * k;
      T lanes[kLanes] = {};
      const std::size_t kmain = k - k % kLanes;
      for (std::size_t p = 0; p < kmain; p += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += arow[p + l] * brow[p + l];
      T dot = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
              ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
      for (std::size_t p = kmain; p < k; ++p) dot += arow[p] * brow[p];
      crow[j] += dot;
    }
  }
}

// C += A(m x k)^T * B(m x n), giving (k x n)
template <typename T>
void gemm_tn(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict__ brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      T* __restrict__ crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace blas

}  // namespace deftri
