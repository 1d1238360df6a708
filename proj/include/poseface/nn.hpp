#pragma once

#include <cmath>
#include <vector>

#include "poseface/rng.hpp"
#include "poseface/tensor.hpp"

namespace poseface {

// Affine layer y = x W + b with W stored input-major (in_dim x out_dim).
struct DenseLayer {
  Tensor weight;
  Tensor bias;
};

// Scaled uniform init with bound sqrt(6 / (fan_in + fan_out)); bias starts at
// zero.
inline DenseLayer make_dense(std::size_t in_dim, std::size_t out_dim, Rng& rng,
                             bool requires_grad = true) {
  double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  std::vector<double> w(in_dim * out_dim);
  for (auto& x : w) x = rng.next_uniform(-bound, bound);
  DenseLayer layer;
  layer.weight = Tensor::matrix(in_dim, out_dim, std::move(w), requires_grad);
  layer.bias = Tensor::zeros({out_dim}, requires_grad);
  return layer;
}

inline Tensor dense_forward(Tape& tape, const DenseLayer& layer, const Tensor& x) {
  return tape.add_row_vector(tape.matmul(x, layer.weight), layer.bias);
}

// Matrix whose columns are independent random unit vectors.
inline Tensor random_unit_columns(std::size_t rows, std::size_t cols, Rng& rng,
                                  bool requires_grad = true) {
  std::vector<double> w(rows * cols);
  for (std::size_t j = 0; j < cols; ++j) {
    auto col = rng.unit_vector(rows);
    for (std::size_t i = 0; i < rows; ++i) w[i * cols + j] = col[i];
  }
  return Tensor::matrix(rows, cols, std::move(w), requires_grad);
}

// Matrix with mutually orthonormal columns (cols <= rows), built by
// Gram-Schmidt over independent gaussian draws.
inline Tensor random_orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng,
                                         bool requires_grad = true) {
  std::vector<std::vector<double>> basis;
  basis.reserve(cols);
  while (basis.size() < cols) {
    std::vector<double> v = rng.gaussian_vector(rows);
    for (const auto& u : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < rows; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < rows; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;  // rare degenerate draw, redo
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  std::vector<double> w(rows * cols);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < rows; ++i) w[i * cols + j] = basis[j][i];
  }
  return Tensor::matrix(rows, cols, std::move(w), requires_grad);
}

}  // namespace poseface
