#pragma once

// Dense spectral reference for the graph-convolution operators. Used as an
// oracle at small n; never on the training path.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "graphfcn/errors.hpp"
#include "graphfcn/sparse.hpp"
#include "graphfcn/tensor.hpp"

namespace gfcn {

struct EigenSystem {
  std::vector<double> eigenvalues;  ///< ascending
  Tensor eigenvectors;              ///< columns orthonormal, column k ↔ eigenvalues[k]
};

/// First-order Chebyshev filter coefficients; theta1 is tied to −theta0.
struct FilterCoeffs {
  double theta0 = 1.0;
  double theta1() const noexcept { return -theta0; }
};

namespace detail {

inline void require_symmetric_nonnegative(const SparseMatrix& a, const char* op) {
  if (a.rows() != a.cols()) throw DimensionError(std::string(op) + ": adjacency must be square");
  if (!a.is_symmetric(1e-12)) throw ValidationError(std::string(op) + ": adjacency is not symmetric");
  for (const auto& e : a.entries()) {
    if (e.weight < 0.0) throw ValidationError(std::string(op) + ": negative edge weight");
  }
}

/// D^{-1/2} with the isolated-node convention D^{-1/2}_ii = 0.
inline std::vector<double> inv_sqrt_degree(const SparseMatrix& a, double self_loop) {
  std::vector<double> d(a.rows(), self_loop);
  for (const auto& e : a.entries()) d[e.row] += e.weight;
  for (auto& v : d) v = v > 0.0 ? 1.0 / std::sqrt(v) : 0.0;
  return d;
}

}  // namespace detail

/// L = I − D^{-1/2} A D^{-1/2}, dense.
inline Tensor normalized_laplacian(const SparseMatrix& a) {
  detail::require_symmetric_nonnegative(a, "normalized_laplacian");
  const auto dis = detail::inv_sqrt_degree(a, 0.0);
  Tensor l = Tensor::identity(a.rows());
  for (const auto& e : a.entries()) l.at(e.row, e.col) -= dis[e.row] * e.weight * dis[e.col];
  return l;
}

/// Cyclic Jacobi eigensolver for small symmetric matrices.
inline EigenSystem eigendecompose(const Tensor& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw DimensionError("eigendecompose expects a square matrix, got " + shape_str(m.shape()));
  }
  const std::size_t n = m.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-10) {
        throw ValidationError("eigendecompose: matrix is not symmetric at (" + std::to_string(i) +
                              "," + std::to_string(j) + ")");
      }

  Tensor a = m;
  Tensor v = Tensor::identity(n);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(s);
  };

  constexpr int kMaxSweeps = 100;
  int sweep = 0;
  while (off_norm() >= 1e-12) {
    if (++sweep > kMaxSweeps) throw NumericError("eigendecompose: Jacobi sweeps did not converge");
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a.at(x, x) < a.at(y, y); });
  EigenSystem es;
  es.eigenvectors = Tensor({n, n});
  for (std::size_t k = 0; k < n; ++k) {
    es.eigenvalues.push_back(a.at(order[k], order[k]));
    for (std::size_t i = 0; i < n; ++i) es.eigenvectors.at(i, k) = v.at(i, order[k]);
  }
  return es;
}

/// U · diag(λ) · Uᵀ.
inline Tensor reconstruct(const EigenSystem& es) {
  const std::size_t n = es.eigenvalues.size();
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        s += es.eigenvectors.at(i, k) * es.eigenvalues[k] * es.eigenvectors.at(j, k);
      out.at(i, j) = s;
    }
  return out;
}

/// Exact graph Fourier filtering U g(Λ) Uᵀ x.
inline Tensor spectral_filter(const Tensor& laplacian, const Tensor& x,
                              const std::function<double(double)>& g) {
  const EigenSystem es = eigendecompose(laplacian);
  const std::size_t n = es.eigenvalues.size();
  if (x.rank() != 1 || x.dim(0) != n) {
    throw DimensionError("spectral_filter: signal " + shape_str(x.shape()) + " on " +
                         std::to_string(n) + "-node graph");
  }
  std::vector<double> coeff(n, 0.0);  // g(Λ) Uᵀ x
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += es.eigenvectors.at(i, k) * x[i];
    coeff[k] = g(es.eigenvalues[k]) * s;
  }
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += es.eigenvectors.at(i, k) * coeff[k];
    out[i] = s;
  }
  return out;
}

/// θ₀ (I + D^{-1/2} A D^{-1/2}) x, computed directly on the sparse graph.
inline Tensor chebyshev_first_order(const SparseMatrix& a, const Tensor& x, double theta0) {
  detail::require_symmetric_nonnegative(a, "chebyshev_first_order");
  if (x.rank() != 1 || x.dim(0) != a.rows()) {
    throw DimensionError("chebyshev_first_order: signal " + shape_str(x.shape()) + " on " +
                         std::to_string(a.rows()) + "-node graph");
  }
  const auto dis = detail::inv_sqrt_degree(a, 0.0);
  Tensor out = x;
  for (const auto& e : a.entries()) out[e.row] += dis[e.row] * e.weight * dis[e.col] * x[e.col];
  for (auto& v : out.data()) v *= theta0;
  return out;
}

inline Tensor chebyshev_first_order(const SparseMatrix& a, const Tensor& x, FilterCoeffs coeffs) {
  return chebyshev_first_order(a, x, coeffs.theta0);
}

/// Â = D̂^{-1/2} (I + A) D̂^{-1/2} with D̂ the degree matrix of I + A.
inline SparseMatrix renormalized_propagation(const SparseMatrix& a) {
  detail::require_symmetric_nonnegative(a, "renormalized_propagation");
  std::vector<SparseEntry> triples;
  triples.reserve(a.nnz() + a.rows());
  for (const auto& e : a.entries()) {
    if (e.row == e.col) throw ValidationError("renormalized_propagation: adjacency has a self loop");
  }
  const auto dis = detail::inv_sqrt_degree(a, 1.0);
  for (std::size_t i = 0; i < a.rows(); ++i) triples.push_back({i, i, dis[i] * dis[i]});
  for (const auto& e : a.entries()) triples.push_back({e.row, e.col, dis[e.row] * e.weight * dis[e.col]});
  return SparseMatrix(a.rows(), a.cols(), std::move(triples));
}

/// Diagonal of D̂ = degree matrix of I + A.
inline std::vector<double> renormalized_degree(const SparseMatrix& a) {
  std::vector<double> d(a.rows(), 1.0);
  for (const auto& e : a.entries()) d[e.row] += e.weight;
  return d;
}

}  // namespace gfcn
