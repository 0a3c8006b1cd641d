#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "graphfcn/graph.hpp"
#include "graphfcn/spectral.hpp"
#include "test_util.hpp"

using namespace gfcn;
using gfcn::testing::random_graph;
using gfcn::testing::random_tensor;

TEST(NormalizedLaplacian, TwoNodeAndIsolated) {
  SparseMatrix a(2, 2, {{0, 1, 1.0}, {1, 0, 1.0}});
  EXPECT_LE(max_abs_diff(normalized_laplacian(a), Tensor::matrix({{1, -1}, {-1, 1}})), 1e-15);
  EXPECT_EQ(normalized_laplacian(SparseMatrix(3, 3, {})), Tensor::identity(3));
}

TEST(NormalizedLaplacian, PathSpectrumIsZeroOneTwo) {
  SparseMatrix path(3, 3, {{0, 1, 1.0}, {1, 0, 1.0}, {1, 2, 1.0}, {2, 1, 1.0}});
  const auto es = eigendecompose(normalized_laplacian(path));
  EXPECT_NEAR(es.eigenvalues[0], 0.0, 1e-12);
  EXPECT_NEAR(es.eigenvalues[1], 1.0, 1e-12);
  EXPECT_NEAR(es.eigenvalues[2], 2.0, 1e-12);
}

TEST(NormalizedLaplacian, RejectsAsymmetric) {
  SparseMatrix a(2, 2, {{0, 1, 1.0}});
  EXPECT_THROW(normalized_laplacian(a), ValidationError);
}

TEST(Eigendecompose, IdentityAndDiagonal) {
  const auto id = eigendecompose(Tensor::identity(4));
  for (double v : id.eigenvalues) EXPECT_DOUBLE_EQ(v, 1.0);
  const auto d = eigendecompose(Tensor::matrix({{3, 0}, {0, 1}}));
  EXPECT_DOUBLE_EQ(d.eigenvalues[0], 1.0);
  EXPECT_DOUBLE_EQ(d.eigenvalues[1], 3.0);
  EXPECT_DOUBLE_EQ(std::abs(d.eigenvectors.at(1, 0)), 1.0);
  EXPECT_DOUBLE_EQ(std::abs(d.eigenvectors.at(0, 1)), 1.0);
}

TEST(Eigendecompose, RandomSymmetricReconstruction) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor r = random_tensor({6, 6}, rng);
    Tensor m({6, 6});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) m.at(i, j) = r.at(i, j) + r.at(j, i);
    const auto es = eigendecompose(m);
    EXPECT_LE(max_abs_diff(reconstruct(es), m), 1e-8);
    EXPECT_LE(max_abs_diff(dense_matmul(transpose(es.eigenvectors), es.eigenvectors), Tensor::identity(6)), 1e-8);
    EXPECT_TRUE(std::is_sorted(es.eigenvalues.begin(), es.eigenvalues.end()));
  }
}

TEST(Eigendecompose, RejectsAsymmetric) {
  EXPECT_THROW(eigendecompose(Tensor::matrix({{1, 2}, {0, 1}})), ValidationError);
  EXPECT_THROW(eigendecompose(Tensor({2, 3})), DimensionError);
}

TEST(SpectralFilter, IdentityAndLaplacianFilters) {
  std::mt19937_64 rng(2);
  const auto a = random_graph(6, 0.5, rng, true);
  const Tensor l = normalized_laplacian(a);
  const Tensor x = random_tensor({6}, rng);
  EXPECT_LE(max_abs_diff(spectral_filter(l, x, [](double) { return 1.0; }), x), 1e-8);
  const Tensor lx = dense_matmul(l, x.reshaped({6, 1})).reshaped({6});
  EXPECT_LE(max_abs_diff(spectral_filter(l, x, [](double lam) { return lam; }), lx), 1e-8);
}

TEST(ChebyshevFirstOrder, TrivialCases) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({5}, rng);
  Tensor scaled = x;
  for (auto& v : scaled.data()) v *= 2.5;
  EXPECT_EQ(chebyshev_first_order(SparseMatrix(5, 5, {}), x, 2.5), scaled);
  const auto a = random_graph(5, 0.6, rng);
  EXPECT_EQ(chebyshev_first_order(a, x, 0.0), Tensor({5}));
  EXPECT_EQ(FilterCoeffs{0.7}.theta1(), -0.7);
}

TEST(ChebyshevFirstOrder, MatchesSpectralOracleAndAlgebraicForm) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> size(2, 16);
  std::uniform_real_distribution<double> theta(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = trial == 0 ? 6 : size(rng);
    const auto a = random_graph(n, 0.4, rng, trial % 2 == 0);
    const Tensor x = random_tensor({n}, rng);
    const double t0 = theta(rng);
    const Tensor fast = chebyshev_first_order(a, x, t0);
    const Tensor l = normalized_laplacian(a);
    const Tensor spectral = spectral_filter(l, x, [t0](double lam) { return t0 * (2.0 - lam); });
    Tensor two_i_minus_l = Tensor::identity(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) two_i_minus_l.at(i, j) = t0 * ((i == j ? 2.0 : 0.0) - l.at(i, j));
    const Tensor algebraic = dense_matmul(two_i_minus_l, x.reshaped({n, 1})).reshaped({n});
    EXPECT_LE(max_abs_diff(fast, spectral), 1e-8);
    EXPECT_LE(max_abs_diff(fast, algebraic), 1e-12);
  }
}

TEST(RenormalizedPropagation, HandComputedCases) {
  const auto single = renormalized_propagation(SparseMatrix(1, 1, {}));
  EXPECT_EQ(single.to_dense(), Tensor::matrix({{1}}));
  const auto two = renormalized_propagation(SparseMatrix(2, 2, {{0, 1, 1.0}, {1, 0, 1.0}}));
  EXPECT_LE(max_abs_diff(two.to_dense(), Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}})), 1e-15);
}

TEST(RenormalizedPropagation, RejectsSelfLoops) {
  EXPECT_THROW(renormalized_propagation(SparseMatrix(2, 2, {{0, 0, 1.0}})), ValidationError);
}

TEST(RenormalizedPropagation, SpectrumAndDominantEigenvector) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8;
    const auto a = random_graph(n, 0.3, rng, true);
    const auto ahat = renormalized_propagation(a);
    ASSERT_TRUE(ahat.is_symmetric(1e-15));
    const auto es = eigendecompose(ahat.to_dense());
    EXPECT_GE(es.eigenvalues.front(), -1.0 - 1e-8);
    EXPECT_NEAR(es.eigenvalues.back(), 1.0, 1e-8);
    // Dominant eigenvector ∝ D̂^{1/2}·1.
    const auto deg = renormalized_degree(a);
    double norm = 0.0;
    for (double d : deg) norm += d;
    norm = std::sqrt(norm);
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += es.eigenvectors.at(i, n - 1) * std::sqrt(deg[i]) / norm;
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-8);
  }
}

// D̂^{-1/2}·Â·D̂^{1/2} = D̂^{-1}(I+A).
TEST(RenormalizedPropagation, SimilarityTransformIsRowStochastic) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + trial % 10;
    const auto a = random_graph(n, 0.4, rng);
    const auto ahat = renormalized_propagation(a);
    const auto deg = renormalized_degree(a);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (const auto& e : ahat.row(i)) s += e.weight * std::sqrt(deg[e.col]) / std::sqrt(deg[i]);
      EXPECT_NEAR(s, 1.0, 1e-10);
    }
  }
}

TEST(Laplacian, SpectrumWithinZeroTwo) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> size(1, 16);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = size(rng);
    const auto es = eigendecompose(normalized_laplacian(random_graph(n, 0.35, rng)));
    EXPECT_GE(es.eigenvalues.front(), -1e-8);
    EXPECT_LE(es.eigenvalues.back(), 2.0 + 1e-8);
  }
}

TEST(OverSmoothing, RepeatedPropagationConvergesToDegreeProfile) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> size(2, 10);
  std::uniform_real_distribution<double> pos(0.1, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = size(rng);
    const auto a = gfcn::testing::random_connected_graph(n, 0.5, 0.5, rng);
    const auto ahat = renormalized_propagation(a);
    Tensor x({n});
    for (auto& v : x.data()) v = pos(rng);
    for (int k = 0; k < 200; ++k) x = ahat.multiply(x);
    const auto deg = renormalized_degree(a);
    const double ref = x[0] / std::sqrt(deg[0]);
    for (std::size_t i = 1; i < n; ++i) EXPECT_NEAR(x[i] / std::sqrt(deg[i]), ref, 1e-6 * std::abs(ref));
  }
}

// Distance to the dominant-eigenvector projection shrinks at least as fast as
// |λ₂|^k, including weakly connected chains that are far from converged at 200.
TEST(OverSmoothing, ResidualBoundedBySecondEigenvalue) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> size(2, 10);
  std::uniform_real_distribution<double> pos(0.1, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = size(rng);
    const auto a = random_graph(n, 0.2, rng, true);
    const auto ahat = renormalized_propagation(a);
    const auto es = eigendecompose(ahat.to_dense());
    double lambda2 = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) lambda2 = std::max(lambda2, std::abs(es.eigenvalues[i]));
    Tensor x({n});
    for (auto& v : x.data()) v = pos(rng);
    double x0 = 0.0, c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x0 += x[i] * x[i];
      c += x[i] * es.eigenvectors.at(i, n - 1);
    }
    for (int k = 0; k < 200; ++k) x = ahat.multiply(x);
    double resid = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = x[i] - c * es.eigenvectors.at(i, n - 1);
      resid += r * r;
    }
    EXPECT_LE(std::sqrt(resid), std::pow(lambda2, 200) * std::sqrt(x0) + 1e-10);
  }
}

TEST(Spectral, GridAdjacencyIsValidInput) {
  const auto a = build_adjacency(4, 4, 4, 1.0);
  const auto es = eigendecompose(normalized_laplacian(a));
  EXPECT_NEAR(es.eigenvalues.front(), 0.0, 1e-10);
}
