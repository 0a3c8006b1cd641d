#pragma once

// Graph model over a backbone feature grid: one node per grid cell, edges to
// the l nearest cells weighted by a Gaussian kernel on grid distance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <queue>
#include <vector>

#include "graphfcn/autodiff.hpp"
#include "graphfcn/errors.hpp"
#include "graphfcn/labels.hpp"
#include "graphfcn/sparse.hpp"
#include "graphfcn/tensor.hpp"

namespace gfcn {

/// ceil(extent / stride): grid size covering a partially filled border cell.
inline std::size_t grid_extent(std::size_t extent, std::size_t stride) {
  if (stride == 0) throw ParameterError("grid_extent: stride must be positive");
  return (extent + stride - 1) / stride;
}

struct GraphConfig {
  std::size_t neighbors = 4;  ///< l, edges per node before symmetrization
  double sigma = 1.0;         ///< Gaussian kernel bandwidth in grid cells
};

struct GridGraph {
  std::size_t h = 0;
  std::size_t w = 0;
  Tensor annotations;  ///< |N|×S
  SparseMatrix adjacency;
  std::vector<Label> node_labels;
  std::size_t node_stride = 1;

  std::size_t num_nodes() const noexcept { return h * w; }
  std::size_t node_index(std::size_t row, std::size_t col) const { return row * w + col; }
  std::pair<std::size_t, std::size_t> node_position(std::size_t n) const { return {n / w, n % w}; }
};

/// Gaussian kernel weight for squared grid distance d2.
inline double gaussian_edge_weight(double d2, double sigma) {
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

/// Each node's l nearest other nodes by Euclidean distance on integer grid
/// coordinates, ordered by (distance, index). This is the directed kNN
/// relation before symmetrization.
inline std::vector<std::vector<std::size_t>> nearest_neighbors(std::size_t h, std::size_t w, std::size_t l) {
  const std::size_t n = h * w;
  if (n < 2) throw ParameterError("build_adjacency: need at least 2 nodes, got " + std::to_string(n));
  if (l < 1 || l >= n) {
    throw ParameterError("build_adjacency: neighbor count l=" + std::to_string(l) +
                         " must satisfy 1 <= l < " + std::to_string(n));
  }
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::pair<std::size_t, std::size_t>> cand;  // (d², index)
  cand.reserve(n);
  for (std::size_t a = 0; a < n; ++a) {
    const auto ar = static_cast<long>(a / w), ac = static_cast<long>(a % w);
    cand.clear();
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      const long dr = static_cast<long>(b / w) - ar, dc = static_cast<long>(b % w) - ac;
      cand.emplace_back(static_cast<std::size_t>(dr * dr + dc * dc), b);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(l), cand.end());
    out[a].reserve(l);
    for (std::size_t k = 0; k < l; ++k) out[a].push_back(cand[k].second);
  }
  return out;
}

/// Gaussian-weighted kNN adjacency, symmetrized by elementwise min: an edge
/// survives only when each endpoint is among the other's l nearest.
inline SparseMatrix build_adjacency(std::size_t h, std::size_t w, std::size_t l, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("build_adjacency: sigma must be positive and finite");
  }
  const auto knn = nearest_neighbors(h, w, l);
  const std::size_t n = h * w;
  std::vector<std::vector<char>> picked(n);
  for (std::size_t a = 0; a < n; ++a) {
    picked[a].assign(n, 0);
    for (auto b : knn[a]) picked[a][b] = 1;
  }
  std::vector<SparseEntry> triples;
  for (std::size_t a = 0; a < n; ++a) {
    for (auto b : knn[a]) {
      if (!picked[b][a]) continue;
      const double dr = static_cast<double>(b / w) - static_cast<double>(a / w);
      const double dc = static_cast<double>(b % w) - static_cast<double>(a % w);
      triples.push_back({a, b, gaussian_edge_weight(dr * dr + dc * dc, sigma)});
    }
  }
  return SparseMatrix(n, n, std::move(triples));
}

/// Node annotation rows: concat(f1[:,i,j], f2_up[:,i,j], i/(h−1), j/(w−1)).
/// The coordinate term is 0 along an axis of extent 1. Differentiable in f1
/// and f2_up.
inline Var build_node_annotations(const Var& f1, const Var& f2_up) {
  if (f1.value().rank() != 3 || f2_up.value().rank() != 3 || f1.shape()[1] != f2_up.shape()[1] ||
      f1.shape()[2] != f2_up.shape()[2]) {
    throw DimensionError("build_node_annotations: spatial mismatch between f1 " +
                         shape_str(f1.shape()) + " and f2_up " + shape_str(f2_up.shape()));
  }
  const std::size_t h = f1.shape()[1], w = f1.shape()[2];
  Tensor coords({h * w, 2});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      coords.at(i * w + j, 0) = h > 1 ? static_cast<double>(i) / static_cast<double>(h - 1) : 0.0;
      coords.at(i * w + j, 1) = w > 1 ? static_cast<double>(j) / static_cast<double>(w - 1) : 0.0;
    }
  return concat_columns({channels_to_rows(f1), channels_to_rows(f2_up), Var::constant(std::move(coords))});
}

inline Tensor build_node_annotations(const Tensor& f1, const Tensor& f2_up) {
  return build_node_annotations(Var::constant(f1), Var::constant(f2_up)).value();
}

/// Majority vote of each stride×stride cell; IGNORE pixels abstain, an
/// all-IGNORE cell yields IGNORE, ties go to the lowest class index.
/// Grid is ceil(H/stride) × ceil(W/stride), border cells use what exists.
inline std::vector<Label> pool_node_labels(const LabelMap& labels, std::size_t node_stride) {
  if (node_stride == 0) throw ParameterError("pool_node_labels: stride must be positive");
  if (labels.height < node_stride || labels.width < node_stride) {
    throw DimensionError("pool_node_labels: label map " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width) + " smaller than stride " +
                         std::to_string(node_stride));
  }
  const std::size_t gh = grid_extent(labels.height, node_stride);
  const std::size_t gw = grid_extent(labels.width, node_stride);
  std::vector<Label> out(gh * gw, kIgnoreLabel);
  std::vector<std::size_t> votes(256);
  for (std::size_t gi = 0; gi < gh; ++gi)
    for (std::size_t gj = 0; gj < gw; ++gj) {
      std::fill(votes.begin(), votes.end(), 0);
      const std::size_t r1 = std::min(labels.height, (gi + 1) * node_stride);
      const std::size_t c1 = std::min(labels.width, (gj + 1) * node_stride);
      for (std::size_t r = gi * node_stride; r < r1; ++r)
        for (std::size_t c = gj * node_stride; c < c1; ++c) {
          const Label v = labels.at(r, c);
          if (v != kIgnoreLabel) ++votes[v];
        }
      std::size_t best = 0;
      for (std::size_t k = 1; k < kIgnoreLabel; ++k)
        if (votes[k] > votes[best]) best = k;
      if (votes[best] > 0) out[gi * gw + gj] = static_cast<Label>(best);
    }
  return out;
}

/// Nodes within graph distance ≤ hops of node (BFS over nonzero entries),
/// including node itself, in ascending order.
inline std::vector<std::size_t> receptive_field(const SparseMatrix& adjacency, std::size_t node,
                                                std::size_t hops) {
  if (node >= adjacency.rows()) {
    throw ParameterError("receptive_field: node " + std::to_string(node) + " outside graph of " +
                         std::to_string(adjacency.rows()) + " nodes");
  }
  std::vector<std::size_t> depth(adjacency.rows(), static_cast<std::size_t>(-1));
  std::queue<std::size_t> frontier;
  depth[node] = 0;
  frontier.push(node);
  while (!frontier.empty()) {
    const std::size_t u = frontier.front();
    frontier.pop();
    if (depth[u] == hops) continue;
    for (const auto& e : adjacency.row(u)) {
      if (depth[e.col] == static_cast<std::size_t>(-1)) {
        depth[e.col] = depth[u] + 1;
        frontier.push(e.col);
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < depth.size(); ++v)
    if (depth[v] != static_cast<std::size_t>(-1)) out.push_back(v);
  return out;
}

/// Assemble the full graph model from the two aligned feature maps and the
/// pixel label map (which may be empty at inference).
inline GridGraph build_grid_graph(const Tensor& f1, const Tensor& f2_up, const LabelMap& labels,
                                  std::size_t node_stride, const GraphConfig& cfg) {
  GridGraph g;
  g.h = f1.dim(1);
  g.w = f1.dim(2);
  g.node_stride = node_stride;
  g.annotations = build_node_annotations(f1, f2_up);
  g.adjacency = build_adjacency(g.h, g.w, cfg.neighbors, cfg.sigma);
  if (labels.size()) {
    g.node_labels = pool_node_labels(labels, node_stride);
    if (g.node_labels.size() != g.num_nodes()) {
      throw DimensionError("label grid does not match feature grid");
    }
  }
  return g;
}

}  // namespace gfcn
