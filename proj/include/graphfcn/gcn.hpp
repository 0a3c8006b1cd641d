#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "graphfcn/autodiff.hpp"
#include "graphfcn/errors.hpp"
#include "graphfcn/params.hpp"
#include "graphfcn/sparse.hpp"

namespace gfcn {

/// Renormalized propagation operator Â, kept sparse.
using PropagationMatrix = SparseMatrix;

/// Two-layer graph convolutional head. No biases.
struct GcnConfig {
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 64;
  std::size_t num_classes = 0;

  static constexpr std::size_t kLayers = 2;

  void validate() const {
    if (in_dim == 0 || hidden_dim == 0 || num_classes == 0) {
      throw ParameterError("gcn dimensions must be positive");
    }
  }
};

inline void init_gcn_params(const GcnConfig& cfg, std::uint64_t seed, ModelParams& params) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  params.add("gcn.theta1", glorot_uniform({cfg.in_dim, cfg.hidden_dim}, cfg.in_dim, cfg.hidden_dim, rng));
  params.add("gcn.theta2",
             glorot_uniform({cfg.hidden_dim, cfg.num_classes}, cfg.hidden_dim, cfg.num_classes, rng));
}

/// Â · X · Θ, optionally followed by relu. Evaluated as Â(XΘ).
inline Var gcn_layer(const PropagationMatrix& ahat, const Var& x, const Var& theta, bool apply_relu) {
  Var out = sparse_dense_matmul(ahat, matmul(x, theta));
  return apply_relu ? relu(out) : out;
}

/// Node logits: layer 1 with relu, layer 2 linear.
inline Var gcn_forward(const PropagationMatrix& ahat, const Var& annotations, const ModelParams& params,
                       const GcnConfig& cfg) {
  cfg.validate();
  const Var& t1 = params.at("gcn.theta1");
  const Var& t2 = params.at("gcn.theta2");
  if (annotations.value().rank() != 2 || annotations.shape()[1] != cfg.in_dim ||
      t1.shape() != Shape{cfg.in_dim, cfg.hidden_dim}) {
    throw DimensionError("gcn layer 1: annotations " + shape_str(annotations.shape()) + ", theta " +
                         shape_str(t1.shape()) + ", expected width " + std::to_string(cfg.in_dim));
  }
  if (t2.shape() != Shape{cfg.hidden_dim, cfg.num_classes}) {
    throw DimensionError("gcn layer 2: theta " + shape_str(t2.shape()) + " expected " +
                         shape_str({cfg.hidden_dim, cfg.num_classes}));
  }
  if (annotations.shape()[0] != ahat.rows()) {
    throw DimensionError("gcn layer 1: " + std::to_string(annotations.shape()[0]) + " annotation rows for " +
                         std::to_string(ahat.rows()) + "-node graph");
  }
  Var hidden = gcn_layer(ahat, annotations, t1, true);
  return gcn_layer(ahat, hidden, t2, false);
}

}  // namespace gfcn
