#pragma once

// Miniature FCN-16s-style encoder. `depth` conv/relu/pool blocks reach the
// node grid at stride s (features f1); one more block reaches stride 2s
// (features f2). The pixel head scores both scales with 1×1 convolutions,
// fuses them at stride s and upsamples to input resolution.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "graphfcn/autodiff.hpp"
#include "graphfcn/errors.hpp"
#include "graphfcn/graph.hpp"
#include "graphfcn/params.hpp"
#include "graphfcn/tensor.hpp"

namespace gfcn {

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t c1 = 32;
  std::size_t c2 = 64;
  std::size_t node_stride = 8;
  std::size_t num_classes = 4;

  void validate() const {
    if (in_channels == 0 || c1 == 0 || c2 == 0) throw ParameterError("backbone channel counts must be positive");
    if (num_classes < 2 || num_classes >= kIgnoreLabel) {
      throw ParameterError("num_classes must lie in [2, 254], got " + std::to_string(num_classes));
    }
    if (node_stride < 2 || !std::has_single_bit(node_stride)) {
      throw ParameterError("node_stride must be a power of two >= 2, got " + std::to_string(node_stride));
    }
  }

  /// Number of pooling blocks between the input and f1.
  std::size_t depth() const { return static_cast<std::size_t>(std::countr_zero(node_stride)); }

  /// Output channels of encoder block b (1-based; block depth()+1 yields f2).
  std::size_t block_channels(std::size_t b) const {
    if (b == depth() + 1) return c2;
    if (b == depth()) return c1;
    return std::min(c1, std::size_t{8} << (b - 1));
  }

  std::size_t min_extent() const { return 2 * node_stride; }
};

struct BackboneOutput {
  Var f1;            ///< c1 × ceil(H/s) × ceil(W/s)
  Var f2_up;         ///< c2 × ceil(H/s) × ceil(W/s)
  Var pixel_logits;  ///< num_classes × H × W
};

inline std::string conv_name(std::size_t block, const char* what) {
  return "backbone.conv" + std::to_string(block) + "." + what;
}

/// Glorot-uniform kernels, zero biases, reproducible from seed.
inline void init_backbone_params(const BackboneConfig& cfg, std::uint64_t seed, ModelParams& params) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::size_t cin = cfg.in_channels;
  for (std::size_t b = 1; b <= cfg.depth() + 1; ++b) {
    const std::size_t cout = cfg.block_channels(b);
    params.add(conv_name(b, "weight"), glorot_uniform({cout, cin, 3, 3}, cin * 9, cout * 9, rng));
    params.add(conv_name(b, "bias"), Tensor({cout}));
    cin = cout;
  }
  const std::size_t k = cfg.num_classes;
  params.add("backbone.score1.weight", glorot_uniform({k, cfg.c1, 1, 1}, cfg.c1, k, rng));
  params.add("backbone.score1.bias", Tensor({k}));
  params.add("backbone.score2.weight", glorot_uniform({k, cfg.c2, 1, 1}, cfg.c2, k, rng));
  params.add("backbone.score2.bias", Tensor({k}));
}

inline ModelParams init_params(const BackboneConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  init_backbone_params(cfg, seed, p);
  return p;
}

/// Recovers the configuration implied by a set of backbone parameters.
inline BackboneConfig infer_backbone_config(const ModelParams& params) {
  BackboneConfig cfg;
  std::size_t blocks = 0;
  while (params.contains(conv_name(blocks + 1, "weight"))) ++blocks;
  if (blocks < 2) throw ValidationError("parameters do not describe a backbone");
  cfg.in_channels = params.at(conv_name(1, "weight")).shape()[1];
  cfg.node_stride = std::size_t{1} << (blocks - 1);
  cfg.c1 = params.at(conv_name(blocks - 1, "weight")).shape()[0];
  cfg.c2 = params.at(conv_name(blocks, "weight")).shape()[0];
  cfg.num_classes = params.at("backbone.score1.weight").shape()[0];
  cfg.validate();
  return cfg;
}

inline BackboneOutput backbone_forward(const Var& x, const ModelParams& params, const BackboneConfig& cfg) {
  cfg.validate();
  if (x.value().rank() != 3 || x.shape()[0] != cfg.in_channels) {
    throw DimensionError("backbone_forward: expected " + std::to_string(cfg.in_channels) +
                         "×H×W input, got " + shape_str(x.shape()));
  }
  const std::size_t h = x.shape()[1], w = x.shape()[2];
  if (h < cfg.min_extent() || w < cfg.min_extent()) {
    throw DimensionError("backbone_forward: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " below minimum " + std::to_string(cfg.min_extent()) + "x" +
                         std::to_string(cfg.min_extent()));
  }
  const std::size_t s = cfg.node_stride, coarse = 2 * s;
  const std::size_t hp = grid_extent(h, coarse) * coarse, wp = grid_extent(w, coarse) * coarse;

  Var feat = pad_spatial(x, hp, wp);
  Var f1;
  for (std::size_t b = 1; b <= cfg.depth() + 1; ++b) {
    feat = conv2d(feat, params.at(conv_name(b, "weight")), 1, 1);
    feat = add_channel_bias(feat, params.at(conv_name(b, "bias")));
    feat = maxpool2d(relu(feat), 2, 2);
    if (b == cfg.depth()) f1 = feat;
  }
  const Var& f2 = feat;

  Var score1 = add_channel_bias(conv2d(f1, params.at("backbone.score1.weight"), 1, 0),
                                params.at("backbone.score1.bias"));
  Var score2 = add_channel_bias(conv2d(f2, params.at("backbone.score2.weight"), 1, 0),
                                params.at("backbone.score2.bias"));
  Var fused = add(upsample_nearest(score2, 2), score1);

  const std::size_t gh = grid_extent(h, s), gw = grid_extent(w, s);
  BackboneOutput out;
  out.pixel_logits = crop_spatial(upsample_nearest(fused, s), h, w);
  out.f1 = crop_spatial(f1, gh, gw);
  out.f2_up = crop_spatial(upsample_nearest(f2, 2), gh, gw);
  return out;
}

}  // namespace gfcn
