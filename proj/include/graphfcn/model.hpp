#pragma once

// Graph-FCN: backbone plus graph head sharing the backbone features.

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <utility>

#include "graphfcn/autodiff.hpp"
#include "graphfcn/backbone.hpp"
#include "graphfcn/gcn.hpp"
#include "graphfcn/graph.hpp"
#include "graphfcn/params.hpp"
#include "graphfcn/spectral.hpp"

namespace gfcn {

struct ModelConfig {
  BackboneConfig backbone;
  GraphConfig graph;
  std::size_t gcn_hidden = 64;

  GcnConfig gcn() const {
    return GcnConfig{backbone.c1 + backbone.c2 + 2, gcn_hidden, backbone.num_classes};
  }

  void validate() const {
    backbone.validate();
    gcn().validate();
    if (graph.neighbors < 1) throw ParameterError("graph neighbor count must be >= 1");
    if (!(graph.sigma > 0.0)) throw ParameterError("graph sigma must be positive");
  }
};

/// Backbone draws from seed, the head from an independent derived stream, so
/// backbone initialization does not depend on whether a head exists.
inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  init_backbone_params(cfg.backbone, seed, p);
  init_gcn_params(cfg.gcn(), seed ^ 0x9e3779b97f4a7c15ULL, p);
  return p;
}

inline bool is_gcn_param(const std::string& name) { return name.rfind("gcn.", 0) == 0; }

/// Â per grid size, built on first use. Thread-safe.
class PropagationCache {
 public:
  explicit PropagationCache(GraphConfig cfg) : cfg_(cfg) {}

  const PropagationMatrix& get(std::size_t h, std::size_t w) {
    std::lock_guard lock(mu_);
    auto key = std::pair{h, w};
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      it = cache_.emplace(key, renormalized_propagation(build_adjacency(h, w, cfg_.neighbors, cfg_.sigma)))
               .first;
    }
    return it->second;
  }

 private:
  GraphConfig cfg_;
  std::mutex mu_;
  std::map<std::pair<std::size_t, std::size_t>, PropagationMatrix> cache_;
};

struct ForwardPass {
  BackboneOutput backbone;
  Var annotations;
  Var node_logits;
};

/// Full forward. With detach_features the head sees the backbone features as
/// constants, so gradients stop at the annotations.
inline ForwardPass model_forward(const Var& image, const ModelParams& params, const ModelConfig& cfg,
                                 PropagationCache& cache, bool detach_features = false) {
  ForwardPass fp;
  fp.backbone = backbone_forward(image, params, cfg.backbone);
  const Var f1 = detach_features ? detach(fp.backbone.f1) : fp.backbone.f1;
  const Var f2 = detach_features ? detach(fp.backbone.f2_up) : fp.backbone.f2_up;
  fp.annotations = build_node_annotations(f1, f2);
  const auto& ahat = cache.get(f1.shape()[1], f1.shape()[2]);
  fp.node_logits = gcn_forward(ahat, fp.annotations, params, cfg.gcn());
  return fp;
}

/// Per-pixel argmax of C×H×W logits; ties resolve to the lowest class.
inline LabelMap argmax_labels(const Tensor& logits) {
  const std::size_t c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  LabelMap out(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (logits.at(k, i, j) > logits.at(best, i, j)) best = k;
      out.at(i, j) = static_cast<Label>(best);
    }
  return out;
}

/// Inference uses the pixel head only.
inline LabelMap predict_labels(const Tensor& image, const ModelParams& params, const BackboneConfig& cfg) {
  return argmax_labels(backbone_forward(Var::constant(image), params, cfg).pixel_logits.value());
}

}  // namespace gfcn
