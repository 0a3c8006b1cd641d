#pragma once

// Central finite-difference checks of recorded gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "graphfcn/autodiff.hpp"
#include "graphfcn/model.hpp"
#include "graphfcn/params.hpp"
#include "graphfcn/training.hpp"

namespace gfcn {

/// |a − b| / max(|a|, |b|, floor). The floor keeps roundoff in near-zero
/// derivatives from registering as relative error.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// (f(x + h·e_i) − f(x − h·e_i)) / 2h, restoring x[i] afterwards.
inline double central_difference(const std::function<double()>& f, Tensor& x, std::size_t i, double h = 1e-5) {
  const double orig = x[i];
  x[i] = orig + h;
  const double up = f();
  x[i] = orig - h;
  const double down = f();
  x[i] = orig;
  return (up - down) / (2.0 * h);
}

struct GradProbe {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradProbe> probes;
  double max_rel_err = 0.0;
  bool passed(double tol) const { return max_rel_err < tol; }
};

/// Compares backward() against central differences of the full dual loss
/// (backbone, annotations, graph head, both cross-entropies) at `samples`
/// randomly chosen scalars, at least one per parameter tensor.
inline GradCheckReport check_full_model_gradients(std::uint64_t seed, std::size_t samples = 50,
                                                  std::size_t image_size = 16, std::size_t num_classes = 2,
                                                  double step = 1e-5) {
  ModelConfig cfg;
  cfg.backbone.num_classes = num_classes;
  cfg.backbone.node_stride = 4;
  ModelParams params = init_model(cfg, seed);
  // Nonzero biases so that every parameter has a generic gradient.
  std::mt19937_64 rng(seed + 17);
  std::uniform_real_distribution<double> unit(-0.1, 0.1);
  for (auto& e : params.entries())
    if (e.name.ends_with(".bias"))
      for (auto& v : e.var.mutable_value().data()) v = unit(rng);

  Tensor image({3, image_size, image_size});
  for (auto& v : image.data()) v = 0.5 + 5.0 * unit(rng);
  LabelMap labels(image_size, image_size);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(num_classes) - 1);
  for (auto& l : labels.data) l = static_cast<Label>(cls(rng));
  const auto node_labels = pool_node_labels(labels, cfg.backbone.node_stride);
  PropagationCache cache(cfg.graph);

  auto loss_fn = [&] {
    ForwardPass fp = model_forward(Var::constant(image), params, cfg, cache);
    return total_loss(fp.backbone.pixel_logits, labels, fp.node_logits, node_labels, 1.0);
  };
  params.zero_grads();
  backward(loss_fn());

  std::vector<std::pair<std::size_t, std::size_t>> picks;  // (entry, index)
  const auto& entries = params.entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    std::uniform_int_distribution<std::size_t> idx(0, entries[e].var.size() - 1);
    picks.emplace_back(e, idx(rng));
  }
  std::uniform_int_distribution<std::size_t> which(0, entries.size() - 1);
  while (picks.size() < samples) {
    const std::size_t e = which(rng);
    std::uniform_int_distribution<std::size_t> idx(0, entries[e].var.size() - 1);
    picks.emplace_back(e, idx(rng));
  }

  GradCheckReport report;
  for (auto [e, i] : picks) {
    auto& entry = params.entries()[e];
    GradProbe p;
    p.param = entry.name;
    p.index = i;
    p.analytic = entry.var.grad()[i];
    p.numeric = central_difference([&] { return loss_fn().item(); }, entry.var.mutable_value(), i, step);
    p.rel_err = relative_error(p.analytic, p.numeric);
    report.max_rel_err = std::max(report.max_rel_err, p.rel_err);
    report.probes.push_back(p);
  }
  return report;
}

}  // namespace gfcn
