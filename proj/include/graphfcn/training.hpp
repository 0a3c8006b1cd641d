#pragma once

// Dual-loss training: pixel cross-entropy (L1) plus node cross-entropy (L2),
// Adam with decoupled weight decay, and a head-only warmup phase.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "graphfcn/autodiff.hpp"
#include "graphfcn/data.hpp"
#include "graphfcn/metrics.hpp"
#include "graphfcn/model.hpp"
#include "graphfcn/params.hpp"

namespace gfcn {

struct TrainConfig {
  std::size_t phase1_iters = 500;
  double phase1_lr = 0.01;
  double phase2_lr = 1e-4;
  double weight_decay = 1e-4;
  double lambda_node = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  /// false drops the graph head from the step entirely (baseline wiring).
  bool gcn_enabled = true;

  /// Hyperparameters of the original large-scale setup.
  static TrainConfig long_schedule() {
    TrainConfig c;
    c.phase1_iters = 8000;
    c.phase1_lr = 0.1;
    c.phase2_lr = 1e-5;
    c.weight_decay = 0.1;
    return c;
  }

  void validate() const {
    if (!(phase1_lr > 0.0) || !(phase2_lr > 0.0)) throw ParameterError("learning rates must be positive");
    if (!(lambda_node >= 0.0)) throw ParameterError("lambda_node must be >= 0");
    if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ParameterError("adam betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ParameterError("eps must be positive");
  }
};

/// L = L1 + λ·L2. Pixel logits are C×H×W, node logits |N|×C.
inline Var total_loss(const Var& pixel_logits, const LabelMap& label_map, const Var& node_logits,
                      std::span<const Label> node_labels, double lambda_node) {
  if (pixel_logits.value().rank() != 3 || pixel_logits.shape()[1] != label_map.height ||
      pixel_logits.shape()[2] != label_map.width) {
    throw DimensionError("total_loss: pixel logits " + shape_str(pixel_logits.shape()) + " vs label map " +
                         std::to_string(label_map.height) + "x" + std::to_string(label_map.width));
  }
  Var l1 = softmax_cross_entropy(channels_to_rows(pixel_logits), label_map.data);
  Var l2 = softmax_cross_entropy(node_logits, node_labels);
  return add(l1, scale(l2, lambda_node));
}

struct AdamOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update with decoupled weight decay (θ ← θ − lr·wd·θ first) on the
/// selected parameters; every gradient is reset afterwards. Bias correction
/// uses each parameter's own step count.
inline void adam_step(ModelParams& params, const AdamOptions& opt,
                      const std::function<bool(const std::string&)>& selected = {}) {
  const double decay = 1.0 - opt.lr * opt.weight_decay;
  for (auto& e : params.entries()) {
    if (selected && !selected(e.name)) continue;
    auto& st = e.adam;
    ++st.steps;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(st.steps));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(st.steps));
    auto theta = e.var.mutable_value().data();
    const auto g = e.var.grad().data();
    auto m = st.m.data();
    auto v = st.v.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (opt.weight_decay != 0.0) theta[i] *= decay;
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      theta[i] -= opt.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt.eps);
    }
  }
  params.zero_grads();
}

// ----------------------------------------------------------------- evaluation

/// Worker count from GRAPHFCN_THREADS, else hardware concurrency.
inline std::size_t default_threads() {
  if (const char* env = std::getenv("GRAPHFCN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Confusion matrix of pixel-head predictions over samples, fanned out over
/// threads and joined in image order.
inline ConfusionMatrix evaluate(const ModelParams& params, const BackboneConfig& cfg,
                                std::span<const Sample> samples, std::size_t threads = default_threads()) {
  std::vector<ConfusionMatrix> per_image(samples.size(), ConfusionMatrix(cfg.num_classes));
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < samples.size(); i += stride) {
      per_image[i].accumulate(predict_labels(samples[i].image, params, cfg), samples[i].labels);
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, samples.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  ConfusionMatrix total(cfg.num_classes);
  for (const auto& cm : per_image) total += cm;
  return total;
}

// ------------------------------------------------------------------- training

struct IterationRecord {
  std::size_t iter = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_l1 = 0.0;
  double mean_l2 = 0.0;
  double mean_total = 0.0;
  std::optional<SegmentationMetrics> metrics;  ///< on the test split, when one exists
};

struct TrainReport {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
};

struct TrainHooks {
  std::function<void(const IterationRecord&)> on_iteration;
  std::function<void(const EpochRecord&, const ModelParams&)> on_epoch;
  /// Called after every optimizer step with the updated parameters.
  std::function<void(std::size_t, const ModelParams&)> on_step;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

/// Fixed per-epoch visiting order derived from the seed.
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 0x100000001b3ULL + epoch + 1);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

/// Batch size 1. Iterations below phase1_iters update only the graph head at
/// phase1_lr with the backbone features detached; later iterations update
/// every parameter at phase2_lr.
inline TrainResult train(std::span<const Sample> train_set, std::span<const Sample> test_set,
                         const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  if (train_set.empty()) throw ParameterError("train: dataset is empty");
  model_cfg.validate();
  cfg.validate();

  TrainResult result{init_model(model_cfg, cfg.seed), {}};
  ModelParams& params = result.params;
  PropagationCache cache(model_cfg.graph);
  const auto head_only = [](const std::string& name) { return is_gcn_param(name); };

  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord er;
    er.epoch = epoch;
    for (std::size_t idx : epoch_permutation(train_set.size(), cfg.seed, epoch)) {
      const Sample& sample = train_set[idx];
      const bool warmup = cfg.gcn_enabled && iter < cfg.phase1_iters;
      IterationRecord rec;
      rec.iter = iter;
      try {
        const Var image = Var::constant(sample.image);
        Var loss;
        if (cfg.gcn_enabled) {
          ForwardPass fp = model_forward(image, params, model_cfg, cache, warmup);
          const auto node_labels = pool_node_labels(sample.labels, model_cfg.backbone.node_stride);
          Var l1 = softmax_cross_entropy(channels_to_rows(fp.backbone.pixel_logits), sample.labels.data);
          Var l2 = softmax_cross_entropy(fp.node_logits, node_labels);
          rec.l1 = l1.item();
          rec.l2 = l2.item();
          // L1 is independent of the head, so warmup only needs the node loss.
          loss = warmup ? scale(l2, cfg.lambda_node) : add(l1, scale(l2, cfg.lambda_node));
          rec.total = rec.l1 + cfg.lambda_node * rec.l2;
        } else {
          BackboneOutput bb = backbone_forward(image, params, model_cfg.backbone);
          loss = softmax_cross_entropy(channels_to_rows(bb.pixel_logits), sample.labels.data);
          rec.l1 = rec.total = loss.item();
        }
        backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("non-finite loss at iteration " + std::to_string(iter) + " (epoch " +
                           std::to_string(epoch) + ", sample '" + sample.id + "'): " + e.what());
      }
      if (warmup) {
        adam_step(params, {cfg.phase1_lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps}, head_only);
      } else {
        adam_step(params, {cfg.phase2_lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps});
      }
      for (const auto& e : params.entries()) {
        if (!e.var.value().all_finite()) {
          throw NumericError("parameter '" + e.name + "' became non-finite at iteration " + std::to_string(iter));
        }
      }
      er.mean_l1 += rec.l1;
      er.mean_l2 += rec.l2;
      er.mean_total += rec.total;
      result.report.iterations.push_back(rec);
      if (hooks.on_iteration) hooks.on_iteration(rec);
      if (hooks.on_step) hooks.on_step(iter, params);
      ++iter;
    }
    const double n = static_cast<double>(train_set.size());
    er.mean_l1 /= n;
    er.mean_l2 /= n;
    er.mean_total /= n;
    if (!test_set.empty()) er.metrics = compute_metrics(evaluate(params, model_cfg.backbone, test_set));
    result.report.epochs.push_back(er);
    if (hooks.on_epoch) hooks.on_epoch(er, params);
  }
  return result;
}

/// "iter,L1,L2,total" rows at full double precision.
inline std::string report_csv(const TrainReport& report) {
  std::string out = "iter,L1,L2,total\n";
  char line[128];
  for (const auto& r : report.iterations) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", r.iter, r.l1, r.l2, r.total);
    out += line;
  }
  return out;
}

}  // namespace gfcn
