// graphfcn: command-line driver for data generation, training, evaluation,
// prediction, graph inspection and gradient checking.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "graphfcn/graphfcn.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

/// Bad flags, config or arguments (exit 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool g_quiet = false;

void log(const std::string& msg) {
  if (!g_quiet) std::cerr << msg << "\n";
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  std::size_t h = 0, w = 0;
  char x = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%zu%c%zu%c", &h, &x, &w, &tail) != 3 || (x != 'x' && x != 'X') || !h || !w) {
    throw UsageError("size must look like HxW, got '" + s + "'");
  }
  return {h, w};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw gfcn::Error("cannot write '" + path.string() + "'");
  out << text;
}

// ------------------------------------------------------------------- config

struct RunConfig {
  gfcn::ModelConfig model;
  gfcn::TrainConfig train;
};

RunConfig parse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw UsageError("config must be a JSON object");

  RunConfig rc;
  if (auto it = doc.find("preset"); it != doc.end()) {
    if (!it->is_string()) throw UsageError("config field 'preset' must be a string");
    if (*it == "long") {
      rc.train = gfcn::TrainConfig::long_schedule();
    } else if (*it != "short") {
      throw UsageError("config field 'preset' must be \"short\" or \"long\"");
    }
  }

  using Setter = std::function<void(const nlohmann::json&, const std::string&)>;
  auto count = [](std::size_t& dst) -> Setter {
    return [&dst](const nlohmann::json& v, const std::string& key) {
      if (!v.is_number_unsigned()) throw UsageError("config field '" + key + "' must be a non-negative integer");
      dst = v.get<std::size_t>();
    };
  };
  auto real = [](double& dst) -> Setter {
    return [&dst](const nlohmann::json& v, const std::string& key) {
      if (!v.is_number()) throw UsageError("config field '" + key + "' must be a number");
      dst = v.get<double>();
    };
  };
  std::size_t seed = rc.train.seed;
  const std::map<std::string, Setter> fields{
      {"preset", [](const nlohmann::json&, const std::string&) {}},
      {"num_classes", count(rc.model.backbone.num_classes)},
      {"c1", count(rc.model.backbone.c1)},
      {"c2", count(rc.model.backbone.c2)},
      {"node_stride", count(rc.model.backbone.node_stride)},
      {"gcn_hidden", count(rc.model.gcn_hidden)},
      {"neighbors", count(rc.model.graph.neighbors)},
      {"sigma", real(rc.model.graph.sigma)},
      {"phase1_iters", count(rc.train.phase1_iters)},
      {"phase1_lr", real(rc.train.phase1_lr)},
      {"phase2_lr", real(rc.train.phase2_lr)},
      {"weight_decay", real(rc.train.weight_decay)},
      {"lambda_node", real(rc.train.lambda_node)},
      {"beta1", real(rc.train.beta1)},
      {"beta2", real(rc.train.beta2)},
      {"eps", real(rc.train.eps)},
      {"epochs", count(rc.train.epochs)},
      {"seed", count(seed)},
  };
  for (const auto& [key, value] : doc.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw UsageError("config field '" + key + "' is not recognized");
    it->second(value, key);
  }
  rc.train.seed = seed;
  try {
    rc.model.validate();
    rc.train.validate();
  } catch (const gfcn::ParameterError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return rc;
}

json config_to_json(const RunConfig& rc) {
  json j;
  j["num_classes"] = rc.model.backbone.num_classes;
  j["c1"] = rc.model.backbone.c1;
  j["c2"] = rc.model.backbone.c2;
  j["node_stride"] = rc.model.backbone.node_stride;
  j["gcn_hidden"] = rc.model.gcn_hidden;
  j["neighbors"] = rc.model.graph.neighbors;
  j["sigma"] = rc.model.graph.sigma;
  j["phase1_iters"] = rc.train.phase1_iters;
  j["phase1_lr"] = rc.train.phase1_lr;
  j["phase2_lr"] = rc.train.phase2_lr;
  j["weight_decay"] = rc.train.weight_decay;
  j["lambda_node"] = rc.train.lambda_node;
  j["beta1"] = rc.train.beta1;
  j["beta2"] = rc.train.beta2;
  j["eps"] = rc.train.eps;
  j["epochs"] = rc.train.epochs;
  j["seed"] = rc.train.seed;
  return j;
}

// ----------------------------------------------------------------- commands

struct GenerateArgs {
  std::string out, size = "64x64";
  std::size_t count = 0, classes = 4;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  bool force = false;
};

int run_generate(const GenerateArgs& a) {
  const auto [h, w] = parse_size(a.size);
  if (a.test_fraction < 0.0 || a.test_fraction > 1.0) throw UsageError("--test-fraction must lie in [0, 1]");
  const fs::path root(a.out);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!a.force) throw UsageError("output directory '" + a.out + "' is not empty (use --force to overwrite)");
    fs::remove_all(root / "images");
    fs::remove_all(root / "labels");
    fs::remove(root / "split.json");
  }
  std::vector<gfcn::Sample> samples;
  try {
    samples = gfcn::generate_shapes(a.count, h, w, a.classes, a.seed);
  } catch (const gfcn::ParameterError& e) {
    throw UsageError(e.what());
  }
  const auto n_test = static_cast<std::size_t>(std::llround(a.test_fraction * static_cast<double>(a.count)));
  gfcn::Dataset ds;
  ds.train.assign(samples.begin(), samples.end() - static_cast<std::ptrdiff_t>(n_test));
  ds.test.assign(samples.end() - static_cast<std::ptrdiff_t>(n_test), samples.end());
  gfcn::write_dataset(root, ds);
  json j;
  j["out"] = a.out;
  j["train"] = ds.train.size();
  j["test"] = ds.test.size();
  std::cout << j.dump() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, config, out, report_dir;
  bool no_gcn = false;
};

int run_train(const TrainArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : parse_config(a.config);
  if (a.no_gcn) {
    rc.train.lambda_node = 0.0;
    rc.train.phase1_iters = 0;
  }
  const auto ds = gfcn::load_dataset(a.data, rc.model.backbone.num_classes);
  const fs::path ckpt(a.out);
  const fs::path report_dir = a.report_dir.empty() ? (ckpt.has_parent_path() ? ckpt.parent_path() : fs::path("."))
                                                   : fs::path(a.report_dir);
  fs::create_directories(report_dir);
  log("training on " + std::to_string(ds.train.size()) + " images, evaluating on " +
      std::to_string(ds.test.size()));

  json history = json::array();
  gfcn::TrainHooks hooks;
  hooks.on_epoch = [&](const gfcn::EpochRecord& er, const gfcn::ModelParams&) {
    json e;
    e["epoch"] = er.epoch;
    e["mean_L1"] = er.mean_l1;
    e["mean_L2"] = er.mean_l2;
    e["mean_total"] = er.mean_total;
    if (er.metrics) {
      const json m = gfcn::metrics_to_json(*er.metrics);
      e["metrics"] = m;
      write_text(report_dir / "metrics.json", m.dump(2) + "\n");
    }
    history.push_back(e);
    write_text(report_dir / "epochs.json", history.dump(2) + "\n");
    log("epoch " + std::to_string(er.epoch) + " loss " + std::to_string(er.mean_total) +
        (er.metrics ? " test mIOU " + std::to_string(er.metrics->miou) : ""));
  };
  const auto result = gfcn::train(ds.train, ds.test, rc.model, rc.train, hooks);
  gfcn::save_checkpoint(result.params, ckpt);
  write_text(report_dir / "report.csv", gfcn::report_csv(result.report));
  write_text(report_dir / "config.json", config_to_json(rc).dump(2) + "\n");

  json j;
  j["checkpoint"] = ckpt.string();
  j["iterations"] = result.report.iterations.size();
  if (!result.report.epochs.empty() && result.report.epochs.back().metrics) {
    j["metrics"] = gfcn::metrics_to_json(*result.report.epochs.back().metrics);
  }
  std::cout << j.dump() << "\n";
  return 0;
}

struct EvalArgs {
  std::string data, ckpt, out, split = "test";
};

int run_eval(const EvalArgs& a) {
  const auto params = gfcn::load_checkpoint(a.ckpt);
  const auto cfg = gfcn::infer_backbone_config(params);
  const auto ds = gfcn::load_dataset(a.data, cfg.num_classes);
  std::vector<gfcn::Sample> samples;
  if (a.split == "test" || a.split == "all") samples.insert(samples.end(), ds.test.begin(), ds.test.end());
  if (a.split == "train" || a.split == "all") samples.insert(samples.end(), ds.train.begin(), ds.train.end());
  if (samples.empty()) throw UsageError("split '" + a.split + "' has no images");
  const auto cm = gfcn::evaluate(params, cfg, samples);
  const json j = gfcn::metrics_to_json(gfcn::compute_metrics(cm));
  if (!a.out.empty()) write_text(a.out, j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

struct PredictArgs {
  std::string image, ckpt, out;
};

int run_predict(const PredictArgs& a) {
  const auto params = gfcn::load_checkpoint(a.ckpt);
  const auto cfg = gfcn::infer_backbone_config(params);
  const auto image = gfcn::read_ppm(a.image);
  const auto labels = gfcn::predict_labels(image, params, cfg);
  gfcn::write_prediction(labels, a.out);
  std::vector<std::size_t> hist(cfg.num_classes, 0);
  for (auto l : labels.data) ++hist[l];
  json j;
  j["out"] = a.out;
  j["height"] = labels.height;
  j["width"] = labels.width;
  j["class_pixels"] = hist;
  std::cout << j.dump() << "\n";
  return 0;
}

struct InspectArgs {
  std::string size;
  std::size_t l = 4;
  double sigma = 1.0;
  long node = -1;
  std::size_t hops = 1;
};

int run_inspect(const InspectArgs& a) {
  const auto [h, w] = parse_size(a.size);
  gfcn::SparseMatrix adj;
  try {
    adj = gfcn::build_adjacency(h, w, a.l, a.sigma);
  } catch (const gfcn::ParameterError& e) {
    throw UsageError(e.what());
  }
  std::vector<std::size_t> field;
  if (a.node >= 0) {
    if (static_cast<std::size_t>(a.node) >= h * w) throw UsageError("--node outside the grid");
    field = gfcn::receptive_field(adj, static_cast<std::size_t>(a.node), a.hops);
  }
  if (g_quiet) {
    json j;
    j["nodes"] = h * w;
    j["edges"] = json::array();
    for (const auto& e : adj.entries()) j["edges"].push_back({e.row, e.col, e.weight});
    if (a.node >= 0) {
      j["receptive_field"] = {{"node", a.node}, {"hops", a.hops}, {"size", field.size()}, {"members", field}};
    }
    std::cout << j.dump() << "\n";
    return 0;
  }
  char line[96];
  for (const auto& e : adj.entries()) {
    std::snprintf(line, sizeof line, "%zu %zu %.17g\n", e.row, e.col, e.weight);
    std::cout << line;
  }
  if (a.node >= 0) {
    std::cout << "# receptive_field node=" << a.node << " hops=" << a.hops << " size=" << field.size() << "\n";
  }
  return 0;
}

struct CheckGradsArgs {
  std::uint64_t seed = 0;
  std::size_t samples = 50;
  double tolerance = 1e-4;
};

int run_check_grads(const CheckGradsArgs& a) {
  const auto report = gfcn::check_full_model_gradients(a.seed, a.samples);
  json j;
  j["probes"] = report.probes.size();
  j["max_rel_err"] = report.max_rel_err;
  j["tolerance"] = a.tolerance;
  j["passed"] = report.passed(a.tolerance);
  if (!g_quiet) {
    j["detail"] = json::array();
    for (const auto& p : report.probes) {
      j["detail"].push_back({{"param", p.param}, {"index", p.index}, {"analytic", p.analytic},
                             {"numeric", p.numeric}, {"rel_err", p.rel_err}});
    }
  }
  std::cout << j.dump() << "\n";
  return report.passed(a.tolerance) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-FCN segmentation toolkit"};
  app.require_subcommand(1);
  app.add_flag("--quiet", g_quiet, "Machine-readable stdout only; no progress on stderr");

  GenerateArgs gen;
  auto* cmd_gen = app.add_subcommand("generate-data", "Write a synthetic shapes dataset");
  cmd_gen->add_option("--out", gen.out, "Dataset directory")->required();
  cmd_gen->add_option("--count", gen.count, "Number of images")->required();
  cmd_gen->add_option("--size", gen.size, "Image size HxW");
  cmd_gen->add_option("--classes", gen.classes, "Classes including background (2-4)");
  cmd_gen->add_option("--seed", gen.seed, "Generator seed");
  cmd_gen->add_option("--test-fraction", gen.test_fraction, "Share of images in the test split");
  cmd_gen->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "Two-phase dual-loss training");
  cmd_train->add_option("--data", tr.data, "Dataset directory")->required();
  cmd_train->add_option("--config", tr.config, "JSON configuration file");
  cmd_train->add_option("--out", tr.out, "Checkpoint path")->required();
  cmd_train->add_option("--report-dir", tr.report_dir, "Where report.csv and metrics.json go");
  cmd_train->add_flag("--no-gcn", tr.no_gcn, "Baseline: lambda_node=0 and no warmup phase");

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "Segmentation metrics of a checkpoint");
  cmd_eval->add_option("--data", ev.data, "Dataset directory")->required();
  cmd_eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  cmd_eval->add_option("--out", ev.out, "Also write metrics JSON here");
  cmd_eval->add_option("--split", ev.split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));

  PredictArgs pr;
  auto* cmd_predict = app.add_subcommand("predict", "Label raster for one image");
  cmd_predict->add_option("--image", pr.image, "Input P6 image")->required();
  cmd_predict->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  cmd_predict->add_option("--out", pr.out, "Output P5 label raster")->required();

  InspectArgs in;
  auto* cmd_inspect = app.add_subcommand("inspect-graph", "Print grid adjacency and receptive field");
  cmd_inspect->add_option("--size", in.size, "Grid size HxW")->required();
  cmd_inspect->add_option("--l", in.l, "Neighbours per node");
  cmd_inspect->add_option("--sigma", in.sigma, "Gaussian kernel bandwidth");
  cmd_inspect->add_option("--node", in.node, "Node for the receptive field");
  cmd_inspect->add_option("--hops", in.hops, "Propagation hops");

  CheckGradsArgs cg;
  auto* cmd_check = app.add_subcommand("check-grads", "Finite-difference check of the full model");
  cmd_check->add_option("--seed", cg.seed, "Seed for parameters and probe points");
  cmd_check->add_option("--samples", cg.samples, "Number of probed parameters");
  cmd_check->add_option("--tolerance", cg.tolerance, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*cmd_gen) return run_generate(gen);
    if (*cmd_train) return run_train(tr);
    if (*cmd_eval) return run_eval(ev);
    if (*cmd_predict) return run_predict(pr);
    if (*cmd_inspect) return run_inspect(in);
    if (*cmd_check) return run_check_grads(cg);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
