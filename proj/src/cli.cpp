#include "ssc/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "ssc/config.hpp"
#include "ssc/errors.hpp"
#include "ssc/grid_io.hpp"
#include "ssc/invariants.hpp"
#include "ssc/losses.hpp"
#include "ssc/metrics.hpp"
#include "ssc/report.hpp"
#include "ssc/scene.hpp"

namespace ssc {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "INI run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "RNG seed (overrides [run] seed)");
  cmd->add_option("--out", args.out, "output directory (overrides [run] out)");
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig rc = args.config.empty() ? RunConfig{} : load_run_config(args.config);
  if (args.seed) rc.seed = *args.seed;
  if (!args.out.empty()) rc.out_dir = args.out;
  return rc;
}

fs::path prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

std::string dims_string(const std::vector<std::size_t>& d) {
  std::string s;
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "x" : "") + std::to_string(d[i]);
  return s;
}

ClassWeights weights_from_labels(const VoxelLabels& labels, std::size_t k) {
  const auto hist = label_histogram(labels, k);
  std::size_t total = 0;
  for (auto h : hist) total += h;
  if (total == 0) return ClassWeights::uniform(k);
  std::vector<double> freq;
  for (auto h : hist) freq.push_back(static_cast<double>(h) / static_cast<double>(total));
  return class_weights_from_frequencies(freq);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_run(const CommonArgs& args, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig rc = resolve(args);
  const fs::path dir = prepare_out(rc.out_dir);
  const auto& m = rc.model;

  const SyntheticScene scene = generate_scene(rc);
  const ModelParams params = init_model(m, rc.seed);
  const ForwardResult fwd = forward_pipeline(m, scene.camera, scene.depth, scene.features, params);
  const LossReport losses = total_loss(fwd.logits, fwd.aux_logits, scene.labels,
                                       weights_from_labels(scene.labels, m.num_classes));
  const VoxelLabels pred = argmax_labels(fwd.logits);

  RunReport report;
  std::size_t valid_pixels = 0;
  for (auto v : scene.depth.valid) valid_pixels += v;
  report.header = {
      {"command", "run"},
      {"seed", std::to_string(rc.seed)},
      {"query_mode", to_string(m.query_mode)},
      {"num_queries", std::to_string(m.active_queries())},
      {"embed_dim", std::to_string(m.embed_dim)},
      {"decoder_layers", std::to_string(m.decoder_layers)},
      {"decoder_grid", dims_string({m.grid.dims[0], m.grid.dims[1], m.grid.dims[2]})},
      {"logits_shape", dims_string(fwd.logits.shape())},
      {"valid_pixels", std::to_string(valid_pixels)},
      {"fov_voxels", std::to_string(fwd.initial_scene.fov_mask.count())},
      {"proposed_voxels", std::to_string(fwd.initial_scene.proposal.size())},
  };
  report.losses = losses;
  report.metrics = compute_metrics(confusion_matrix(pred, scene.labels, m.num_classes));

  save_grid(fwd.logits, dir / "logits.symv");
  save_grid(pred, dir / "pred.symv");
  save_grid(scene.labels, dir / "gt.symv");
  emit_report(report, dir / "report.txt");

  out << "loss.total: " << format_real(losses.total) << "\n"
      << "logits_shape: " << dims_string(fwd.logits.shape()) << "\n";
  err << "run: wrote " << (dir / "report.txt").string() << " in " << seconds_since(t0) << " s\n";
  if (!std::isfinite(losses.total)) {
    err << "run: loss is not finite\n";
    return kExitInvariantFailure;
  }
  return kExitOk;
}

int cmd_check(const CommonArgs& args, const SuiteOptions& base, std::ostream& out,
              std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig rc = resolve(args);
  const fs::path dir = prepare_out(rc.out_dir);
  SuiteOptions opts = base;
  opts.seed = rc.seed;

  RunReport report;
  report.header = {{"command", "check"},
                   {"seed", std::to_string(rc.seed)},
                   {"inject_wrong_gradient", opts.inject_wrong_gradient ? "true" : "false"}};
  report.invariants = run_invariant_suite(rc, opts);
  emit_report(report, dir / "check_report.txt");

  std::size_t failed = 0;
  for (const auto& r : report.invariants) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name;
    if (!r.detail.empty()) out << "  " << r.detail;
    out << "\n";
    if (!r.passed) {
      ++failed;
      err << "check: property failed: " << r.name << "\n";
    }
  }
  err << "check: " << report.invariants.size() - failed << "/" << report.invariants.size()
      << " passed in " << seconds_since(t0) << " s\n";
  return failed == 0 ? kExitOk : kExitInvariantFailure;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, const std::string& out_dir,
             std::size_t num_classes, std::ostream& out) {
  const VoxelLabels pred = load_label_grid(pred_path);
  const GridData gt_data = load_grid(gt_path);
  const auto* gt = std::get_if<VoxelLabels>(&gt_data);
  if (!gt) throw ConfigError("--gt must be a label grid");
  if (pred.dims != gt->dims) throw ConfigError("prediction and ground-truth dims differ");

  RunReport report;
  report.header = {{"command", "eval"},
                   {"grid", dims_string({gt->dims[0], gt->dims[1], gt->dims[2]})}};
  report.metrics = compute_metrics(confusion_matrix(pred, *gt, num_classes));
  const std::string text = format_report(report);
  if (!out_dir.empty()) write_text_file(prepare_out(out_dir) / "eval_report.txt", text);
  out << text;
  return kExitOk;
}

int cmd_export(const std::string& logits_path, const std::string& out_dir, std::ostream& out) {
  const VoxelLabels labels = load_label_grid(logits_path);
  const fs::path target = prepare_out(out_dir.empty() ? "out" : out_dir) / "export.symv";
  save_grid(labels, target);
  std::size_t occupied = 0;
  for (auto l : labels.labels) occupied += l != kEmptyClass ? 1 : 0;
  out << "export: " << target.string() << " (" << occupied << " occupied voxels)\n";
  return kExitOk;
}

int cmd_gen(const CommonArgs& args, std::ostream& out) {
  const RunConfig rc = resolve(args);
  const fs::path dir = prepare_out(rc.out_dir);
  const SyntheticScene scene = generate_scene(rc);
  save_grid(scene.labels, dir / "labels.symv");
  const std::size_t h = scene.depth.height(), w = scene.depth.width();
  save_grid(Tensor({h, w, 1, 1}, std::vector<double>(scene.depth.values.values().begin(),
                                                      scene.depth.values.values().end())),
            dir / "depth.symv");
  write_text_file(dir / "camera.txt", format_calibration(scene.camera));
  write_text_file(dir / "config.ini", format_run_config(rc));

  RunReport summary;
  const auto hist = label_histogram(scene.labels, rc.model.num_classes);
  std::size_t valid = 0;
  for (auto v : scene.depth.valid) valid += v;
  summary.header = {{"command", "gen"},
                    {"seed", std::to_string(rc.seed)},
                    {"grid", dims_string({scene.grid.dims[0], scene.grid.dims[1],
                                          scene.grid.dims[2]})},
                    {"image", std::to_string(w) + "x" + std::to_string(h)},
                    {"valid_pixels", std::to_string(valid)}};
  for (std::size_t c = 0; c < hist.size(); ++c) {
    if (hist[c] > 0) {
      summary.header.emplace_back("voxels." + std::string(c == 0 ? "empty" : class_name(static_cast<std::uint8_t>(c))),
                                  std::to_string(hist[c]));
    }
  }
  emit_report(summary, dir / "scene.txt");
  out << "gen: wrote scene bundle to " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semantic scene completion toy pipeline"};
  app.require_subcommand(1);

  CommonArgs run_args, check_args, gen_args;
  auto* run = app.add_subcommand("run", "forward pass, losses and metrics on a synthetic scene");
  add_common(run, run_args);

  auto* check = app.add_subcommand("check", "run the invariant suite");
  add_common(check, check_args);
  SuiteOptions suite;
  check->add_flag("--inject-wrong-gradient", suite.inject_wrong_gradient,
                  "corrupt analytic gradients (negative control)");
  check->add_option("--trials", suite.trials, "random instances per property")
      ->check(CLI::PositiveNumber);
  check->add_option("--permutations", suite.permutations, "query permutations to test");

  auto* eval = app.add_subcommand("eval", "metrics from prediction and ground-truth grids");
  std::string pred_path, gt_path, eval_out;
  std::size_t eval_classes = kNumClasses;
  eval->add_option("--pred", pred_path, "predicted label or logit grid")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--gt", gt_path, "ground-truth label grid")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "directory for eval_report.txt");
  eval->add_option("--classes", eval_classes, "number of classes")->check(CLI::Range(2, 255));

  auto* exp = app.add_subcommand("export", "argmax a logit grid into a label grid");
  std::string logits_path, export_out;
  exp->add_option("--logits", logits_path, "logit grid")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", export_out, "output directory");

  auto* gen = app.add_subcommand("gen", "write a synthetic scene bundle");
  add_common(gen, gen_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_args, out, err);
    if (*check) return cmd_check(check_args, suite, out, err);
    if (*eval) return cmd_eval(pred_path, gt_path, eval_out, eval_classes, out);
    if (*exp) return cmd_export(logits_path, export_out, out);
    if (*gen) return cmd_gen(gen_args, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace ssc
