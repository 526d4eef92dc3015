// pwseg: point-supervised volumetric segmentation pipeline.
//
// Exit codes: 0 ok, 1 internal, 2 config/parameter, 3 I/O/format, 4 shape,
// 5 numeric/metric, 6 annotation/label.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pwseg/pwseg.hpp"

using namespace pwseg;
namespace fs = std::filesystem;

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

void log(const std::string& msg) { std::cerr << "pwseg: " << msg << '\n'; }

// gen-synthetic --------------------------------------------------------------
struct GenArgs {
  std::string spec, out_intensity, out_truth;
  std::uint64_t seed = 0;
};

void run_gen(const GenArgs& a) {
  const Phantom ph = render_phantom(parse_phantom_spec(read_text(a.spec), a.seed));
  write_pvol(a.out_intensity, ph.intensity, PvolDtype::f64);
  write_pvol(a.out_truth, ph.truth);
  log("phantom " + ph.truth.dims().str() + ", " + std::to_string(ph.truth.count()) + " foreground voxels");
}

// annotate ---------------------------------------------------------------------
struct AnnotateArgs {
  std::string truth, out;
  std::size_t n = PipelineConfig{}.point_count_n;
  std::uint64_t seed = 0;
};

void run_annotate(const AnnotateArgs& a) {
  Rng rng(a.seed);
  const PointSet pts = sample_annotation(read_pvol_mask(a.truth), a.n, rng);
  write_points(a.out, pts);
  log(std::to_string(pts.size()) + " points written to " + a.out);
}

// pseudolabel ----------------------------------------------------------------
struct PseudoArgs {
  std::string points, dims, sigma2 = "auto", out_conf, out_mask;
  double T = PipelineConfig{}.threshold_T;
};

void run_pseudolabel(const PseudoArgs& a) {
  const Dims dims = parse_dims(a.dims, "--dims");
  const PointSet pts = read_points(a.points);
  require(!pts.empty(), ErrorKind::annotation, "points file '" + a.points + "' is empty");
  const double sigma2 = a.sigma2 == "auto" ? default_kernel_variance(pts) : parse_real(a.sigma2, "--sigma2");
  require(sigma2 > 0.0, ErrorKind::parameter, "--sigma2 must be > 0");
  require(a.T > 0.0 && a.T < 1.0, ErrorKind::parameter, "--T must lie in (0,1)");
  const PseudoLabel label = generate_pseudo_label(pts, dims, sigma2);
  log("sigma2 = " + shortest(sigma2) + (a.sigma2 == "auto" ? " (auto)" : ""));
  write_pvol(a.out_conf, label.confidence, PvolDtype::f64);
  write_pvol(a.out_mask, threshold_label(label, a.T));
}

// train ------------------------------------------------------------------------
struct TrainArgs {
  std::string data, config, out, loss_csv;
  std::uint64_t seed = 0;
  std::optional<std::size_t> iterations;
};

std::vector<TrainingPair> load_training_dir(const std::string& dir) {
  require(fs::is_directory(dir), ErrorKind::io, "data directory '" + dir + "' not found");
  const std::string suffix = "_image.pvol";
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  require(!images.empty(), ErrorKind::io, "no <name>_image.pvol files in '" + dir + "'");
  std::vector<TrainingPair> pairs;
  for (const auto& img : images) {
    const std::string stem = img.filename().string();
    const fs::path conf = img.parent_path() / (stem.substr(0, stem.size() - suffix.size()) + "_conf.pvol");
    require(fs::exists(conf), ErrorKind::io, "missing pseudo label " + conf.string());
    const VolumeGrid image = read_pvol_volume(img.string());
    const VolumeGrid c = read_pvol_volume(conf.string());
    require_same_dims(image.dims(), c.dims(), img.string().c_str());
    pairs.push_back({image, {VolumeGrid(c.dims(), c.data(), ValueKind::probability), 0.0}});
  }
  return pairs;
}

void run_train(const TrainArgs& a) {
  PipelineConfig config = load_config(a.config);
  if (a.iterations) config.iterations = *a.iterations;
  const std::vector<TrainingPair> data = load_training_dir(a.data);
  const Dims grid = data.front().image.dims();
  for (const auto& p : data) require_same_dims(p.image.dims(), grid, "training volumes");
  config.require_patch_divides(grid);
  const Architecture arch = Architecture::from_config(config, grid);

  const Rng master(a.seed);
  const ModelParams init = init_params(arch, master.split(0).next_u64());
  log("training " + std::to_string(init.parameter_count()) + " parameters on " + std::to_string(data.size()) +
      " volume(s) of " + grid.str() + " for " + std::to_string(config.iterations) + " iterations");
  std::string csv = "iteration,dice,pce,kl,total\n";
  const TrainResult r = train(data, config, init, master.split(1),
                              [&](std::size_t it, const LossBreakdown& b, const ModelParams&) {
                                csv += std::to_string(it) + ',' + shortest(b.dice) + ',' + shortest(b.pce) + ',' +
                                       shortest(b.kl) + ',' + shortest(b.total) + '\n';
                                if (it % 50 == 0 || it + 1 == config.iterations)
                                  log("iteration " + std::to_string(it) + " total " + shortest(b.total));
                              });
  write_checkpoint(a.out, r.params);
  const std::string csv_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  write_text(csv_path, csv);
  log("checkpoint written to " + a.out + ", loss trace to " + csv_path);
}

// infer ------------------------------------------------------------------------
struct InferArgs {
  std::string volume, checkpoint, out_prob, out_mask;
  std::size_t M = PipelineConfig{}.mc_samples_M;
  std::uint64_t seed = 0;
  bool sliding = false;
  double overlap = PipelineConfig{}.window_overlap;
};

void run_infer(const InferArgs& a) {
  require(a.M >= 1, ErrorKind::parameter, "--M must be >= 1");
  const VolumeGrid vol = read_pvol_volume(a.volume);
  const ModelParams params = read_checkpoint(a.checkpoint);
  const Rng rng(a.seed);
  VolumeGrid prob = [&] {
    if (a.sliding) return sliding_window_infer(vol, params, a.M, a.overlap, rng);
    require(vol.dims() == params.arch.grid, ErrorKind::shape,
            "volume " + vol.dims().str() + " does not match the model grid " + params.arch.grid.str() +
                " (use --sliding-window)");
    return mc_infer(vol, params, a.M, rng).probability;
  }();
  const BinaryMask mask = threshold_label(prob, 0.5);
  write_pvol(a.out_prob, prob, PvolDtype::f64);
  write_pvol(a.out_mask, mask);
  log(std::to_string(mask.count()) + " foreground voxels (M = " + std::to_string(a.M) + ")");
}

// eval -------------------------------------------------------------------------
struct EvalArgs {
  std::string pred, truth, out, organ = "organ";
};

void run_eval(const EvalArgs& a) {
  const MetricRow row = evaluate(a.organ, read_pvol_mask(a.pred), read_pvol_mask(a.truth));
  std::printf("%-16s %10s %10s\n", "organ", "dice", "hd95");
  std::printf("%-16s %10.4f %10.4f\n", row.organ.c_str(), row.dice, row.hd95);
  if (!a.out.empty()) write_text(a.out, format_metrics_csv({row}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-supervised volumetric segmentation with probabilistic attention"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-synthetic", "Render a phantom volume and its ground truth");
  g->add_option("--spec", gen.spec, "Phantom spec (key = value)")->required();
  g->add_option("--out-intensity", gen.out_intensity, "Output intensity .pvol")->required();
  g->add_option("--out-truth", gen.out_truth, "Output truth mask .pvol")->required();
  g->add_option("--seed", gen.seed, "Noise seed")->required();

  AnnotateArgs ann;
  auto* an = app.add_subcommand("annotate", "Simulate sparse point annotation of a truth mask");
  an->add_option("--truth", ann.truth, "Truth mask .pvol")->required();
  an->add_option("--n", ann.n, "Number of points")->capture_default_str();
  an->add_option("--seed", ann.seed, "Sampling seed")->required();
  an->add_option("--out", ann.out, "Output points file (x y z per line)")->required();

  PseudoArgs ps;
  auto* p = app.add_subcommand("pseudolabel", "Build a Gaussian pseudo label from points");
  p->add_option("--points", ps.points, "Points file")->required();
  p->add_option("--dims", ps.dims, "Volume dims X,Y,Z")->required();
  p->add_option("--sigma2", ps.sigma2, "Kernel variance, or auto")->capture_default_str();
  p->add_option("--T", ps.T, "Confidence threshold")->capture_default_str();
  p->add_option("--out-conf", ps.out_conf, "Output confidence .pvol (f64)")->required();
  p->add_option("--out-mask", ps.out_mask, "Output thresholded mask .pvol")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train on <name>_image.pvol / <name>_conf.pvol pairs");
  t->add_option("--data", tr.data, "Training directory")->required();
  t->add_option("--config", tr.config, "Pipeline config (key = value)")->required();
  t->add_option("--seed", tr.seed, "Initialisation and sampling seed")->required();
  t->add_option("--out", tr.out, "Output checkpoint")->required();
  t->add_option("--iterations", tr.iterations, "Override the configured iteration count");
  t->add_option("--loss-csv", tr.loss_csv, "Loss trace CSV (default: <out>.loss.csv)");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Monte Carlo inference with a trained checkpoint");
  i->add_option("--volume", inf.volume, "Input intensity .pvol")->required();
  i->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")->required();
  i->add_option("--M", inf.M, "Number of sampled passes")->capture_default_str();
  i->add_option("--seed", inf.seed, "Sampling seed")->required();
  i->add_option("--out-prob", inf.out_prob, "Output probability .pvol (f64)")->required();
  i->add_option("--out-mask", inf.out_mask, "Output mask .pvol")->required();
  i->add_flag("--sliding-window", inf.sliding, "Tile volumes with training-grid windows");
  i->add_option("--overlap", inf.overlap, "Sliding-window overlap fraction")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Dice and HD95 of a prediction against truth");
  e->add_option("--pred", ev.pred, "Predicted mask or probability .pvol")->required();
  e->add_option("--truth", ev.truth, "Truth mask .pvol")->required();
  e->add_option("--out", ev.out, "Output CSV (organ,dice,hd95)");
  e->add_option("--organ", ev.organ, "Row label")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : exit_code(ErrorKind::config);
  }

  try {
    if (*g) run_gen(gen);
    if (*an) run_annotate(ann);
    if (*p) run_pseudolabel(ps);
    if (*t) run_train(tr);
    if (*i) run_infer(inf);
    if (*e) run_eval(ev);
  } catch (const Error& err) {
    log(err.what());
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    log(std::string("internal error: ") + err.what());
    return exit_code(ErrorKind::internal);
  }
  return 0;
}
