#include "rangedam_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "rangedam/arch.hpp"
#include "rangedam/core_io.hpp"
#include "rangedam/dam.hpp"
#include "rangedam/error.hpp"
#include "rangedam/gradient_suite.hpp"
#include "rangedam/metrics.hpp"
#include "rangedam/parallel.hpp"
#include "rangedam/projection.hpp"
#include "rangedam/toy_train.hpp"
#include "rangedam_cli/config.hpp"

namespace rangedam::cli {
namespace fs = std::filesystem;
namespace {

// Flags shared by every subcommand; set values override the config file.
struct CommonFlags {
  std::optional<fs::path> config;
  std::optional<std::uint32_t> width;
  std::optional<std::uint32_t> height;
  std::optional<double> lvfov, hvfov, lhfov, hhfov;
  std::optional<std::string> channel_order;
  std::optional<fs::path> class_map;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<std::size_t> threads;
  bool normalize_intensity = false;

  Config resolve() const {
    Config cfg;
    apply_environment(cfg);
    if (config) apply_config_file(cfg, *config);
    if (width) cfg.width = *width;
    if (height) cfg.height = *height;
    if (lvfov) cfg.fov.lvfov = *lvfov;
    if (hvfov) cfg.fov.hvfov = *hvfov;
    if (lhfov) cfg.fov.lhfov = *lhfov;
    if (hhfov) cfg.fov.hhfov = *hhfov;
    if (channel_order) cfg.channel_order = *channel_order;
    if (class_map) cfg.class_map = *class_map;
    if (seed) cfg.seed = *seed;
    if (precision) cfg.precision = parse_precision(*precision);
    if (threads) cfg.threads = *threads;
    if (normalize_intensity) cfg.normalize_intensity = true;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "key = value config file");
  app->add_option("--width", f.width, "range image width");
  app->add_option("--height", f.height, "range image height (rings)");
  app->add_option("--lvfov", f.lvfov, "lowest vertical angle, degrees");
  app->add_option("--hvfov", f.hvfov, "highest vertical angle, degrees");
  app->add_option("--lhfov", f.lhfov, "lowest horizontal angle, degrees");
  app->add_option("--hhfov", f.hhfov, "highest horizontal angle, degrees");
  app->add_option("--channel-order", f.channel_order, "image channel order");
  app->add_option("--class-map", f.class_map, "raw = train id map");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--precision", f.precision, "verify (64-bit) or fast (32-bit)");
  app->add_option("--threads", f.threads, "worker threads for directory inputs");
  app->add_flag("--normalize-intensity", f.normalize_intensity, "min-max intensity per scan");
}

template <typename Fn>
decltype(auto) with_precision(Precision p, Fn&& fn) {
  if (p == Precision::verify) return fn.template operator()<double>();
  return fn.template operator()<float>();
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

template <typename Real>
ad::Tensor<Real> image_tensor(const RangeImage& img) {
  ad::Tensor<Real> t(ad::Shape{img.channels, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), t.data.begin());
  return t;
}

template <typename Real>
RangeImage tensor_image(const ad::Tensor<Real>& t) {
  if (t.shape.rank() != 3) throw ShapeError("feature dump needs a C x H x W tensor, got " + t.shape.str());
  RangeImage img = RangeImage::empty(static_cast<std::uint32_t>(t.shape[0]), static_cast<std::uint32_t>(t.shape[1]),
                                     static_cast<std::uint32_t>(t.shape[2]));
  std::transform(t.data.begin(), t.data.end(), img.data.begin(), [](Real v) { return static_cast<float>(v); });
  std::fill(img.valid.begin(), img.valid.end(), std::uint8_t{1});
  return img;
}

// ---------------------------------------------------------------- project

struct ProjectArgs {
  CommonFlags common;
  fs::path in, out;
  std::optional<fs::path> ring;
};

RangeImage project_one(const fs::path& in, const std::optional<fs::path>& ring, const Config& cfg) {
  PointCloud cloud = read_point_cloud_bin(in);
  if (ring) cloud.ring = read_ring_sidecar(*ring, cloud.size());
  if (cfg.normalize_intensity) normalize_intensity(cloud);
  return projection::project(cloud, cfg.height, cfg.width);
}

std::size_t count_valid(const RangeImage& img) {
  return static_cast<std::size_t>(std::count(img.valid.begin(), img.valid.end(), std::uint8_t{1}));
}

int cmd_project(const ProjectArgs& a, std::ostream& out) {
  const Config cfg = a.common.resolve();
  if (!fs::is_directory(a.in)) {
    const RangeImage img = project_one(a.in, a.ring, cfg);
    write_range_image(img, a.out);
    out << a.in.filename().string() << ": " << img.lut.size() << " points, " << count_valid(img) << " valid pixels\n";
    return kExitOk;
  }
  // Directory mode: every *.bin, with an optional same-stem *.ring sidecar
  // from --ring (a directory) or next to the scan.
  const auto scans = list_files(a.in, ".bin");
  fs::create_directories(a.out);
  std::vector<std::size_t> points(scans.size()), valid(scans.size());
  parallel_for(scans.size(), cfg.threads, [&](std::size_t i) {
    const fs::path ring_dir = a.ring ? *a.ring : a.in;
    fs::path ring = ring_dir / scans[i].stem();
    ring += ".ring";
    const RangeImage img = project_one(scans[i], fs::exists(ring) ? std::optional(ring) : std::nullopt, cfg);
    fs::path dest = a.out / scans[i].stem();
    dest += ".rimg";
    write_range_image(img, dest);
    points[i] = img.lut.size();
    valid[i] = count_valid(img);
  });
  for (std::size_t i = 0; i < scans.size(); ++i)
    out << scans[i].filename().string() << ": " << points[i] << " points, " << valid[i] << " valid pixels\n";
  return kExitOk;
}

// ------------------------------------------------------------ backproject

struct BackprojectArgs {
  CommonFlags common;
  fs::path in, out;
};

int cmd_backproject(const BackprojectArgs& a, std::ostream& out) {
  const Config cfg = a.common.resolve();
  const RangeImage img = read_range_image(a.in);
  const PointCloud cloud = projection::backproject_image(img, cfg.fov);
  write_point_cloud_bin(cloud, a.out);
  out << cloud.size() << " points\n";
  return kExitOk;
}

// ------------------------------------------------------------------ rings

struct RingsArgs {
  CommonFlags common;
  fs::path in;
  std::optional<fs::path> out;
};

int cmd_rings(const RingsArgs& a, std::ostream& out) {
  const Config cfg = a.common.resolve();
  const PointCloud cloud = read_point_cloud_bin(a.in);
  const auto ring = projection::infer_rings(cloud, cfg.height);
  if (a.out) write_ring_sidecar(ring, *a.out);
  const std::size_t rings = ring.empty() ? 0 : std::size_t{*std::max_element(ring.begin(), ring.end())} + 1;
  out << cloud.size() << " points, " << rings << " rings\n";
  return kExitOk;
}

// -------------------------------------------------------------------- spe

struct SpeArgs {
  CommonFlags common;
  std::size_t channels = 0;
  std::size_t dim = 0;
  bool alternating = false;
  std::optional<fs::path> out;
};

int cmd_spe(const SpeArgs& a, std::ostream& out) {
  a.common.resolve();
  dam::SpeConfig spe{a.dim, a.channels, 10000.0, a.alternating};
  try {
    spe.validate();
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  }
  const auto z = dam::spe_vector(spe);
  std::ostringstream csv;
  csv << std::setprecision(17) << "pos,value\n";
  for (std::size_t pos = 0; pos < z.size(); ++pos) csv << pos << ',' << z[pos] << '\n';
  if (a.out)
    write_text(*a.out, csv.str());
  else
    out << csv.str();
  return kExitOk;
}

// ------------------------------------------------------------- dam-forward

struct DamForwardArgs {
  CommonFlags common;
  fs::path in, out;
  std::optional<std::size_t> hidden;
  std::size_t dim = 0;
  bool no_gap = false;
  bool no_spe = false;
  bool no_bias = false;
};

int cmd_dam_forward(const DamForwardArgs& a, std::ostream& out) {
  const Config cfg = a.common.resolve();
  const RangeImage img = read_range_image(a.in);
  dam::DamConfig dc;
  dc.use_gap = !a.no_gap;
  dc.use_spe = !a.no_spe;
  dc.use_bias = !a.no_bias;
  dc.spe_dim = a.dim;
  const std::size_t c = img.channels;
  const std::size_t hidden = a.hidden.value_or(dam::default_hidden(c));
  return with_precision(cfg.precision, [&]<typename Real>() {
    std::mt19937_64 rng(cfg.seed);
    const dam::DepthAwareModule<Real> module(dam::init_dam_params<Real>(c, hidden, dc, rng));
    const auto m = image_tensor<Real>(img);
    const auto s = module.scale(m);
    RangeImage result = tensor_image(module.forward(m));
    result.valid = img.valid;
    result.lut = img.lut;
    write_range_image(result, a.out);
    out << std::setprecision(9) << "channel,scale\n";
    for (std::size_t k = 0; k < s.size(); ++k) out << k << ',' << s[k] << '\n';
    return kExitOk;
  });
}

// --------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  CommonFlags common;
  double eps = 1e-5;
  double tol = 1e-4;
  std::size_t seeds = 1;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const Config cfg = a.common.resolve();
  if (!(a.eps > 0.0) || !(a.tol > 0.0)) throw UsageError("--eps and --tol must be positive");
  if (a.seeds == 0) throw UsageError("--seeds must be at least 1");
  ad::SuiteOptions opts;
  opts.first_seed = cfg.seed;
  opts.seeds = a.seeds;
  opts.check.eps = a.eps;
  const auto entries = ad::run_gradient_suite(opts);
  bool ok = true;
  out << std::left << std::setw(24) << "op" << std::setw(14) << "max_rel_err" << "coords\n";
  for (const auto& e : entries) {
    const bool pass = e.max_rel_err < a.tol;
    ok = ok && pass;
    out << std::setw(24) << e.name << std::setw(14) << std::setprecision(3) << std::scientific << e.max_rel_err
        << std::defaultfloat << e.coords_checked << (pass ? "" : "  FAIL") << '\n';
  }
  return ok ? kExitOk : kExitDomain;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  CommonFlags common;
  fs::path gt, pred;
  std::size_t classes = 0;
  bool map_pred = false;
  std::optional<fs::path> csv;
};

metrics::ConfusionMatrix eval_pair(const fs::path& gt_path, const fs::path& pred_path, std::size_t classes,
                                   const std::optional<ClassMap>& map, bool map_pred) {
  LabelArray gt = read_labels(gt_path);
  LabelArray pred = read_labels(pred_path, gt.size());
  if (map) {
    gt = remap_labels(gt, *map);
    if (map_pred) pred = remap_labels(pred, *map);
  }
  metrics::ConfusionMatrix cm(classes);
  cm.accumulate(gt, pred);
  return cm;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Config cfg = a.common.resolve();
  if (a.classes == 0) throw UsageError("--classes must be at least 1");
  std::optional<ClassMap> map;
  if (cfg.class_map) map = ClassMap::load(*cfg.class_map);

  metrics::ConfusionMatrix total(a.classes);
  if (fs::is_directory(a.gt)) {
    const auto gts = list_files(a.gt, ".label");
    for (const auto& g : gts)
      if (!fs::exists(a.pred / g.filename())) throw IoError("missing prediction for " + g.filename().string());
    std::vector<metrics::ConfusionMatrix> parts(gts.size(), metrics::ConfusionMatrix(a.classes));
    parallel_for(gts.size(), cfg.threads, [&](std::size_t i) {
      parts[i] = eval_pair(gts[i], a.pred / gts[i].filename(), a.classes, map, a.map_pred);
    });
    for (const auto& p : parts) total.merge(p);
  } else {
    total = eval_pair(a.gt, a.pred, a.classes, map, a.map_pred);
  }
  const auto report = metrics::evaluate(total);
  if (a.csv) write_text(*a.csv, metrics::format_csv(report));
  out << metrics::format_table(report);
  return kExitOk;
}

// ----------------------------------------------------------------- featdiv

struct FeatdivArgs {
  CommonFlags common;
  std::vector<fs::path> in;
};

int cmd_featdiv(const FeatdivArgs& a, std::ostream& out) {
  a.common.resolve();
  out << std::setprecision(17);
  for (const auto& path : a.in) {
    const RangeImage img = read_range_image(path);
    out << path.filename().string() << ',' << metrics::channel_cosine_distance(image_tensor<double>(img)) << '\n';
  }
  return kExitOk;
}

// --------------------------------------------------------------- train-toy

struct TrainArgs {
  CommonFlags common;
  std::size_t steps = 500;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch = 4;
  std::size_t scenes = 24;
  std::size_t eval_scenes = 16;
  bool no_gap = false;
  bool no_spe = false;
  std::optional<fs::path> loss_csv;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> features;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const Config cfg = a.common.resolve();
  if (a.steps == 0 || a.batch == 0 || a.scenes == 0 || a.eval_scenes == 0)
    throw UsageError("--steps, --batch, --scenes and --eval-scenes must be at least 1");
  toy::TrainConfig tc = toy::default_train_config(!a.no_gap, !a.no_spe, cfg.seed);
  tc.steps = a.steps;
  tc.lr = a.lr;
  tc.momentum = a.momentum;
  tc.batch = a.batch;
  const auto train_set = toy::generate(cfg.seed, a.scenes);
  const auto eval_set = toy::generate(cfg.seed + 0x5EEDull, a.eval_scenes);

  return with_precision(cfg.precision, [&]<typename Real>() {
    auto result = toy::train<Real>(tc, train_set);
    arch::SegmentationModel<Real> model(tc.model, tc.seed);
    model.params() = result.params;
    const double miou = toy::evaluate_miou(model, eval_set);

    if (a.loss_csv) write_text(*a.loss_csv, toy::loss_csv(result.losses));
    if (a.checkpoint) arch::write_checkpoint(arch::convert<float>(model.params()), *a.checkpoint);
    if (a.features) {
      fs::create_directories(*a.features);
      ad::Tape<Real> tape;
      const auto leaves = model.params().bind(tape, false);
      const auto feats = model.stage_features(tape.constant(toy::scene_input<Real>(eval_set.front())), leaves);
      for (std::size_t s = 0; s < feats.size(); ++s)
        write_range_image(tensor_image(feats[s].value()), *a.features / ("stage" + std::to_string(s) + ".rimg"));
    }
    out << std::setprecision(6) << "initial_loss " << result.losses.front() << "\nfinal_loss " << result.losses.back()
        << "\nheld_out_miou " << miou << '\n';
    if (!toy::within_tripwire(result.losses)) {
      out << "warning: loss tripwire triggered\n";
    }
    return kExitOk;
  });
}

// ------------------------------------------------------------------ ablate

struct AblateArgs {
  CommonFlags common;
  toy::AblationOptions options;
  std::optional<fs::path> csv;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const Config cfg = a.common.resolve();
  if (a.options.steps == 0 || a.options.train_scenes == 0 || a.options.eval_scenes == 0)
    throw UsageError("--steps, --train-scenes and --eval-scenes must be at least 1");
  const auto rows = with_precision(
      cfg.precision, [&]<typename Real>() { return toy::ablation_run<Real>(cfg.seed, a.options); });
  if (a.csv) write_text(*a.csv, toy::ablation_csv(rows));
  out << toy::ablation_table(rows);
  return kExitOk;
}

// ------------------------------------------------------------------- bench

struct BenchArgs {
  CommonFlags common;
  std::size_t points = 130000;
  std::size_t repeats = 5;
  double budget_ms = 50.0;
};

// Rotating-sensor sweep in firing order: ring-major, azimuth increasing.
PointCloud synthetic_sweep(std::size_t n, std::uint32_t rings, const projection::FieldOfView& fov, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> range(2.0, 60.0), jitter(0.0, 1.0);
  PointCloud cloud;
  cloud.points.reserve(n);
  std::vector<std::uint16_t> ring;
  ring.reserve(n);
  const std::size_t per_ring = std::max<std::size_t>(1, n / rings);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t v = std::min<std::size_t>(i / per_ring, rings - 1);
    const std::size_t k = i - v * per_ring;
    const double theta = 360.0 * (static_cast<double>(k) + 0.5 * jitter(rng)) / static_cast<double>(per_ring + 1);
    const double alpha = fov.hvfov - (fov.hvfov - fov.lvfov) * (static_cast<double>(v) + 0.5) / rings;
    const auto p = projection::backproject(range(rng), alpha, theta);
    cloud.points.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                            static_cast<float>(jitter(rng))});
    ring.push_back(static_cast<std::uint16_t>(v));
  }
  cloud.ring = std::move(ring);
  return cloud;
}

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  const Config cfg = a.common.resolve();
  if (a.points == 0 || a.repeats == 0) throw UsageError("--points and --repeats must be at least 1");
  const PointCloud cloud = synthetic_sweep(a.points, cfg.height, cfg.fov, cfg.seed);
  double best = std::numeric_limits<double>::infinity();
  std::size_t valid = 0;
  for (std::size_t r = 0; r < a.repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const RangeImage img = projection::project(cloud, cfg.height, cfg.width);
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    valid = count_valid(img);
  }
  out << std::fixed << std::setprecision(2) << "project " << a.points << " points -> " << cfg.height << "x"
      << cfg.width << ": " << best << " ms (best of " << a.repeats << ", " << valid << " valid pixels)\n";
  if (best > a.budget_ms) err << "warning: projection took " << best << " ms, above the " << a.budget_ms << " ms target\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Range-image projection, depth-aware module and evaluation tools", "rangedam"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  int code = kExitOk;
  auto guard = [&](auto&& fn) {
    return [&code, fn]() { code = fn(); };
  };

  ProjectArgs project;
  auto* sc = app.add_subcommand("project", "project scans (.bin file or directory) to RIMG range images");
  add_common(sc, project.common);
  sc->add_option("--in", project.in, "scan or directory")->required();
  sc->add_option("--out", project.out, "RIMG file or output directory")->required();
  sc->add_option("--ring", project.ring, "ring sidecar (directory in directory mode)");
  sc->callback(guard([&] { return cmd_project(project, out); }));

  BackprojectArgs back;
  sc = app.add_subcommand("backproject", "RIMG image to a .bin point cloud");
  add_common(sc, back.common);
  sc->add_option("--in", back.in, "RIMG file")->required();
  sc->add_option("--out", back.out, ".bin output")->required();
  sc->callback(guard([&] { return cmd_backproject(back, out); }));

  RingsArgs rings;
  sc = app.add_subcommand("rings", "infer ring indices of a scan stored in firing order");
  add_common(sc, rings.common);
  sc->add_option("--in", rings.in, "scan")->required();
  sc->add_option("--out", rings.out, "ring sidecar output");
  sc->callback(guard([&] { return cmd_rings(rings, out); }));

  SpeArgs spe;
  sc = app.add_subcommand("spe", "sinusoidal positional encoding as CSV");
  add_common(sc, spe.common);
  sc->add_option("--channels", spe.channels, "channel count C")->required();
  sc->add_option("--dim", spe.dim, "fixed dimension index d");
  sc->add_flag("--alternating", spe.alternating, "sin/cos by position parity");
  sc->add_option("--out", spe.out, "CSV output (stdout when absent)");
  sc->callback(guard([&] { return cmd_spe(spe, out); }));

  DamForwardArgs damf;
  sc = app.add_subcommand("dam-forward", "apply a seeded DAM to a feature map");
  add_common(sc, damf.common);
  sc->add_option("--in", damf.in, "RIMG feature map")->required();
  sc->add_option("--out", damf.out, "RIMG output")->required();
  sc->add_option("--hidden", damf.hidden, "MLP hidden width (default C/4)");
  sc->add_option("--dim", damf.dim, "SPE dimension index");
  sc->add_flag("--no-gap", damf.no_gap, "disable the pooling branch");
  sc->add_flag("--no-spe", damf.no_spe, "disable the positional branch");
  sc->add_flag("--no-bias", damf.no_bias, "bias-free MLP");
  sc->callback(guard([&] { return cmd_dam_forward(damf, out); }));

  GradcheckArgs grad;
  sc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(sc, grad.common);
  sc->add_option("--eps", grad.eps, "central difference step");
  sc->add_option("--tol", grad.tol, "max relative error");
  sc->add_option("--seeds", grad.seeds, "number of seeds starting at --seed");
  sc->callback(guard([&] { return cmd_gradcheck(grad, out); }));

  EvalArgs eval;
  sc = app.add_subcommand("eval", "per-class IoU and mIoU of predictions");
  add_common(sc, eval.common);
  sc->add_option("--gt", eval.gt, ".label file or directory")->required();
  sc->add_option("--pred", eval.pred, ".label file or directory")->required();
  sc->add_option("--classes", eval.classes, "number of classes K")->required();
  sc->add_flag("--map-pred", eval.map_pred, "apply the class map to predictions too");
  sc->add_option("--csv", eval.csv, "CSV output");
  sc->callback(guard([&] { return cmd_eval(eval, out); }));

  FeatdivArgs featdiv;
  sc = app.add_subcommand("featdiv", "channel cosine distance of RIMG feature dumps");
  add_common(sc, featdiv.common);
  sc->add_option("--in", featdiv.in, "RIMG feature maps")->required();
  sc->callback(guard([&] { return cmd_featdiv(featdiv, out); }));

  TrainArgs train;
  sc = app.add_subcommand("train-toy", "train the toy model on synthetic scenes");
  add_common(sc, train.common);
  sc->add_option("--steps", train.steps, "SGD steps");
  sc->add_option("--lr", train.lr, "learning rate");
  sc->add_option("--momentum", train.momentum, "momentum");
  sc->add_option("--batch", train.batch, "scenes per step");
  sc->add_option("--scenes", train.scenes, "training scenes");
  sc->add_option("--eval-scenes", train.eval_scenes, "held-out scenes");
  sc->add_flag("--no-gap", train.no_gap, "disable the pooling branch");
  sc->add_flag("--no-spe", train.no_spe, "disable the positional branch");
  sc->add_option("--loss-csv", train.loss_csv, "loss curve CSV");
  sc->add_option("--checkpoint", train.checkpoint, "parameter checkpoint output");
  sc->add_option("--features", train.features, "directory for per-stage feature dumps");
  sc->callback(guard([&] { return cmd_train(train, out); }));

  AblateArgs ablate;
  sc = app.add_subcommand("ablate", "GAP / SPE ablation on synthetic scenes");
  add_common(sc, ablate.common);
  sc->add_option("--steps", ablate.options.steps, "SGD steps per config");
  sc->add_option("--train-scenes", ablate.options.train_scenes, "training scenes");
  sc->add_option("--eval-scenes", ablate.options.eval_scenes, "held-out scenes");
  sc->add_option("--csv", ablate.csv, "CSV output");
  sc->callback(guard([&] { return cmd_ablate(ablate, out); }));

  BenchArgs bench;
  sc = app.add_subcommand("bench", "single-thread projection timing");
  add_common(sc, bench.common);
  sc->add_option("--points", bench.points, "points per scan");
  sc->add_option("--repeats", bench.repeats, "timed repetitions");
  sc->add_option("--budget-ms", bench.budget_ms, "warn above this time");
  sc->callback(guard([&] { return cmd_bench(bench, out, err); }));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const auto* active = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << active->help();
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return code;
}

}  // namespace rangedam::cli
