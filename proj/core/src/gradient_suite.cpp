#include "rangedam/gradient_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "rangedam/arch.hpp"
#include "rangedam/dam.hpp"

namespace rangedam::ad {
namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor<double> normal(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<double> t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data) v = dist(rng);
  return t;
}

// Scalar loss sum(out * w) for a fixed random projection w of out's shape.
Var<double> project(const Var<double>& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, out.tape().constant(normal(out.shape(), rng))));
}

struct Case {
  std::string name;
  std::vector<Tensor<double>> inputs;
  LossFn loss;
  bool sampled = false;
};

std::vector<Case> make_cases(Rng& rng) {
  std::vector<Case> cases;
  const std::uint64_t proj = rng();

  auto elementwise = [&](std::string name, std::function<Var<double>(const Var<double>&, const Var<double>&)> op) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
    cases.push_back({std::move(name), {normal(s, rng), normal(s, rng)},
                     [op, proj](Tape<double>&, std::span<const Var<double>> x) { return project(op(x[0], x[1]), proj); }});
  };
  elementwise("add", [](const auto& a, const auto& b) { return add(a, b); });
  elementwise("mul", [](const auto& a, const auto& b) { return mul(a, b); });

  {
    const double k = std::normal_distribution<double>(0.0, 2.0)(rng);
    cases.push_back({"scale", {normal(Shape{pick(rng, 1, 6), pick(rng, 1, 6)}, rng)},
                     [k, proj](Tape<double>&, std::span<const Var<double>> x) { return project(scale(x[0], k), proj); }});
  }
  {
    const std::size_t c = pick(rng, 1, 5);
    cases.push_back({"scale_broadcast",
                     {normal(Shape{c, pick(rng, 1, 5), pick(rng, 1, 5)}, rng), normal(Shape{c}, rng)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) {
                       return project(scale_broadcast(x[0], x[1]), proj);
                     }});
  }
  {
    const std::size_t a = pick(rng, 1, 4), b = pick(rng, 1, 4);
    cases.push_back({"reshape", {normal(Shape{a, b}, rng)}, [a, b, proj](Tape<double>&, std::span<const Var<double>> x) {
                       return project(reshape(x[0], Shape{b, a, 1}), proj);
                     }});
    cases.push_back({"sum", {normal(Shape{a, b}, rng)},
                     [](Tape<double>&, std::span<const Var<double>> x) { return sum(x[0]); }});
  }
  {
    const std::size_t m = pick(rng, 1, 5), n = pick(rng, 1, 5), p = pick(rng, 1, 5);
    cases.push_back({"matmul", {normal(Shape{m, n}, rng), normal(Shape{n, p}, rng)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) { return project(matmul(x[0], x[1]), proj); }});
  }
  {
    const std::size_t c = pick(rng, 1, 3);
    cases.push_back({"depthwise_conv7",
                     {normal(Shape{c, pick(rng, 1, 9), pick(rng, 1, 9)}, rng), normal(Shape{c, 7, 7}, rng, 0.3)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) {
                       return project(depthwise_conv7(x[0], x[1]), proj);
                     }});
  }
  {
    const std::size_t c = pick(rng, 1, 4), o = pick(rng, 1, 4);
    cases.push_back({"pointwise_conv",
                     {normal(Shape{c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng), normal(Shape{o, c}, rng), normal(Shape{o}, rng)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) {
                       return project(pointwise_conv(x[0], x[1], x[2]), proj);
                     }});
    cases.push_back({"patch_merge2x2",
                     {normal(Shape{c, 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)}, rng), normal(Shape{o, 4 * c}, rng),
                      normal(Shape{o}, rng)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) {
                       return project(patch_merge2x2(x[0], x[1], x[2]), proj);
                     }});
    cases.push_back({"upsample_nearest2x", {normal(Shape{c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) { return project(upsample_nearest2x(x[0]), proj); }});
  }
  {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
    cases.push_back({"gelu", {normal(s, rng, 2.0)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) { return project(gelu(x[0]), proj); }});
    cases.push_back({"sigmoid", {normal(s, rng, 2.0)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) { return project(sigmoid(x[0]), proj); }});
    cases.push_back({"global_avg_pool", {normal(s, rng)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) { return project(global_avg_pool(x[0]), proj); }});
  }
  {
    const std::size_t c = pick(rng, 2, 6);
    cases.push_back({"layer_norm",
                     {normal(Shape{c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng), normal(Shape{c}, rng), normal(Shape{c}, rng)},
                     [proj](Tape<double>&, std::span<const Var<double>> x) {
                       return project(layer_norm(x[0], x[1], x[2], 1e-6), proj);
                     }});
  }
  {
    const std::size_t k = pick(rng, 2, 6), target = pick(rng, 0, k - 1);
    cases.push_back({"softmax_cross_entropy", {normal(Shape{k}, rng, 2.0)},
                     [target](Tape<double>&, std::span<const Var<double>> x) { return softmax_cross_entropy(x[0], target); }});
  }
  {
    const std::size_t k = pick(rng, 2, 4), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    std::vector<std::uint16_t> labels(h * w);
    for (auto& l : labels) {
      const std::size_t draw = pick(rng, 0, k);
      l = draw == k ? std::uint16_t{255} : static_cast<std::uint16_t>(draw);
    }
    cases.push_back({"pixel_cross_entropy", {normal(Shape{k, h, w}, rng, 2.0)},
                     [labels](Tape<double>&, std::span<const Var<double>> x) {
                       return pixel_cross_entropy(x[0], std::span<const std::uint16_t>(labels), 255);
                     }});
  }

  // Composite: DAM with random flags.
  {
    const std::size_t c = pick(rng, 1, 8), hidden = pick(rng, 1, 4);
    dam::DamConfig cfg;
    cfg.use_gap = pick(rng, 0, 3) != 0;
    cfg.use_spe = pick(rng, 0, 3) != 0;
    cfg.spe_dim = pick(rng, 0, c - 1);
    const auto spe = dam::spe_as<double>({cfg.spe_dim, c, 10000.0, false});
    cases.push_back({"dam_forward",
                     {normal(Shape{c, pick(rng, 1, 6), pick(rng, 1, 6)}, rng), normal(Shape{hidden, c}, rng),
                      normal(Shape{hidden}, rng), normal(Shape{c, hidden}, rng), normal(Shape{c}, rng)},
                     [cfg, spe, proj](Tape<double>&, std::span<const Var<double>> x) {
                       const dam::DamLeaves<double> w{x[1], x[2], x[3], x[4]};
                       return project(dam::dam_forward(x[0], w, cfg, std::span<const double>(spe)), proj);
                     }});
  }

  // Composite: one block of each kind with every parameter randomized.
  for (const auto kind : {arch::BlockKind::plain, arch::BlockKind::depth_aware}) {
    const arch::BlockSpec spec{pick(rng, 2, 4), 4, kind};
    arch::BlockOptions options;
    options.dam.spe_dim = pick(rng, 0, spec.width() - 1);
    arch::ParamStore<double> store;
    arch::append_block_params(store, "b", spec, options, rng);
    std::vector<Tensor<double>> inputs{normal(Shape{spec.channels, pick(rng, 1, 5), pick(rng, 1, 5)}, rng)};
    for (const auto& e : store) {
      Tensor<double> t = e.value;
      std::normal_distribution<double> jitter(0.0, 0.5);
      for (double& v : t.data) v += jitter(rng);
      inputs.push_back(std::move(t));
    }
    const auto spe = dam::spe_as<double>({options.dam.spe_dim, spec.width(), 10000.0, false});
    cases.push_back({kind == arch::BlockKind::plain ? "block_plain" : "block_depth_aware", std::move(inputs),
                     [spec, options, spe, proj](Tape<double>&, std::span<const Var<double>> x) {
                       return project(arch::block_forward(x[0], spec, options, x.subspan(1), std::span<const double>(spe)),
                                      proj);
                     }});
  }

  // Composite: 2-stage model, C = {4, 8}, 8 x 8 input.
  {
    arch::ModelSpec spec;
    spec.in_channels = 5;
    spec.num_classes = 3;
    spec.stages = {{2, 1}, arch::Placement::last_one};
    spec.widths = {4, 8};
    auto model = std::make_shared<arch::SegmentationModel<double>>(spec, rng());
    std::vector<Tensor<double>> inputs{normal(Shape{5, 8, 8}, rng)};
    for (const auto& e : model->params()) {
      Tensor<double> t = e.value;
      std::normal_distribution<double> jitter(0.0, 0.3);
      for (double& v : t.data) v += jitter(rng);
      inputs.push_back(std::move(t));
    }
    cases.push_back({"model_2stage", std::move(inputs),
                     [model, proj](Tape<double>&, std::span<const Var<double>> x) {
                       return project(model->forward(x[0], x.subspan(1)), proj);
                     },
                     true});
  }
  return cases;
}

}  // namespace

std::vector<SuiteEntry> run_gradient_suite(const SuiteOptions& options) {
  std::vector<SuiteEntry> entries;
  for (std::size_t s = 0; s < options.seeds; ++s) {
    Rng rng(options.first_seed + s);
    auto cases = make_cases(rng);
    for (std::size_t i = 0; i < cases.size(); ++i) {
      GradCheckOptions check = options.check;
      check.seed = options.first_seed + s;
      if (cases[i].sampled) check.max_coords_per_input = options.model_coords_per_tensor;
      const auto result = gradcheck(cases[i].loss, cases[i].inputs, check);
      if (entries.size() <= i) entries.push_back({cases[i].name, 0.0, 0});
      entries[i].max_rel_err = std::max(entries[i].max_rel_err, result.max_rel_err);
      entries[i].coords_checked += result.coords_checked;
    }
  }
  return entries;
}

}  // namespace rangedam::ad
