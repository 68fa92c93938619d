#include "rangedam_cli/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "rangedam/core_io.hpp"
#include "rangedam/metrics.hpp"
#include "rangedam_cli/config.hpp"

namespace rangedam::cli {
namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

void write_text(const fixtures::fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(Cli, SpeCsv) {
  fixtures::TempDir dir("cli");
  const auto r = invoke({"spe", "--channels", "128", "--dim", "0", "--out", (dir / "spe.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream f(dir / "spe.csv");
  std::string header, row0;
  std::getline(f, header);
  std::getline(f, row0);
  EXPECT_EQ(header, "pos,value");
  EXPECT_EQ(row0, "0,0");
  std::stringstream rest;
  rest << f.rdbuf();
  EXPECT_EQ(lines(rest.str()), 127u);
}

TEST(Cli, UsageErrors) {
  auto r = invoke({"spe", "--channels", "4", "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"spe"}).code, 2);
  EXPECT_EQ(invoke({"spe", "--channels", "4", "--dim", "4"}).code, 2);
  EXPECT_EQ(invoke({"spe", "--channels", "4", "--precision", "half"}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, ProjectHappyPathAndIdempotence) {
  fixtures::TempDir dir("cli");
  std::mt19937_64 rng(1);
  const PointCloud cloud = fixtures::random_cloud(2000, 64, rng);
  write_point_cloud_bin(cloud, dir / "scan.bin");
  write_ring_sidecar(*cloud.ring, dir / "scan.ring");
  const std::vector<std::string> args{"project", "--in", (dir / "scan.bin").string(), "--ring",
                                      (dir / "scan.ring").string(), "--width", "2048", "--height", "64",
                                      "--out", (dir / "scan.rimg").string()};
  const auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const RangeImage img = read_range_image(dir / "scan.rimg");
  EXPECT_EQ(img.height, 64u);
  EXPECT_EQ(img.width, 2048u);
  EXPECT_EQ(img.lut.size(), 2000u);
  for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_EQ(img.lut[i].v, (*cloud.ring)[i]);
  const auto first = fixtures::read_bytes(dir / "scan.rimg");
  ASSERT_EQ(invoke(args).code, 0);
  EXPECT_EQ(fixtures::read_bytes(dir / "scan.rimg"), first);
}

TEST(Cli, ProjectDirectoryWithWorkers) {
  fixtures::TempDir dir("cli");
  fixtures::fs::create_directories(dir / "in");
  std::mt19937_64 rng(2);
  for (int i = 0; i < 4; ++i) {
    const PointCloud c = fixtures::random_cloud(300, 16, rng);
    write_point_cloud_bin(c, dir / ("in/" + std::to_string(i) + ".bin"));
    write_ring_sidecar(*c.ring, dir / ("in/" + std::to_string(i) + ".ring"));
  }
  const auto r = invoke({"project", "--in", (dir / "in").string(), "--out", (dir / "out").string(), "--height", "16",
                         "--width", "128", "--threads", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out), 4u);
  const auto serial = invoke({"project", "--in", (dir / "in/2.bin").string(), "--ring", (dir / "in/2.ring").string(),
                              "--out", (dir / "single.rimg").string(), "--height", "16", "--width", "128"});
  ASSERT_EQ(serial.code, 0);
  EXPECT_EQ(fixtures::read_bytes(dir / "out/2.rimg"), fixtures::read_bytes(dir / "single.rimg"));
}

TEST(Cli, DomainErrorsExitOne) {
  fixtures::TempDir dir("cli");
  auto r = invoke({"project", "--in", (dir / "missing.bin").string(), "--out", (dir / "x.rimg").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(lines(r.err), 1u) << r.err;
  fixtures::write_bytes(dir / "bad.bin", {1, 2, 3});
  EXPECT_EQ(invoke({"project", "--in", (dir / "bad.bin").string(), "--out", (dir / "x.rimg").string()}).code, 1);
}

TEST(Cli, RingsBackprojectRoundTrip) {
  fixtures::TempDir dir("cli");
  write_point_cloud_bin(fixtures::sweep_cloud(3, 100, false, 4), dir / "sweep.bin");
  auto r = invoke({"rings", "--in", (dir / "sweep.bin").string(), "--height", "64", "--out",
                   (dir / "sweep.ring").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("3 rings"), std::string::npos);
  EXPECT_EQ(read_ring_sidecar(dir / "sweep.ring").back(), 2);
  EXPECT_EQ(invoke({"rings", "--in", (dir / "sweep.bin").string(), "--height", "2"}).code, 1);

  ASSERT_EQ(invoke({"project", "--in", (dir / "sweep.bin").string(), "--out", (dir / "s.rimg").string(), "--height",
                    "3", "--width", "512"})
                .code,
            0);
  r = invoke({"backproject", "--in", (dir / "s.rimg").string(), "--out", (dir / "back.bin").string(), "--height", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(read_point_cloud_bin(dir / "back.bin").size(), 0u);
}

TEST(Cli, DamForwardAndFeatdiv) {
  fixtures::TempDir dir("cli");
  RangeImage feat = RangeImage::empty(8, 3, 4);
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (auto& v : feat.data) v = n(rng);
  std::fill(feat.valid.begin(), feat.valid.end(), 1);
  write_range_image(feat, dir / "f.rimg");
  auto r = invoke({"dam-forward", "--in", (dir / "f.rimg").string(), "--out", (dir / "g.rimg").string(), "--seed",
                   "3", "--precision", "verify"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out), 9u);
  const RangeImage out = read_range_image(dir / "g.rimg");
  EXPECT_EQ(out.channels, 8u);

  r = invoke({"featdiv", "--in", (dir / "f.rimg").string(), (dir / "g.rimg").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out), 2u);
  // Positive per-channel scaling leaves the statistic unchanged.
  const auto a = r.out.substr(r.out.find(',') + 1, r.out.find('\n') - r.out.find(',') - 1);
  const auto second = r.out.substr(r.out.find('\n') + 1);
  EXPECT_NEAR(std::stod(a), std::stod(second.substr(second.find(',') + 1)), 1e-6);
}

TEST(Cli, GradcheckPasses) {
  const auto r = invoke({"gradcheck", "--seed", "42", "--eps", "1e-5", "--tol", "1e-4"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("dam_forward"), std::string::npos);
  EXPECT_NE(r.out.find("model_2stage"), std::string::npos);
  // An impossible tolerance fails with a domain exit code.
  EXPECT_EQ(invoke({"gradcheck", "--seed", "42", "--tol", "1e-300"}).code, 1);
}

TEST(Cli, EvalFilesAndDirectories) {
  fixtures::TempDir dir("cli");
  fixtures::fs::create_directories(dir / "gt");
  fixtures::fs::create_directories(dir / "pred");
  write_labels(LabelArray{{0, 0, 1, 1}}, dir / "gt/a.label");
  write_labels(LabelArray{{0, 1, 1, 1}}, dir / "pred/a.label");
  write_labels(LabelArray{{1, 255}}, dir / "gt/b.label");
  write_labels(LabelArray{{1, 0}}, dir / "pred/b.label");

  auto r = invoke({"eval", "--gt", (dir / "gt/a.label").string(), "--pred", (dir / "pred/a.label").string(),
                   "--classes", "2", "--csv", (dir / "a.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("58.33"), std::string::npos) << r.out;
  std::ifstream csv(dir / "a.csv");
  std::stringstream text;
  text << csv.rdbuf();
  EXPECT_NE(text.str().find("mean,miou,0.58333333333333"), std::string::npos) << text.str();

  r = invoke({"eval", "--gt", (dir / "gt").string(), "--pred", (dir / "pred").string(), "--classes", "2", "--threads",
              "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  // Pooled: gt 0,0,1,1,1 vs pred 0,1,1,1,1 -> IoU0 = 1/2, IoU1 = 3/4.
  EXPECT_NE(r.out.find("62.50"), std::string::npos) << r.out;

  write_text(dir / "map.txt", "0 = 1\n1 = 0\n");
  r = invoke({"eval", "--gt", (dir / "gt/a.label").string(), "--pred", (dir / "pred/a.label").string(), "--classes",
              "2", "--class-map", (dir / "map.txt").string(), "--map-pred"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("58.33"), std::string::npos);

  write_labels(LabelArray{{0}}, dir / "short.label");
  EXPECT_EQ(invoke({"eval", "--gt", (dir / "gt/a.label").string(), "--pred", (dir / "short.label").string(),
                    "--classes", "2"})
                .code,
            1);
  fixtures::fs::remove(dir / "pred/b.label");
  EXPECT_EQ(invoke({"eval", "--gt", (dir / "gt").string(), "--pred", (dir / "pred").string(), "--classes", "2"}).code,
            1);
}

TEST(Cli, TrainToyOutputs) {
  fixtures::TempDir dir("cli");
  const std::vector<std::string> args{"train-toy", "--steps", "4", "--scenes", "2", "--eval-scenes", "1", "--batch",
                                      "1", "--seed", "3", "--loss-csv", (dir / "loss.csv").string(), "--checkpoint",
                                      (dir / "m.fmv3").string(), "--features", (dir / "feat").string()};
  auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("final_loss"), std::string::npos);
  const auto loss = fixtures::read_bytes(dir / "loss.csv");
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 5);
  EXPECT_TRUE(fixtures::fs::exists(dir / "m.fmv3"));
  EXPECT_EQ(read_range_image(dir / "feat/stage1.rimg").channels, 16u);
  ASSERT_EQ(invoke({"featdiv", "--in", (dir / "feat/stage0.rimg").string()}).code, 0);

  r = invoke(args);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(fixtures::read_bytes(dir / "loss.csv"), loss);
}

TEST(Cli, AblateSmall) {
  fixtures::TempDir dir("cli");
  const auto r = invoke({"ablate", "--steps", "2", "--train-scenes", "2", "--eval-scenes", "1", "--csv",
                         (dir / "ab.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out), 5u);
  const auto csv = fixtures::read_bytes(dir / "ab.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Cli, BenchReports) {
  const auto r = invoke({"bench", "--points", "5000", "--repeats", "1", "--height", "32", "--width", "512"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find(" ms"), std::string::npos);
  const auto slow = invoke({"bench", "--points", "5000", "--repeats", "1", "--budget-ms", "0"});
  EXPECT_EQ(slow.code, 0);
  EXPECT_NE(slow.err.find("warning"), std::string::npos);
}

TEST(Config, KeyValueParsing) {
  Config cfg;
  apply_config_text(cfg, "# sensor\nwidth = 1024\nheight=32 # rings\nlvfov = -24.8\nprecision = verify\n"
                         "normalize_intensity = true\nthreads = 4\nseed = 9\n");
  EXPECT_EQ(cfg.width, 1024u);
  EXPECT_EQ(cfg.height, 32u);
  EXPECT_DOUBLE_EQ(cfg.fov.lvfov, -24.8);
  EXPECT_EQ(cfg.precision, Precision::verify);
  EXPECT_TRUE(cfg.normalize_intensity);
  EXPECT_EQ(cfg.threads, 4u);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_THROW(apply_config_text(cfg, "colour = red\n"), UsageError);
  EXPECT_THROW(apply_config_text(cfg, "width = wide\n"), UsageError);
  EXPECT_THROW(apply_config_text(cfg, "width\n"), UsageError);
  Config bad;
  bad.fov.lvfov = 10.0;
  EXPECT_THROW(bad.validate(), UsageError);
  bad = Config{};
  bad.channel_order = "range,x,y,z,intensity";
  EXPECT_THROW(bad.validate(), UsageError);
}

TEST(Config, FlagsOverrideFile) {
  fixtures::TempDir dir("cli");
  write_text(dir / "cfg.txt", "width = 64\nheight = 4\n");
  write_point_cloud_bin(fixtures::sweep_cloud(4, 50, true, 1), dir / "s.bin");
  ASSERT_EQ(invoke({"project", "--config", (dir / "cfg.txt").string(), "--width", "32", "--in",
                    (dir / "s.bin").string(), "--out", (dir / "s.rimg").string()})
                .code,
            0);
  const RangeImage img = read_range_image(dir / "s.rimg");
  EXPECT_EQ(img.width, 32u);
  EXPECT_EQ(img.height, 4u);
  write_text(dir / "bad.txt", "nonsense = 1\n");
  EXPECT_EQ(invoke({"spe", "--channels", "4", "--config", (dir / "bad.txt").string()}).code, 2);
}

TEST(Config, PrecisionEnvironment) {
  ::setenv("RANGE_DAM_PRECISION", "verify", 1);
  Config cfg;
  apply_environment(cfg);
  EXPECT_EQ(cfg.precision, Precision::verify);
  ::setenv("RANGE_DAM_PRECISION", "quad", 1);
  EXPECT_THROW(apply_environment(cfg), UsageError);
  EXPECT_EQ(invoke({"spe", "--channels", "4"}).code, 2);
  ::unsetenv("RANGE_DAM_PRECISION");
}

}  // namespace
}  // namespace rangedam::cli
