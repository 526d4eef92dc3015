#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pwseg/pwseg.hpp"

using namespace pwseg;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / "pwseg_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir / "data");
    write_text((dir / "sphere.spec").string(),
               "dims = 16,16,16\nnoise_std = 0.05\nellipsoid = 7.5,7.5,7.5,5,5,5,1\n");
    write_text((dir / "tiny.cfg").string(),
               "layers_L = 1\nembed_dim_K = 16\npatch_size_P = 8\nheads_H = 2\niterations = 2\n");
    ASSERT_EQ(run("gen-synthetic --spec " + p("sphere.spec") + " --seed 1 --out-intensity " +
                  p("data/s_image.pvol") + " --out-truth " + p("truth.pvol")),
              0);
    ASSERT_EQ(run("annotate --truth " + p("truth.pvol") + " --n 10 --seed 2 --out " + p("points.txt")), 0);
    ASSERT_EQ(run("pseudolabel --points " + p("points.txt") + " --dims 16,16,16 --out-conf " +
                  p("data/s_conf.pvol") + " --out-mask " + p("pseudo.pvol")),
              0);
    ASSERT_EQ(run("train --data " + p("data") + " --config " + p("tiny.cfg") + " --seed 3 --out " + p("model.pckp")), 0);
  }

  static std::string p(const std::string& name) { return (dir / name).string(); }

  static int run(const std::string& args) {
    const std::string cmd = std::string(PWSEG_CLI_PATH) + " " + args + " >" + p("stdout.txt") + " 2>" + p("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string& name) {
    std::ifstream in(p(name), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, GenSyntheticRoundTripAndDeterminism) {
  const Phantom want = render_phantom(parse_phantom_spec(read_text(p("sphere.spec")), 1));
  EXPECT_EQ(read_pvol_volume(p("data/s_image.pvol")).data(), want.intensity.data());
  EXPECT_EQ(read_pvol_mask(p("truth.pvol")), want.truth);
  ASSERT_EQ(run("gen-synthetic --spec " + p("sphere.spec") + " --seed 1 --out-intensity " + p("again.pvol") +
                " --out-truth " + p("again_truth.pvol")),
            0);
  EXPECT_EQ(slurp("again.pvol"), slurp("data/s_image.pvol"));
  EXPECT_EQ(slurp("again_truth.pvol"), slurp("truth.pvol"));
}

TEST_F(Cli, GenSyntheticBadSpec) {
  write_text(p("bad.spec"), "dims = 8,8,8\nellipsoid = 4,4,4,9,1,1,1\n");
  EXPECT_EQ(run("gen-synthetic --spec " + p("bad.spec") + " --seed 1 --out-intensity " + p("x.pvol") +
                " --out-truth " + p("y.pvol")),
            2);
  EXPECT_EQ(run("gen-synthetic --spec " + p("missing.spec") + " --seed 1 --out-intensity " + p("x.pvol") +
                " --out-truth " + p("y.pvol")),
            3);
}

TEST_F(Cli, AnnotateMatchesLibraryAndErrors) {
  Rng r(2);
  EXPECT_EQ(read_points(p("points.txt")), sample_annotation(read_pvol_mask(p("truth.pvol")), 10, r));
  EXPECT_EQ(run("annotate --truth " + p("truth.pvol") + " --n 100000 --seed 2 --out " + p("many.txt")), 6);
  EXPECT_EQ(run("annotate --truth " + p("nope.pvol") + " --seed 2 --out " + p("many.txt")), 3);
}

TEST_F(Cli, PseudolabelAutoVariance) {
  const PointSet pts = read_points(p("points.txt"));
  const PseudoLabel want = generate_pseudo_label(pts, {16, 16, 16}, default_kernel_variance(pts));
  EXPECT_EQ(read_pvol_volume(p("data/s_conf.pvol")).data(), want.confidence.data());
  EXPECT_EQ(read_pvol_mask(p("pseudo.pvol")), threshold_label(want, 0.5));
  ASSERT_EQ(run("pseudolabel --points " + p("points.txt") + " --dims 16,16,16 --sigma2 2.5 --out-conf " + p("c.pvol") +
                " --out-mask " + p("m.pvol")),
            0);
  EXPECT_NE(slurp("stderr.txt").find("sigma2 = 2.5"), std::string::npos);
  EXPECT_EQ(read_pvol_volume(p("c.pvol")).data(), generate_pseudo_label(pts, {16, 16, 16}, 2.5).confidence.data());
  write_text(p("empty.txt"), "");
  EXPECT_EQ(run("pseudolabel --points " + p("empty.txt") + " --dims 16,16,16 --out-conf " + p("c.pvol") +
                " --out-mask " + p("m.pvol")),
            6);
  EXPECT_EQ(run("pseudolabel --points " + p("points.txt") + " --dims 16,16,16 --T 1.5 --out-conf " + p("c.pvol") +
                " --out-mask " + p("m.pvol")),
            2);
  EXPECT_EQ(run("pseudolabel --points " + p("points.txt") + " --dims 4,4,4 --out-conf " + p("c.pvol") +
                " --out-mask " + p("m.pvol")),
            4);
}

TEST_F(Cli, TrainZeroIterationsIsInit) {
  ASSERT_EQ(run("train --data " + p("data") + " --config " + p("tiny.cfg") + " --seed 3 --iterations 0 --out " +
                p("init.pckp")),
            0);
  const PipelineConfig c = load_config(p("tiny.cfg"));
  const ModelParams want = init_params(Architecture::from_config(c, {16, 16, 16}), Rng(3).split(0).next_u64());
  EXPECT_TRUE(read_checkpoint(p("init.pckp")) == want);
}

TEST_F(Cli, TrainIsByteIdenticalAndWritesLossCsv) {
  ASSERT_EQ(run("train --data " + p("data") + " --config " + p("tiny.cfg") + " --seed 3 --out " + p("model2.pckp") +
                " --loss-csv " + p("loss2.csv")),
            0);
  EXPECT_EQ(slurp("model2.pckp"), slurp("model.pckp"));
  EXPECT_EQ(slurp("loss2.csv"), slurp("model.pckp.loss.csv"));
  const std::string csv = slurp("loss2.csv");
  EXPECT_EQ(csv.rfind("iteration,dice,pce,kl,total\n0,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(run("train --data " + p("nodir") + " --config " + p("tiny.cfg") + " --seed 3 --out " + p("x.pckp")), 3);
}

TEST_F(Cli, InferSinglePassAndSlidingWindow) {
  ASSERT_EQ(run("infer --volume " + p("data/s_image.pvol") + " --checkpoint " + p("model.pckp") +
                " --M 1 --seed 5 --out-prob " + p("prob1.pvol") + " --out-mask " + p("mask1.pvol")),
            0);
  const ModelParams params = read_checkpoint(p("model.pckp"));
  const VolumeGrid vol = read_pvol_volume(p("data/s_image.pvol"));
  EXPECT_EQ(read_pvol_volume(p("prob1.pvol")).data(), predict(params, vol, Rng(5).split(0)).data());

  ASSERT_EQ(run("infer --volume " + p("data/s_image.pvol") + " --checkpoint " + p("model.pckp") +
                " --M 2 --seed 5 --out-prob " + p("prob2.pvol") + " --out-mask " + p("mask2.pvol")),
            0);
  ASSERT_EQ(run("infer --volume " + p("data/s_image.pvol") + " --checkpoint " + p("model.pckp") +
                " --M 2 --seed 5 --sliding-window --out-prob " + p("prob3.pvol") + " --out-mask " + p("mask3.pvol")),
            0);
  EXPECT_EQ(slurp("prob2.pvol"), slurp("prob3.pvol"));
  EXPECT_EQ(slurp("mask2.pvol"), slurp("mask3.pvol"));
}

TEST_F(Cli, InferShapeMismatch) {
  write_pvol(p("big.pvol"), new_volume({24, 16, 16}, 0.0));
  EXPECT_EQ(run("infer --volume " + p("big.pvol") + " --checkpoint " + p("model.pckp") + " --seed 1 --out-prob " +
                p("bp.pvol") + " --out-mask " + p("bm.pvol")),
            4);
  EXPECT_EQ(run("infer --volume " + p("big.pvol") + " --checkpoint " + p("model.pckp") +
                " --sliding-window --seed 1 --out-prob " + p("bp.pvol") + " --out-mask " + p("bm.pvol")),
            0);
  EXPECT_EQ(read_pvol_volume(p("bp.pvol")).dims(), (Dims{24, 16, 16}));
  EXPECT_EQ(run("infer --volume " + p("big.pvol") + " --checkpoint " + p("truth.pvol") + " --seed 1 --out-prob " +
                p("bp.pvol") + " --out-mask " + p("bm.pvol")),
            3);
}

TEST_F(Cli, EvalWritesCsv) {
  ASSERT_EQ(run("eval --pred " + p("pseudo.pvol") + " --truth " + p("truth.pvol") + " --organ sphere --out " +
                p("metrics.csv")),
            0);
  const BinaryMask pred = read_pvol_mask(p("pseudo.pvol")), truth = read_pvol_mask(p("truth.pvol"));
  EXPECT_EQ(slurp("metrics.csv"), format_metrics_csv({evaluate("sphere", pred, truth)}));
  EXPECT_NE(slurp("stdout.txt").find("sphere"), std::string::npos);
  write_pvol(p("empty.pvol"), BinaryMask({16, 16, 16}));
  EXPECT_EQ(run("eval --pred " + p("empty.pvol") + " --truth " + p("truth.pvol")), 5);
  write_pvol(p("small.pvol"), BinaryMask({8, 8, 8}));
  EXPECT_EQ(run("eval --pred " + p("small.pvol") + " --truth " + p("truth.pvol")), 4);
}

TEST_F(Cli, UsageErrorsAndHelp) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("infer --help"), 0);
  const std::string help = slurp("stdout.txt");
  EXPECT_NE(help.find("--M"), std::string::npos);
  EXPECT_NE(help.find("6"), std::string::npos);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("annotate --truth " + p("truth.pvol")), 2);
  EXPECT_EQ(run("annotate --truth " + p("truth.pvol") + " --n many --seed 1 --out " + p("q.txt")), 2);
}
