#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "affconv/io.hpp"

namespace fs = std::filesystem;
using affconv::read_text_file;
using affconv::write_text_file;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(AFFCONV_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p) != nullptr) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

double value_after(const std::string& text, const std::string& key) {
  const auto at = text.find(key);
  if (at == std::string::npos) return -1.0;
  return std::stod(text.substr(at + key.size()));
}

class Cli : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("affconv_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return (dir / name).string(); }

  // small icosphere set plus a GCN autoencoder config
  std::string dataset_and_config(std::size_t epochs) {
    write_text_file(p("gen.txt"),
                    "format_version = 1\ngenerator = icosphere\nsubdivisions = 1\nsamples = 6\nseed = 4\n");
    EXPECT_EQ(cli("gen " + p("gen.txt") + " --out " + p("data")).code, 0);
    write_text_file(p("train.txt"), "format_version = 1\ndataset = data/manifest.txt\noutput = run\n"
                                    "architecture = autoencoder\nconv = gcn\nwrapper = affine\nchannels = 4\n"
                                    "latent = 2\nbatch_size = 2\nepochs = " +
                                        std::to_string(epochs) + "\nseed = 9\n");
    return p("train.txt");
  }
};

}  // namespace

TEST_F(Cli, NoSubcommandIsUsageError) {
  const auto r = cli("");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("Subcommands"), std::string::npos);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("train").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Cli, GradcheckSingleOperator) {
  const auto r = cli("gradcheck --op monet");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
  EXPECT_LT(value_after(r.out, "max relative error "), 1e-5);
}

TEST_F(Cli, GradcheckFailureExitsTwo) {
  EXPECT_EQ(cli("gradcheck --op gcn --tol 0").code, 2);
  EXPECT_EQ(cli("gradcheck --op nosuchop").code, 1);
}

TEST_F(Cli, RbfFitAffineTargets) {
  std::string pts = "x,y\n", tgt = "f\n", query = "x,y\n";
  for (int i = 0; i < 12; ++i) {
    const double x = 0.1 * i + 0.03 * (i % 3), y = 0.07 * ((i * 5) % 12);
    pts += affconv::format_double(x) + "," + affconv::format_double(y) + "\n";
    tgt += affconv::format_double(2.0 * x - 0.5 * y + 1.0) + "\n";
  }
  query += "0.5,0.5\n";
  write_text_file(p("pts.csv"), pts);
  write_text_file(p("tgt.csv"), tgt);
  write_text_file(p("q.csv"), query);
  const auto r = cli("rbf-fit " + p("pts.csv") + " " + p("tgt.csv") + " --out " + p("m.ckpt") + " --query " +
                     p("q.csv") + " --pred " + p("pred.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_LT(value_after(r.out, "|w|inf "), 1e-8);
  EXPECT_NE(r.out.find("affine f = "), std::string::npos);
  EXPECT_NEAR(value_after(r.out, "affine f = "), 1.0, 1e-8);
  EXPECT_TRUE(fs::exists(p("m.ckpt")));
  const auto pred = affconv::parse_csv(read_text_file(p("pred.csv")));
  EXPECT_NEAR(pred.values(0, 0), 1.75, 1e-9);
}

TEST_F(Cli, RbfFitDuplicateCentresIsNumericalFailure) {
  write_text_file(p("pts.csv"), "x,y\n0,0\n1,0\n0,1\n1,0\n");
  write_text_file(p("tgt.csv"), "f\n1\n2\n3\n4\n");
  EXPECT_EQ(cli("rbf-fit " + p("pts.csv") + " " + p("tgt.csv") + " --out " + p("m.ckpt")).code, 2);
  EXPECT_EQ(cli("rbf-fit " + p("pts.csv") + " " + p("tgt.csv") + " --kernel cubic").code, 1);
}

TEST_F(Cli, TrainZeroEpochsWritesInitialState) {
  const auto cfg = dataset_and_config(0);
  const auto r = cli("train -q " + cfg);
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"checkpoint.ckpt", "metrics.json", "metrics.csv", "train_log.csv", "resolved_config.txt"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  EXPECT_EQ(read_text_file(p("run/train_log.csv")), "epoch,lr,train_loss\n");
}

TEST_F(Cli, ResolvedConfigReproducesRun) {
  const auto cfg = dataset_and_config(2);
  ASSERT_EQ(cli("train -q " + cfg).code, 0);
  const auto ck = read_text_file(p("run/checkpoint.ckpt"));
  const auto metrics = read_text_file(p("run/metrics.json"));
  fs::copy_file(p("run/resolved_config.txt"), p("resolved.txt"));
  fs::remove_all(p("run"));
  ASSERT_EQ(cli("train -q " + p("resolved.txt")).code, 0);
  EXPECT_EQ(read_text_file(p("run/checkpoint.ckpt")), ck);
  EXPECT_EQ(read_text_file(p("run/metrics.json")), metrics);
  EXPECT_EQ(read_text_file(p("run/resolved_config.txt")), read_text_file(p("resolved.txt")));
}

TEST_F(Cli, SeedOverrideChangesWeights) {
  const auto cfg = dataset_and_config(0);
  ASSERT_EQ(cli("train -q " + cfg).code, 0);
  const auto a = read_text_file(p("run/checkpoint.ckpt"));
  ASSERT_EQ(cli("train -q " + cfg + " --seed 10").code, 0);
  EXPECT_NE(read_text_file(p("run/checkpoint.ckpt")), a);
  EXPECT_NE(read_text_file(p("run/resolved_config.txt")).find("seed = 10"), std::string::npos);
}

TEST_F(Cli, EvalAndReport) {
  const auto cfg = dataset_and_config(1);
  ASSERT_EQ(cli("train -q " + cfg).code, 0);
  const auto r = cli("eval " + cfg + " " + p("run/checkpoint.ckpt") + " --out " + p("eval.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(read_text_file(p("eval.json")), read_text_file(p("run/metrics.json")));
  const auto rep = cli("report " + p("eval.json"));
  ASSERT_EQ(rep.code, 0);
  EXPECT_EQ(rep.out, read_text_file(p("run/metrics.csv")));
}

TEST_F(Cli, ValidationErrorsExitOne) {
  const auto cfg = dataset_and_config(0);
  write_text_file(p("bad.txt"), read_text_file(cfg) + "colour = blue\n");
  const auto r = cli("train " + p("bad.txt"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("unknown key 'colour'"), std::string::npos);
  write_text_file(p("nover.txt"), "dataset = data/manifest.txt\n");
  EXPECT_EQ(cli("train " + p("nover.txt")).code, 1);
  write_text_file(p("bad.json"), "{not json");
  EXPECT_EQ(cli("report " + p("bad.json")).code, 1);
}

TEST_F(Cli, GenSeedIsByteDeterministic) {
  write_text_file(p("gen.txt"), "format_version = 1\ngenerator = superpixel\nsamples = 4\nseed = 1\n");
  ASSERT_EQ(cli("gen " + p("gen.txt") + " --out " + p("a")).code, 0);
  ASSERT_EQ(cli("gen " + p("gen.txt") + " --out " + p("b")).code, 0);
  ASSERT_EQ(cli("gen " + p("gen.txt") + " --out " + p("c") + " --seed 2").code, 0);
  EXPECT_EQ(read_text_file(p("a/graph_0001.csv")), read_text_file(p("b/graph_0001.csv")));
  EXPECT_NE(read_text_file(p("a/graph_0001.csv")), read_text_file(p("c/graph_0001.csv")));
}

TEST_F(Cli, SampleConfigsParse) {
  // the shipped generator specs run as-is
  for (const char* spec : {"gen_superpixel.txt"}) {
    const auto r = cli("gen " + std::string(AFFCONV_CONFIG_DIR) + "/" + spec + " --out " + p("sp"));
    EXPECT_EQ(r.code, 0) << r.out;
  }
}

TEST_F(Cli, PropsSuitePasses) {
  const auto r = cli("props");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}
