#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "affconv/experiment.hpp"
#include "affconv/properties.hpp"

using namespace affconv;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  int id;
  std::string name;
  bool passed;
  std::string detail;
  double seconds;
};

std::vector<Criterion> results;

void report(int id, const std::string& name, bool passed, const std::string& detail, double seconds) {
  results.push_back({id, name, passed, detail, seconds});
  std::printf("[%s] %2d %-28s %8.1fs  %s\n", passed ? "PASS" : "FAIL", id, name.c_str(), seconds, detail.c_str());
  std::fflush(stdout);
}

void from_property(int id, const props::PropertyResult& r) { report(id, r.name, r.passed, r.detail, r.seconds); }

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

RunResult train_from(const std::string& config) {
  return run_training(load_experiment(ConfigDoc::parse("format_version = 1\n" + config, "acceptance")));
}

const fs::path root = fs::temp_directory_path() / "affconv_acceptance";

// Reconstruction on deformed icospheres: the affine skip must not hurt MoNet or FeaStNet.
void reconstruction_analog() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = root / "icosphere";
  data::generate(ConfigDoc::parse("format_version = 1\ngenerator = icosphere\nsubdivisions = 2\npool_levels = 2\n"
                                  "samples = 100\nseed = 1\n"),
                 data.string());
  auto run = [&](const std::string& conv, const std::string& wrapper) {
    return train_from("dataset = " + (data / "manifest.txt").string() + "\noutput = " +
                      (root / ("rec_" + conv + "_" + wrapper)).string() +
                      "\narchitecture = autoencoder\nconv = " + conv + "\nkernel_size = 9\nwrapper = " + wrapper +
                      "\nchannels = 16, 16\nlatent = 8\nepochs = 200\nbatch_size = 16\nseed = 1\n")
        .metrics.error.mean;
  };
  const double monet = run("monet", "none"), aff_monet = run("monet", "affine");
  const double feast = run("feastnet", "none"), aff_feast = run("feastnet", "affine");
  const double secs = since(t0);
  report(7, "reconstruction analog", aff_monet <= monet && aff_feast <= feast && secs < 600.0,
         "mean error MoNet " + fmt(monet) + " -> Aff " + fmt(aff_monet) + ", FeaStNet " + fmt(feast) + " -> Aff " +
             fmt(aff_feast),
         secs);
}

// Dense correspondence on 162-vertex poses: Aff-GCN >= Res-GCN >= GCN at radius 0.
void correspondence_analog() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = root / "correspondence";
  data::generate(ConfigDoc::parse("format_version = 1\ngenerator = correspondence\nsubdivisions = 2\nposes = 20\n"
                                  "amplitude = 0.8\nstretch = 0.4\njitter = 0.08\nseed = 2\n"),
                 data.string());
  bool monotone = true;
  auto run = [&](const std::string& wrapper) {
    const auto m = train_from("dataset = " + (data / "manifest.txt").string() + "\noutput = " +
                              (root / ("corr_gcn_" + wrapper)).string() +
                              "\narchitecture = correspondence\nconv = gcn\nwrapper = " + wrapper +
                              "\nepochs = 100\nseed = 1\n")
                       .metrics;
    for (std::size_t k = 1; k < m.curve.size(); ++k) monotone = monotone && m.curve[k].accuracy >= m.curve[k - 1].accuracy;
    return m.curve.front().accuracy;
  };
  const double gcn = run("none"), res = run("residual"), aff = run("affine");
  const double secs = since(t0);
  report(8, "correspondence analog", aff >= res && res >= gcn && monotone && secs < 600.0,
         "radius-0 accuracy GCN " + fmt(gcn) + "%, Res " + fmt(res) + "%, Aff " + fmt(aff) + "%, curves " +
             (monotone ? "nondecreasing" : "NOT monotone"),
         secs);
}

// Same seed and config twice, single thread, fp64: every output byte matches.
void determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  bool same = true;
  auto files = [](const fs::path& dir) {
    std::string all;
    for (const char* f : {"checkpoint.ckpt", "metrics.json", "metrics.csv", "train_log.csv"})
      all += read_text_file((dir / f).string());
    return all;
  };
  for (int pass = 0; pass < 2; ++pass) {
    const auto gen = root / ("det_data_" + std::to_string(pass));
    data::generate(ConfigDoc::parse("format_version = 1\ngenerator = correspondence\nsubdivisions = 1\nposes = 6\n"
                                    "seed = 5\n"),
                   gen.string());
  }
  for (const char* f : {"manifest.txt", "pose_0003.off", "template.off"})
    same = same && read_text_file((root / "det_data_0" / f).string()) == read_text_file((root / "det_data_1" / f).string());
  const std::vector<std::string> configs = {
      "architecture = correspondence\nconv = feastnet\nkernel_size = 3\nwrapper = affine\nchannels = 8, 8\n"
      "hidden = 16\nepochs = 3\nprecision = fp64\nthreads = 1\nseed = 13\n",
      "architecture = correspondence\nconv = monet\nkernel_size = 2\nwrapper = residual\nchannels = 8\n"
      "hidden = 16\nepochs = 3\nprecision = fp64\nthreads = 1\nseed = 14\n"};
  std::size_t compared = 0;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    std::string first;
    for (int pass = 0; pass < 2; ++pass) {
      const auto out = root / ("det_run_" + std::to_string(c) + "_" + std::to_string(pass));
      train_from("dataset = " + (root / ("det_data_" + std::to_string(pass)) / "manifest.txt").string() +
                 "\noutput = " + out.string() + "\n" + configs[c]);
      const auto bytes = files(out);
      if (pass == 0)
        first = bytes;
      else
        same = same && bytes == first;
      compared += bytes.size();
    }
  }
  report(9, "determinism", same, std::to_string(compared / 2) + " bytes of checkpoints and metrics compared" +
                                     (same ? ", identical" : ", DIFFER"),
         since(t0));
}

}  // namespace

int main() {
  fs::remove_all(root);
  fs::create_directories(root);
  auto guard = [](int id, const std::string& name, const std::function<void()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      f();
    } catch (const std::exception& e) {
      report(id, name, false, std::string("exception: ") + e.what(), since(t0));
    }
  };
  {
    auto r = props::gradient_fidelity(1e-5);
    r.passed = r.passed && r.seconds < 120.0;
    from_property(1, r);
  }
  from_property(2, props::affine_exactness());
  from_property(3, props::rbf_reproduction());
  from_property(4, props::permutation_equivariance());
  from_property(5, props::oracle_equivalence());
  from_property(6, props::parameter_parity());
  guard(7, "reconstruction analog", reconstruction_analog);
  guard(8, "correspondence analog", correspondence_analog);
  guard(9, "determinism", determinism);
  from_property(10, props::self_loop_ablation());

  std::size_t passed = 0;
  for (const auto& c : results) passed += c.passed;
  std::printf("%zu/%zu criteria passed\n", passed, results.size());
  fs::remove_all(root);
  return passed == results.size() ? 0 : 1;
}
