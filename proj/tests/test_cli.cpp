#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "enaet/checkpoint.hpp"

// End-to-end checks of the command line binary: it is spawned as a subprocess
// so argument parsing, exit codes and printed output are exercised for real.

namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  const std::string dir = (fs::temp_directory_path() / ("enaet_cli_" + tag)).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct CliResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const std::string capture =
      (fs::temp_directory_path() / ("enaet_cli_out_" + std::to_string(counter++))).string();
  std::string cmd;
  if (!env.empty()) cmd += env + " ";
  cmd += std::string(ENAET_CLI_PATH) + " " + args + " > " + capture + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  fs::remove(capture);
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

// Tiny dataset plus a config that finishes in well under a second.
struct CliFixture {
  explicit CliFixture(const std::string& tag) : dir(temp_dir(tag)) {
    CliResult r = run_cli("prepare --out " + dir + "/data --count 60 --image-size 16 --seed 5");
    REQUIRE(r.code == 0);
    manifest = dir + "/data/manifest.csv";
    config = dir + "/tiny.cfg";
    std::ofstream out(config);
    out << "epochs = 2\nbatch_size = 8\ndata_portion = 0.4\nlambda_u = 5\n"
           "image_size = 16\ndepth = 10\nwidth = 1\nbase_channels = 8\n"
           "steps_per_epoch = 2\n";
  }
  std::string dir, manifest, config;
};

}  // namespace

TEST_CASE("prepare writes a dataset and refuses accidental overwrites") {
  const std::string dir = temp_dir("prepare");
  CliResult r = run_cli("prepare --out " + dir + " --count 30 --image-size 16 --seed 3");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "30 images"));
  REQUIRE(fs::exists(dir + "/manifest.csv"));

  CHECK(run_cli("prepare --out " + dir + " --count 30 --image-size 16").code == 2);
  CHECK(run_cli("prepare --out " + dir + " --count 30 --image-size 16 --force").code == 0);

  r = run_cli("inspect-data --data " + dir + "/manifest.csv --check-images --histogram-csv " +
              dir + "/hist.csv");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "records: 30"));
  CHECK(contains(r.output, "classes: 10"));
  CHECK(contains(r.output, "unreadable images: 0"));
  CHECK(fs::exists(dir + "/hist.csv"));
}

TEST_CASE("usage errors and missing inputs exit 2, --help exits 0") {
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("frobnicate").code == 2);
  CHECK(run_cli("train --out /tmp/x").code == 2);  // --data missing
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("train --data /nonexistent/manifest.csv --out /tmp/enaet_cli_nope").code == 2);
  CliResult r = run_cli("evaluate --data /nonexistent.csv --checkpoint /none --out /tmp/x");
  CHECK(r.code == 2);
  CHECK(contains(r.output, "error"));
}

TEST_CASE("device variable selects cpu thread counts and rejects the rest") {
  const std::string dir = temp_dir("device");
  CliResult ok = run_cli("prepare --out " + dir + " --count 10 --image-size 16");
  REQUIRE(ok.code == 0);
  const std::string inspect = "inspect-data --data " + dir + "/manifest.csv";
  CHECK(run_cli(inspect, "ENAET_DEVICE=cpu").code == 0);
  CHECK(run_cli(inspect, "ENAET_DEVICE=cpu:2").code == 0);
  CHECK(run_cli(inspect, "ENAET_DEVICE=cuda").code == 2);
  CHECK(run_cli(inspect, "ENAET_DEVICE=cpu:0").code == 2);
  CHECK(run_cli(inspect, "ENAET_DEVICE=cpu:x").code == 2);
}

TEST_CASE("train, evaluate and compare round trip through the binary") {
  CliFixture fx("roundtrip");
  const std::string run = fx.dir + "/run1";
  CliResult r = run_cli("train --data " + fx.manifest + " --out " + run + " --config " +
                        fx.config + " --seed 11");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "epoch 1"));
  CHECK(contains(r.output, "epoch 2"));
  CHECK(contains(r.output, "final checkpoint"));
  for (const char* f : {"config.snapshot", "vocabulary.txt", "splits.csv", "history.csv",
                        "curve.csv", "checkpoints/epoch_1", "checkpoints/epoch_2"})
    CHECK(fs::exists(run + "/" + f));
  CHECK_FALSE(fs::exists(run + "/.lock"));  // released on exit

  // A second run into the same directory needs --resume or --force.
  CHECK(run_cli("train --data " + fx.manifest + " --out " + run + " --config " + fx.config)
            .code == 2);

  // Resuming a finished run is a no-op.
  r = run_cli("train --data " + fx.manifest + " --out " + run + " --resume " + run +
              "/checkpoints/epoch_2");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "already complete"));

  // Resuming with a larger budget extends the same run.
  r = run_cli("train --data " + fx.manifest + " --out " + run + " --resume " + run +
              "/checkpoints/epoch_2 --epochs 3");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "epoch 3"));
  std::ifstream hist(run + "/history.csv");
  int lines = 0;
  std::string line;
  while (std::getline(hist, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 4);  // header plus three epochs

  r = run_cli("evaluate --data " + fx.manifest + " --checkpoint " + run +
              "/checkpoints/epoch_3 --out " + run + " --split test");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "top1 accuracy"));
  for (const char* f : {"report.json", "confusion.csv", "per_class.csv"})
    CHECK(fs::exists(run + "/" + f));
  CHECK(run_cli("evaluate --data " + fx.manifest + " --checkpoint " + run +
                "/checkpoints/epoch_3 --out " + run + " --split val")
            .code == 0);

  r = run_cli("compare " + run);
  CHECK(r.code == 0);
  CHECK(contains(r.output, "run1"));
  CHECK(contains(r.output, "labeled%"));
  CHECK(run_cli("compare " + fx.dir).code == 2);  // no report.json there
}

TEST_CASE("a stale lock blocks training unless forced") {
  CliFixture fx("lock");
  const std::string run = fx.dir + "/locked";
  fs::create_directories(run);
  std::ofstream(run + "/.lock") << "held\n";
  CliResult r =
      run_cli("train --data " + fx.manifest + " --out " + run + " --config " + fx.config);
  CHECK(r.code == 2);
  CHECK(contains(r.output, "busy"));
  CHECK(run_cli("train --data " + fx.manifest + " --out " + run + " --config " + fx.config +
                " --force")
            .code == 0);
}

TEST_CASE("vocabulary mismatches against a checkpoint exit 4") {
  CliFixture fx("vocab");
  const std::string run = fx.dir + "/run";
  REQUIRE(run_cli("train --data " + fx.manifest + " --out " + run + " --config " + fx.config)
              .code == 0);

  // Same images, different labels: the checkpoint's classes no longer apply.
  const std::string alt = fx.dir + "/alt_manifest.csv";
  {
    std::ifstream in(fx.manifest);
    std::ofstream out(alt);
    std::string line;
    std::getline(in, line);
    out << line << "\n";
    int i = 0;
    while (std::getline(in, line)) {
      const std::size_t comma = line.find(',');
      out << line.substr(0, comma) << "," << (i++ % 2 ? "odd" : "even") << "\n";
    }
  }
  CliResult r = run_cli("evaluate --data " + alt + " --checkpoint " + run +
                        "/checkpoints/epoch_2 --out " + fx.dir + "/evalx");
  CHECK(r.code == 4);
  CHECK(contains(r.output, "vocabulary"));
  CHECK(run_cli("train --data " + alt + " --out " + run + " --resume " + run +
                "/checkpoints/epoch_2 --epochs 3")
            .code == 4);
}

TEST_CASE("a diverging run exits 3 and leaves the abort artifacts") {
  CliFixture fx("abort");
  const std::string bad = fx.dir + "/bad.cfg";
  std::ofstream(bad) << "epochs = 1\nbatch_size = 8\ndata_portion = 0.4\nlambda_u = 0\n"
                        "kl_lambda = 0\nimage_size = 16\ndepth = 10\nwidth = 1\n"
                        "base_channels = 8\nsteps_per_epoch = 8\nlr_aet = 1e30\n"
                        "warm_lambda = 0,0,0,0,0\nmax_lambda = 1,1,1,1,1\n";
  const std::string run = fx.dir + "/doomed";
  CliResult r = run_cli("train --data " + fx.manifest + " --out " + run + " --config " + bad);
  CHECK(r.code == 3);
  CHECK(contains(r.output, "non-finite"));
  CHECK(contains(r.output, "last finite checkpoint"));
  CHECK(fs::exists(run + "/checkpoints/abort"));
  CHECK(fs::exists(run + "/abort_report.txt"));
  CHECK_FALSE(fs::exists(run + "/.lock"));
}

TEST_CASE("baseline mode trains through the cli without decoder state") {
  CliFixture fx("baseline");
  const std::string run = fx.dir + "/base";
  CliResult r = run_cli("train --data " + fx.manifest + " --out " + run + " --config " +
                        fx.config + " --mode supervised_baseline --epochs 1");
  CHECK(r.code == 0);
  enaet::Archive a = enaet::Archive::load(run + "/checkpoints/epoch_1");
  CHECK(a.has("student.classifier.fc.w"));
  CHECK_FALSE(a.has("student.decoder0.fc.w"));
  CHECK_FALSE(a.has("sgd.count"));
  r = run_cli("evaluate --data " + fx.manifest + " --checkpoint " + run +
              "/checkpoints/epoch_1 --out " + run);
  CHECK(r.code == 0);
}
