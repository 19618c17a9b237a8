#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "gsr/dataconfig.hpp"
#include "speaker_fixtures.hpp"

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("gsr_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::string file(const std::string& name, const std::string& body) const {
    const std::string p = (path / name).string();
    std::ofstream out(p, std::ios::binary);
    out << body;
    return p;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Spawns the installed binary through the shell; env_prefix may carry
// VAR=value assignments.
RunResult run_cli(const std::string& args,
                  const std::string& env_prefix = "") {
  static int invocation = 0;
  const fs::path base = fs::temp_directory_path() /
                        ("gsr_cli_io_" + std::to_string(::getpid()) + "_" +
                         std::to_string(invocation++));
  const std::string out_path = base.string() + ".out";
  const std::string err_path = base.string() + ".err";
  const std::string cmd = env_prefix + (env_prefix.empty() ? "" : " ") +
                          std::string(GSR_CLI_BIN) + " " + args + " > " +
                          out_path + " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  fs::remove(out_path);
  fs::remove(err_path);
  return r;
}

std::string stub_args(const std::vector<std::string>& names) {
  std::string args;
  for (const auto& n : names) args += " --descriptor " + n + ".tsv";
  return args;
}

// A corpus plus a training config pointing at it.
struct ToyTraining {
  TempDir dir;
  std::string manifest_path;
  std::string config_path;

  explicit ToyTraining(long long max_steps = 6,
                       const std::string& schedule =
                           R"({"kind": "warm_restarts", "lr_max": 1e-3,
                               "lr_min": 5e-6, "period": 100000})",
                       const std::string& optimizer = "adam") {
    fs::create_directories(dir.path / "corpus");
    const auto records = fixtures::write_speaker_corpus(
        (dir.path / "corpus").string(), 2, 5, 0.8);
    manifest_path = (dir.path / "manifest.tsv").string();
    gsr::write_manifest(manifest_path, records);
    std::ostringstream cfg;
    cfg << R"({
  "arch": "mfa_conformer",
  "features": "log_mel",
  "model": {"model_dim": 16, "n_layers": 1, "n_heads": 2, "ff_units": 24,
            "conv_kernel": 7, "embed_dim": 16, "input_dim": 80},
  "data_manifest": ")"
        << manifest_path << R"(",
  "schedule": )" << schedule
        << R"(,
  "batch": {"batch_size": 2, "distinct_speakers": true,
            "crop_seconds": 0.5},
  "optimizer": ")"
        << optimizer << R"(",
  "max_steps": )" << max_steps
        << R"(,
  "seed": 7
})";
    config_path = dir.file("train.json", cfg.str());
  }
};

}  // namespace

TEST_CASE("manifest prints composition totals") {
  const std::string env = "GSR_DATA_ROOT=" GSR_DATA_DIR "/stubs";
  SUBCASE("v1") {
    const RunResult r = run_cli(
        "manifest --version v1" +
            stub_args({"voxceleb", "sre", "cv_de_es_fr_it"}),
        env);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("total\t51,178\t3,078,582\t5.18k\n") !=
          std::string::npos);
    CHECK(r.out.find("voxceleb\t7,205\t1,240,651\t2.69k\n") !=
          std::string::npos);
  }
  SUBCASE("v3") {
    const RunResult r = run_cli(
        "manifest --version v3" +
            stub_args({"voxceleb", "sre", "cv_de_es_fr_it", "mls"}),
        env);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("total\t56,668\t3,482,166\t6.85k\n") !=
          std::string::npos);
  }
  SUBCASE("unknown version is a usage error") {
    const RunResult r =
        run_cli("manifest --version v9" + stub_args({"voxceleb"}), env);
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("v9") != std::string::npos);
  }
  SUBCASE("membership violation is a data error") {
    const RunResult r =
        run_cli("manifest --version v0" + stub_args({"sre"}), env);
    CHECK(r.exit_code == 2);
  }
  SUBCASE("absolute descriptor paths bypass the data root") {
    const RunResult r = run_cli(
        "manifest --version v0 --descriptor " GSR_DATA_DIR
        "/stubs/voxceleb.tsv",
        "GSR_DATA_ROOT=/nonexistent");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("total\t7,205\t1,240,651\t2.69k\n") !=
          std::string::npos);
  }
}

TEST_CASE("train writes a checkpoint and a deterministic metrics log") {
  ToyTraining toy;
  const std::string run1 = (toy.dir.path / "run1").string();
  const RunResult r1 =
      run_cli("train --config " + toy.config_path + " --out " + run1);
  REQUIRE(r1.exit_code == 0);
  CHECK(fs::exists(run1 + "/checkpoint.gsrm"));
  const std::string metrics1 = slurp(run1 + "/metrics.tsv");
  CHECK_FALSE(metrics1.empty());
  CHECK(r1.out.find("final_loss") != std::string::npos);

  // Same seed: byte-identical metrics. Different seed: a different log.
  const std::string run2 = (toy.dir.path / "run2").string();
  const RunResult r2 = run_cli("train --config " + toy.config_path +
                               " --out " + run2 + " --threads 1");
  REQUIRE(r2.exit_code == 0);
  CHECK(metrics1 == slurp(run2 + "/metrics.tsv"));

  const std::string run3 = (toy.dir.path / "run3").string();
  const RunResult r3 = run_cli("train --config " + toy.config_path +
                               " --out " + run3 + " --seed 8");
  REQUIRE(r3.exit_code == 0);
  CHECK(metrics1 != slurp(run3 + "/metrics.tsv"));
}

TEST_CASE("train rejects a malformed config naming the key") {
  ToyTraining toy;
  const std::string bad = toy.dir.file("bad.json", R"({
  "data_manifest": ")" + toy.manifest_path +
                                            R"(",
  "learning_rate": 0.1
})");
  const RunResult r = run_cli("train --config " + bad);
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("learning_rate") != std::string::npos);
}

TEST_CASE("train exits 3 when the loss diverges") {
  ToyTraining toy(20,
                  R"({"kind": "warm_restarts", "lr_max": 1e100,
                      "lr_min": 1.0, "period": 100000})",
                  "sgd");
  const std::string out = (toy.dir.path / "run").string();
  const RunResult r =
      run_cli("train --config " + toy.config_path + " --out " + out);
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("diverged") != std::string::npos);
  CHECK(r.err.find("last good step") != std::string::npos);
}

TEST_CASE("embed produces one vector per listed wav") {
  ToyTraining toy;
  const std::string run = (toy.dir.path / "run").string();
  REQUIRE(run_cli("train --config " + toy.config_path + " --out " + run)
              .exit_code == 0);
  const std::string ckpt = run + "/checkpoint.gsrm";

  const std::string corpus = (toy.dir.path / "corpus").string();
  const std::string wavs = toy.dir.file(
      "wavs.txt", "a\t" + corpus + "/s00_u00.wav\n" +
                      "b\t" + corpus + "/s01_u00.wav\n" +
                      "a_again\t" + corpus + "/s00_u00.wav\n");
  const std::string emb = (toy.dir.path / "emb.tsv").string();
  const RunResult r = run_cli("embed --checkpoint " + ckpt + " --wavs " +
                              wavs + " --out " + emb + " --threads 2");
  REQUIRE(r.exit_code == 0);

  std::istringstream rows(slurp(emb));
  std::string line;
  std::vector<std::vector<std::string>> parsed;
  while (std::getline(rows, line)) {
    std::vector<std::string> fields;
    std::istringstream fs_(line);
    std::string tok;
    while (std::getline(fs_, tok, '\t')) fields.push_back(tok);
    parsed.push_back(fields);
  }
  REQUIRE(parsed.size() == 3);
  for (const auto& row : parsed) CHECK(row.size() == 1 + 16);
  CHECK(parsed[0][0] == "a");
  // The same wav under two ids embeds identically; different wavs differ.
  for (int d = 1; d <= 16; ++d) CHECK(parsed[0][d] == parsed[2][d]);
  const std::vector<std::string> va(parsed[0].begin() + 1, parsed[0].end());
  const std::vector<std::string> vb(parsed[1].begin() + 1, parsed[1].end());
  CHECK(va != vb);

  SUBCASE("a missing wav is a data error naming the path") {
    const std::string bad =
        toy.dir.file("badwavs.txt", corpus + "/ghost.wav\n");
    const RunResult miss =
        run_cli("embed --checkpoint " + ckpt + " --wavs " + bad);
    CHECK(miss.exit_code == 2);
    CHECK(miss.err.find("ghost.wav") != std::string::npos);
  }
}

TEST_CASE("eval reports the error-rate block") {
  TempDir dir;
  SUBCASE("separated embeddings") {
    const std::string emb = dir.file("emb.tsv",
                                     "t1\t1\t0\t0\n"
                                     "t2\t0.9\t0.1\t0\n"
                                     "n1\t0\t0\t1\n");
    const std::string trials = dir.file("trials.txt",
                                        "1 t1 t2\n"
                                        "0 t1 n1\n");
    const RunResult r =
        run_cli("eval --trials " + trials + " --embeddings " + emb);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("eer 0.0000\n") != std::string::npos);
    CHECK(r.out.find("n_target 1\n") != std::string::npos);
    CHECK(r.out.find("n_nontarget 1\n") != std::string::npos);
    CHECK(r.out.find("protocol -\n") != std::string::npos);
  }
  SUBCASE("interpolated hand case from precomputed scores") {
    const std::string trials = dir.file("trials.txt",
                                        "1 e1 t1\n"
                                        "1 e2 t2\n"
                                        "0 e3 t3\n"
                                        "0 e4 t4\n");
    const std::string scores = dir.file("scores.txt",
                                        "e1 t1 0.8\n"
                                        "e2 t2 0.6\n"
                                        "e3 t3 0.7\n"
                                        "e4 t4 0.2\n");
    const RunResult r =
        run_cli("eval --trials " + trials + " --scores " + scores);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("eer 0.2500\n") != std::string::npos);
    CHECK(r.out.find("eer_pct 25.00\n") != std::string::npos);
    CHECK(r.out.find("threshold 0.700000\n") != std::string::npos);

    // Re-running is byte-identical.
    const RunResult again =
        run_cli("eval --trials " + trials + " --scores " + scores);
    CHECK(again.out == r.out);

    // The score dump mirrors the trial order.
    const std::string dump = (dir.path / "dump.tsv").string();
    const RunResult with_out = run_cli("eval --trials " + trials +
                                       " --scores " + scores + " --out " +
                                       dump);
    REQUIRE(with_out.exit_code == 0);
    CHECK(slurp(dump) ==
          "e1\tt1\t0.8\ne2\tt2\t0.6\ne3\tt3\t0.7\ne4\tt4\t0.2\n");
  }
  SUBCASE("declared protocol with the wrong inventory") {
    const std::string trials = dir.file("trials.txt", "1 a b\n0 a c\n");
    const std::string scores = dir.file("scores.txt", "a b 1\na c 0\n");
    const RunResult r = run_cli("eval --trials " + trials + " --scores " +
                                scores + " --protocol sre10");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("54720") != std::string::npos);
  }
  SUBCASE("embeddings and scores are mutually exclusive") {
    const std::string trials = dir.file("trials.txt", "1 a b\n");
    const RunResult r = run_cli("eval --trials " + trials);
    CHECK(r.exit_code == 1);
  }
}

TEST_CASE("usage errors exit 1 and help exits 0") {
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("bogus_subcommand").exit_code == 1);
  CHECK(run_cli("manifest").exit_code == 1);  // missing required flags
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("embed --help").exit_code == 0);
}
