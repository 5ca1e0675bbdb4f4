#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "testutil.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr combined
};

CmdResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  const std::string command = env_prefix + std::string(CMPNET_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(command.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult result;
  char buffer[4096];
  while (std::size_t got = std::fread(buffer, 1, sizeof(buffer), pipe))
    result.output.append(buffer, got);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

// small dataset shared by the CLI tests
const std::string& cli_dataset() {
  static const std::string dir = [] {
    const std::string d = testutil::scratch_dir("cli_data");
    const CmdResult gen = run_cli("gen-data --out " + d + " --seed 3 --classes 4 "
                                  "--per-class-train 8 --per-class-test 4 --size 16 --force");
    REQUIRE(gen.exit_code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("gen-data happy path and error paths") {
  const std::string dir = testutil::scratch_dir("cli_gen");
  const CmdResult ok = run_cli("gen-data --out " + dir + "/d --seed 1 --classes 2 "
                               "--per-class-train 2 --per-class-test 1 --size 16");
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("manifest") != std::string::npos);
  CHECK(fs::exists(dir + "/d/manifest.txt"));

  // refused without --force once the directory is non-empty
  const CmdResult refused = run_cli("gen-data --out " + dir + "/d --seed 1 --classes 2 "
                                    "--per-class-train 2 --per-class-test 1 --size 16");
  CHECK(refused.exit_code == 1);
  const CmdResult forced = run_cli("gen-data --out " + dir + "/d --seed 1 --classes 2 "
                                   "--per-class-train 2 --per-class-test 1 --size 16 --force");
  CHECK(forced.exit_code == 0);

  CHECK(run_cli("gen-data --seed 1").exit_code == 2);       // missing --out
  CHECK(run_cli("gen-data --out x --wat 1").exit_code == 2);  // unknown flag
}

TEST_CASE("train writes metrics and model, prints a parameter report") {
  const std::string out = testutil::scratch_dir("cli_train");
  const CmdResult result =
      run_cli("train --data " + cli_dataset() + "/manifest.txt --out " + out +
              " --variant cmp --r 4 --s 4 --hidden 16 --epochs 3 --seed 1");
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("final test accuracy") != std::string::npos);
  CHECK(result.output.find("fc1:") != std::string::npos);
  REQUIRE(fs::exists(out + "/metrics.csv"));
  REQUIRE(fs::exists(out + "/model.cmpm"));

  // one header line plus one row per epoch
  const std::string csv = testutil::read_file_bytes(out + "/metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.rfind("epoch,train_loss,train_acc,test_acc,lr\n", 0) == 0);
}

TEST_CASE("train rejects an impossible cmp config with the Eq-1 diagnostic") {
  const std::string out = testutil::scratch_dir("cli_train_bad");
  const CmdResult result = run_cli("train --data " + cli_dataset() + "/manifest.txt --out " +
                                   out + " --variant cmp --r 2 --s 33 --epochs 1");
  CHECK(result.exit_code == 1);
  // toycar feature depth is 32: k = 32 - 33*15 = -463
  CHECK(result.output.find("k=-463") != std::string::npos);
}

TEST_CASE("identical train invocations produce identical bytes") {
  const std::string out_a = testutil::scratch_dir("cli_det_a");
  const std::string out_b = testutil::scratch_dir("cli_det_b");
  const std::string flags = " --variant cmp --r 4 --s 4 --hidden 16 --epochs 2 --seed 9";
  REQUIRE(run_cli("train --data " + cli_dataset() + "/manifest.txt --out " + out_a + flags)
              .exit_code == 0);
  REQUIRE(run_cli("train --data " + cli_dataset() + "/manifest.txt --out " + out_b + flags)
              .exit_code == 0);
  CHECK(testutil::read_file_bytes(out_a + "/metrics.csv") ==
        testutil::read_file_bytes(out_b + "/metrics.csv"));
  CHECK(testutil::read_file_bytes(out_a + "/model.cmpm") ==
        testutil::read_file_bytes(out_b + "/model.cmpm"));

  // raising the thread cap must not change a single bit
  const std::string out_c = testutil::scratch_dir("cli_det_threads");
  const CmdResult threaded =
      run_cli("train --data " + cli_dataset() + "/manifest.txt --out " + out_c + flags,
              "CMPNET_THREADS=2 ");
  REQUIRE(threaded.exit_code == 0);
  CHECK(testutil::read_file_bytes(out_a + "/metrics.csv") ==
        testutil::read_file_bytes(out_c + "/metrics.csv"));
  CHECK(testutil::read_file_bytes(out_a + "/model.cmpm") ==
        testutil::read_file_bytes(out_c + "/model.cmpm"));
}

TEST_CASE("eval reloads a trained model, also via the emitted config file") {
  const std::string out = testutil::scratch_dir("cli_eval");
  REQUIRE(run_cli("train --data " + cli_dataset() + "/manifest.txt --out " + out +
                  " --variant wogap --hidden 16 --epochs 2 --seed 4")
              .exit_code == 0);
  const CmdResult direct = run_cli("eval --model " + out + "/model.cmpm --data " +
                                   cli_dataset() + "/manifest.txt --variant wogap --hidden 16");
  CHECK(direct.exit_code == 0);
  CHECK(direct.output.find("test accuracy:") != std::string::npos);

  const CmdResult via_config =
      run_cli("eval --model " + out + "/model.cmpm --data " + cli_dataset() +
              "/manifest.txt --config " + out + "/model.cfg");
  CHECK(via_config.exit_code == 0);
  CHECK(via_config.output == direct.output);

  // wrong spec: the saved tensors do not match
  const CmdResult mismatched = run_cli("eval --model " + out + "/model.cmpm --data " +
                                       cli_dataset() + "/manifest.txt --variant wogap --hidden 8");
  CHECK(mismatched.exit_code == 1);
}

TEST_CASE("params prints the published head numbers") {
  const CmdResult result = run_cli("params --preset densenet161-head --r 16");
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("27697408") != std::string::npos);
  CHECK(result.output.find("1731328") != std::string::npos);
  CHECK(result.output.find("16.00") != std::string::npos);

  CHECK(run_cli("params --preset nope").exit_code == 1);
}

TEST_CASE("grad-check exits zero when the suite passes") {
  const CmdResult result = run_cli("grad-check --op cmp");
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("PASS") != std::string::npos);
  CHECK(run_cli("grad-check --op bogus").exit_code == 1);
}

TEST_CASE("suggest-stride prints the derived geometry") {
  const CmdResult result = run_cli("suggest-stride --c 2208 --r 16");
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("s=16") != std::string::npos);
  CHECK(result.output.find("k=16") != std::string::npos);
  CHECK(result.output.find("gaps=false") != std::string::npos);

  CHECK(run_cli("suggest-stride --c 3 --r 1.2").exit_code == 1);
}

TEST_CASE("config files feed options, unknown keys are usage errors") {
  const std::string dir = testutil::scratch_dir("cli_config");
  {
    std::ofstream cfg(dir + "/gen.cfg");
    cfg << "classes=2\nper-class-train=2\nper-class-test=1\nsize=16\nseed=5\n";
  }
  const CmdResult ok =
      run_cli("gen-data --out " + dir + "/d --config " + dir + "/gen.cfg");
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("2 classes") != std::string::npos);
  // flags override the file
  const CmdResult overridden =
      run_cli("gen-data --out " + dir + "/d2 --classes 3 --config " + dir + "/gen.cfg");
  CHECK(overridden.exit_code == 0);
  CHECK(overridden.output.find("3 classes") != std::string::npos);

  {
    std::ofstream cfg(dir + "/bad.cfg");
    cfg << "classes=2\nmystery=1\n";
  }
  CHECK(run_cli("gen-data --out " + dir + "/d3 --config " + dir + "/bad.cfg").exit_code == 2);
}
