#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sba/harness.hpp"
#include "sba/oracle.hpp"
#include "sba/tensor.hpp"

#include <sys/wait.h>

#include <tuple>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

// Exercises the installed binary end to end: exit codes, JSON on stdout,
// config echo, and the generator subcommands.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string stdout_text;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "sba_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

CommandResult run_cli(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const std::string command =
      std::string(SBA_CLI_PATH) + " " + args + " > " + out.string() + " 2>/dev/null";
  const int status = std::system(command.c_str());
  CommandResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::stringstream buffer;
  buffer << in.rdbuf();
  result.stdout_text = buffer.str();
  return result;
}

std::string file_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

TEST_CASE("cli end to end") {
  const fs::path dir = work_dir();
  const std::string model = (dir / "model.json").string();
  const std::string zero_model = (dir / "zero.json").string();
  const std::string dataset = (dir / "dataset").string();
  const std::string image = dataset + "/img_0000.sbt";

  // gen-model determinism: identical invocations write identical files.
  auto gen = run_cli("gen-model --kind linear --shape 1,3,3 --classes 2 --seed 7 --margin 0.8 --out " + model);
  REQUIRE(gen.exit_code == 0);
  const std::string first = file_text(model);
  gen = run_cli("gen-model --kind linear --shape 1,3,3 --classes 2 --seed 7 --margin 0.8 --out " + model);
  REQUIRE(gen.exit_code == 0);
  CHECK(first == file_text(model));

  // Zero-weight fixture scores uniformly.
  REQUIRE(run_cli("gen-model --kind linear --shape 1,3,3 --classes 4 --seed 1 --zero-weights --out " +
                  zero_model).exit_code == 0);
  {
    const auto oracle = sba::load_model(zero_model);
    sba::ImageTensor probe(sba::Shape{1, 3, 3});
    const auto r = oracle->score(probe);
    for (int i = 0; i < 4; ++i) CHECK(r.probs[i] == doctest::Approx(0.25));
  }

  // gen-dataset: every image is classified as its label.
  REQUIRE(run_cli("gen-dataset --model " + model + " --count 6 --seed 3 --out " + dataset)
              .exit_code == 0);
  {
    const auto oracle = sba::load_model(model);
    const auto entries = sba::load_dataset(dataset);
    REQUIRE(entries.size() == 6);
    for (const auto& e : entries) {
      CHECK(sba::argmax_class(oracle->score(e.image)) == e.label);
    }
  }

  // attack: success exits 0 and echoes the resolved config.
  const auto entries = sba::load_dataset(dataset);
  const int label = entries[0].label;
  auto attack = run_cli("attack --image " + image + " --label " + std::to_string(label) +
                        " --oracle " + model + " --basis pixel --seed 5");
  CHECK(attack.exit_code == 0);
  {
    const json doc = json::parse(attack.stdout_text);
    CHECK(doc["config"]["epsilon"] == 0.2);
    CHECK(doc["config"]["max_iterations"] == 10000);
    CHECK(doc["config"]["seed"] == 5);
    CHECK(doc["success"] == true);
    CHECK(doc["termination_reason"] == "success");
  }

  // Failure (uniform oracle can never move the argmax) exits 1.
  auto failed = run_cli("attack --image " + image + " --label 0 --oracle " + zero_model +
                        " --basis pixel");
  CHECK(failed.exit_code == 1);
  {
    const json doc = json::parse(failed.stdout_text);
    CHECK(doc["success"] == false);
    CHECK(doc["termination_reason"] == "basis_exhausted");
  }

  // Usage and config errors exit 2.
  CHECK(run_cli("attack --image " + image + " --oracle " + model).exit_code == 2);  // no label
  CHECK(run_cli("attack --image " + image + " --label 0 --oracle " + model + " --eps 0")
            .exit_code == 2);
  CHECK(run_cli("attack --image " + image + " --label 0").exit_code == 2);  // no oracle, env unset
  CHECK(run_cli("attack --image missing.sbt --label 0 --oracle " + model).exit_code == 2);
  CHECK(run_cli("nonsense").exit_code == 2);

  // batch: report JSON on stdout plus exact-format CSV files.
  const std::string csv = (dir / "report.csv").string();
  const std::string hist = (dir / "hist.csv").string();
  auto batch = run_cli("batch --dataset " + dataset + " --oracle " + model +
                       " --basis pixel --parallelism 2 --csv " + csv + " --hist-csv " + hist);
  CHECK(batch.exit_code == 0);
  {
    const json doc = json::parse(batch.stdout_text);
    CHECK(doc["n_images"] == 6);
    CHECK(doc["results"].size() == 6);
    CHECK(doc["config"]["mode"]["kind"] == "untargeted");
    std::ifstream csv_in(csv);
    std::string header;
    std::getline(csv_in, header);
    CHECK(header == "image,success,queries,iterations,l2,termination");
    std::ifstream hist_in(hist);
    std::getline(hist_in, header);
    CHECK(header == "bucket_lo,bucket_hi,count");
  }

  // sweep: rows for each grid point.
  auto sweep = run_cli("sweep --image " + image + " --label " + std::to_string(label) +
                       " --oracle " + model + " --basis pixel --eps-grid 0.1,0.2 --samples 5");
  CHECK(sweep.exit_code == 0);
  {
    const json doc = json::parse(sweep.stdout_text);
    REQUIRE(doc["rows"].size() == 2);
    CHECK(doc["rows"][0]["epsilon"] == 0.1);
    CHECK(doc["rows"][0].contains("mean_delta_p"));
    CHECK(doc["rows"][0].contains("fraction_descending"));
  }

  // mlp generation round trips through the loader.
  const std::string mlp = (dir / "mlp.json").string();
  REQUIRE(run_cli("gen-model --kind mlp --shape 1,3,3 --classes 3 --hidden 6,4 --seed 9 --out " +
                  mlp).exit_code == 0);
  CHECK(sba::load_model(mlp)->num_classes() == 3);

  // attack --out writes the same JSON it prints.
  const std::string out_json = (dir / "result.json").string();
  auto with_out = run_cli("attack --image " + image + " --label " + std::to_string(label) +
                          " --oracle " + model + " --basis pixel --seed 5 --out " + out_json);
  CHECK(with_out.exit_code == 0);
  CHECK(json::parse(file_text(out_json)) == json::parse(with_out.stdout_text));
}

TEST_CASE("serve-mock answers the cli attack, including via SBA_ORACLE_URL") {
  const fs::path dir = work_dir();
  const std::string model = (dir / "model.json").string();
  const std::string dataset = (dir / "dataset").string();
  const std::string image = dataset + "/img_0001.sbt";
  REQUIRE(fs::exists(model));  // produced by the previous case
  REQUIRE(fs::exists(image));
  const auto entries = sba::load_dataset(dataset);
  const int label = entries[1].label;

  const int port = 18431;
  const std::string url = "http://127.0.0.1:" + std::to_string(port);
  const fs::path pid_file = dir / "mock.pid";
  const std::string launch = std::string(SBA_CLI_PATH) + " serve-mock --model " + model +
                             " --port " + std::to_string(port) + " >/dev/null 2>&1 & echo $! > " +
                             pid_file.string();
  REQUIRE(std::system(launch.c_str()) == 0);

  // Wait for the service to come up.
  bool up = false;
  for (int tries = 0; tries < 100 && !up; ++tries) {
    up = std::system(("curl -sf " + url + "/v1/ledger >/dev/null 2>&1").c_str()) == 0;
    if (!up) std::ignore = std::system("sleep 0.05");
  }

  if (up) {
    auto remote = run_cli("attack --image " + image + " --label " + std::to_string(label) +
                          " --oracle " + url + " --basis pixel --seed 5");
    CHECK(remote.exit_code == 0);
    auto local = run_cli("attack --image " + image + " --label " + std::to_string(label) +
                         " --oracle " + model + " --basis pixel --seed 5");
    CHECK(json::parse(remote.stdout_text) == json::parse(local.stdout_text));

    // Environment fallback when --oracle is omitted.
    const fs::path env_out = dir / "env_stdout.txt";
    const std::string env_cmd = "SBA_ORACLE_URL=" + url + " " + std::string(SBA_CLI_PATH) +
                                " attack --image " + image + " --label " + std::to_string(label) +
                                " --basis pixel --seed 5 > " + env_out.string() + " 2>/dev/null";
    const int env_status = std::system(env_cmd.c_str());
    CHECK(WIFEXITED(env_status));
    CHECK(WEXITSTATUS(env_status) == 0);
    CHECK(json::parse(file_text(env_out)) == json::parse(remote.stdout_text));
  } else {
    FAIL_CHECK("mock service did not come up on port 18431");
  }

  std::ignore = std::system(("kill $(cat " + pid_file.string() + ") 2>/dev/null").c_str());
}
