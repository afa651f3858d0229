// Exercises the shared library through its C header only, plus CLI exit codes.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "chyll/chyll.h"

#include "json.hpp"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("chyll_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

chyll_status run(const std::string& command, const json& cfg, json* result = nullptr) {
  char* out = nullptr;
  const chyll_status st = chyll_run_command(command.c_str(), cfg.dump().c_str(), nullptr, nullptr, &out);
  if (out != nullptr) {
    if (result) *result = json::parse(out);
    chyll_string_free(out);
  }
  return st;
}

int cli(const std::string& args) {
  const std::string line = std::string(CHYLL_CLI_PATH) + " -q " + args + " >/dev/null 2>&1";
  const int raw = std::system(line.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

struct Trained {
  fs::path dir = scratch("trained");
  std::string dataset = (dir / "ds.jsonl").string();
  std::string model = (dir / "model").string();
  Trained() {
    REQUIRE(run("generate", {{"system", "torus"}, {"n", 20}, {"steps", 30}, {"seed", 3}, {"out", dataset}}) == CHYLL_OK);
    REQUIRE(run("train", {{"dataset", dataset},
                          {"out", model},
                          {"curriculum", {5}},
                          {"steps_per_length", 20},
                          {"batch", 8},
                          {"decoder_steps", 20},
                          {"decoder_batch", 32}}) == CHYLL_OK);
  }
};

const Trained& trained() {
  static const Trained t;
  return t;
}

void count_lines(const char*, void* user) { ++*static_cast<int*>(user); }

}  // namespace

TEST_CASE("version and error reporting") {
  CHECK(std::string(chyll_version()).size() > 0);
  CHECK(chyll_run_command("generate", "{not json", nullptr, nullptr, nullptr) == CHYLL_ERR_CONFIG);
  CHECK(std::string(chyll_last_error()).find("JSON") != std::string::npos);
  CHECK(chyll_run_command(nullptr, "{}", nullptr, nullptr, nullptr) == CHYLL_ERR_INVALID_ARGUMENT);
  CHECK(run("generate", {{"system", "torus"}, {"n", 1}, {"out", "/tmp/chyll_capi_unused.jsonl"}}) == CHYLL_ERR_CONFIG);
  CHECK(std::string(chyll_last_error()).find("split impossible") != std::string::npos);
  CHECK(run("control", {{"trials", 1}, {"out", "/tmp/chyll_capi_unused"}}) == CHYLL_ERR_CONFIG);
  CHECK(run("generate", {{"system", "bouncing_ball"},
                         {"params", {{"alpha", 0.5}}},
                         {"n", 4},
                         {"steps", 400},
                         {"out", "/tmp/chyll_capi_unused.jsonl"}}) == CHYLL_ERR_SIMULATION);
  chyll_model* m = nullptr;
  CHECK(chyll_model_load("/nonexistent/bundle", &m) != CHYLL_OK);
  CHECK(m == nullptr);
  CHECK(chyll_model_dims(nullptr, nullptr, nullptr, nullptr) == CHYLL_ERR_INVALID_ARGUMENT);
}

TEST_CASE("log callback and result JSON") {
  const auto dir = scratch("log");
  int lines = 0;
  char* out = nullptr;
  const json cfg = {{"system", "klein"}, {"n", 10}, {"steps", 10}, {"out", (dir / "k.jsonl").string()}};
  REQUIRE(chyll_run_command("generate", cfg.dump().c_str(), count_lines, &lines, &out) == CHYLL_OK);
  CHECK(lines > 0);
  REQUIRE(out != nullptr);
  CHECK(json::parse(out).at("trajectories") == 10);
  chyll_string_free(out);
}

TEST_CASE("dataset handle") {
  const auto& t = trained();
  chyll_dataset* ds = nullptr;
  REQUIRE(chyll_dataset_load(t.dataset.c_str(), &ds) == CHYLL_OK);
  int n = 0, sd = 0, ad = -1;
  double dt = 0.0;
  CHECK(chyll_dataset_info(ds, &n, &sd, &ad, &dt) == CHYLL_OK);
  CHECK(n == 20);
  CHECK(sd == 2);
  CHECK(ad == 0);
  CHECK(dt == 0.05);
  size_t rows = 0;
  CHECK(chyll_dataset_states(ds, 0, nullptr, 0, &rows) == CHYLL_OK);
  CHECK(rows == 31);
  std::vector<double> buf(rows * 2);
  CHECK(chyll_dataset_states(ds, 0, buf.data(), 3, &rows) == CHYLL_ERR_INVALID_ARGUMENT);
  CHECK(chyll_dataset_states(ds, 0, buf.data(), buf.size(), &rows) == CHYLL_OK);
  for (double v : buf) CHECK((v >= 0.0 && v < 1.0));
  CHECK(chyll_dataset_states(ds, 99, buf.data(), buf.size(), &rows) == CHYLL_ERR_INVALID_ARGUMENT);
  chyll_dataset_free(ds);
  CHECK(chyll_dataset_load("/nonexistent.jsonl", &ds) != CHYLL_OK);
}

TEST_CASE("model handle: encode, decode, project, predict") {
  const auto& t = trained();
  chyll_model* m = nullptr;
  REQUIRE(chyll_model_load(t.model.c_str(), &m) == CHYLL_OK);
  int n = 0, lat = 0, act = -1;
  CHECK(chyll_model_dims(m, &n, &lat, &act) == CHYLL_OK);
  CHECK(n == 2);
  CHECK(lat == 4);
  CHECK(act == 0);

  const double x[4] = {0.2, 0.3, 0.6, 0.1};
  double z[8], back[4], proj[4], res[2];
  CHECK(chyll_model_encode(m, x, 2, z) == CHYLL_OK);
  CHECK(chyll_model_decode(m, z, 2, back) == CHYLL_OK);
  CHECK(chyll_model_project(m, z, 2, proj, res) == CHYLL_OK);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(proj[i] - x[i]) < 1e-5);
  for (double r : res) CHECK(r < 1e-6);

  std::vector<double> traj(11 * 2);
  CHECK(chyll_model_predict(m, x, 10, 0.05, nullptr, CHYLL_DECODE_DECODER, traj.data()) == CHYLL_OK);
  CHECK(std::abs(traj[0] - back[0]) < 1e-12);
  CHECK(std::abs(traj[1] - back[1]) < 1e-12);
  std::vector<double> lm(11 * 2);
  CHECK(chyll_model_predict(m, x, 10, 0.05, nullptr, CHYLL_DECODE_LM, lm.data()) == CHYLL_OK);
  CHECK(std::abs(lm[0] - x[0]) < 1e-5);
  CHECK(chyll_model_predict(m, x, -1, 0.05, nullptr, CHYLL_DECODE_LM, lm.data()) == CHYLL_ERR_INVALID_ARGUMENT);
  chyll_model_free(m);
}

TEST_CASE("cli exit codes") {
  const auto dir = scratch("cli");
  CHECK(cli("generate --system torus --n 1 -o " + (dir / "x.jsonl").string()) == 2);
  CHECK(cli("generate --system torus --n 5 --steps 5 -o " + (dir / "y.jsonl").string()) == 0);
  CHECK(fs::exists(dir / "y.jsonl"));
  CHECK(cli("generate --bogus-flag") == 2);
  CHECK(cli("") == 2);
  CHECK(cli("tda --analytic circle -o " + (dir / "tda").string()) == 0);
  CHECK(cli("control --trials 1 -o " + (dir / "ctl").string()) == 2);
  fs::create_directories(dir / "half");
  fs::copy_file(fs::path(trained().model) / "meta.json", dir / "half" / "meta.json");
  fs::copy_file(fs::path(trained().model) / "field.json", dir / "half" / "field.json");
  CHECK(cli("eval --model " + (dir / "half").string() + " --dataset " + trained().dataset + " -o " +
            (dir / "ev").string()) == 5);
  CHECK(cli("generate -c " + (dir / "missing.json").string()) == 2);
  CHECK(cli("generate --system torus --n 4 --steps 4 --set seed=9 -o " + (dir / "z.jsonl").string()) == 0);
  CHECK(json::parse(std::ifstream(dir / "z.jsonl.config.json")).at("seed") == 9);
}
