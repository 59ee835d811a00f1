#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cal/cli.hpp"
#include "cal/gmm.hpp"
#include "cal/io.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace cal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "calkp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& s) const { return (path / s).string(); }
};

}  // namespace

TEST_CASE("encode then decode") {
  TempDir d("cal_cli_encode");
  const auto e = run({"encode", "--x", "10.3", "--y", "7.625", "--out", d.path.string()});
  REQUIRE(e.code == 0);
  const json enc = read_json_file(d / "encoding.json");
  CHECK(enc["schema"] == "cal.encoding");
  CHECK(enc["heatmap"].size() == 32u * 24);

  const auto r = run({"decode", "--in", d / "encoding.json"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["x"].get<double>() == doctest::Approx(10.3).epsilon(1e-12));
  CHECK(j["y"].get<double>() == 7.625);
  CHECK(j["input_x"].get<double>() == doctest::Approx(41.2).epsilon(1e-12));
  CHECK(j["cell"] == json::array({10, 8}));

  const auto a = run({"decode", "--in", d / "encoding.json", "--argmax-only"});
  CHECK(json::parse(a.out)["x"] == 10.0);
}

TEST_CASE("encode prints to stdout without an output directory") {
  unsetenv(kOutDirEnv);
  const auto r = run({"encode", "--x", "3", "--y", "3", "--width", "8", "--height", "6", "--type", "binary"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["grid"]["width"] == 8);
  double sum = 0;
  for (const auto& v : j["heatmap"]) sum += v.get<double>();
  CHECK(sum == static_cast<double>(clip_disc(Vec2(3, 3), 4.0, GridSpec(8, 6, 4)).size()));
}

TEST_CASE("output directory from the environment") {
  TempDir d("cal_cli_env");
  setenv(kOutDirEnv, d.path.string().c_str(), 1);
  const auto r = run({"encode", "--x", "3", "--y", "3"});
  unsetenv(kOutDirEnv);
  CHECK(r.code == 0);
  CHECK(r.out.empty());
  CHECK(fs::exists(d.path / "encoding.json"));
}

TEST_CASE("fit-gmm matches the library fit") {
  TempDir d("cal_cli_gmm");
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.7);
  std::vector<Vec2> xs;
  for (int i = 0; i < 500; ++i) xs.emplace_back(n(rng), 0.3 + n(rng));
  write_json_file(d.path / "disp.json", displacements_to_json(xs));
  for (int k : {1, 2}) {
    const auto r = run({"fit-gmm", "--in", d / "disp.json", "--k", std::to_string(k), "--seed", "4", "--out",
                        d.path.string()});
    REQUIRE(r.code == 0);
    const json j = read_json_file(d.path / "mixture.json");
    const auto fitted = mixture_from_json(j["mixture"]);
    const auto lib = em_fit(xs, k, {.seed = 4});
    for (int c = 0; c < k; ++c) {
      CHECK(fitted.weights[c] == lib.weights[c]);
      CHECK(fitted.means[c] == lib.means[c]);
      CHECK(fitted.covariances[c] == lib.covariances[c]);
    }
    CHECK(j["stencil"]["values"].size() == 81u);
  }
  const auto few = run({"fit-gmm", "--in", d / "disp.json", "--k", "60"});
  CHECK(few.code == 2);
}

TEST_CASE("usage errors exit 1 with a JSON line") {
  for (const std::vector<std::string>& args :
       std::vector<std::vector<std::string>>{{},
                                             {"frobnicate"},
                                             {"encode", "--x", "1"},
                                             {"encode", "--x", "1", "--y", "abc"},
                                             {"encode", "--x", "1", "--y", "1", "--type", "square"},
                                             {"train-toy", "--offset-loss", "none"},
                                             {"sweep", "--resolutions", "64x48"},
                                             {"sweep", "--modes", "dark"},
                                             {"ablate", "--axis", "optimizer"}}) {
    const auto r = run(args);
    CAPTURE(r.err);
    CHECK(r.code == kExitUsage);
    const json j = json::parse(r.err);
    CHECK(j["error"]["exit_code"] == 1);
  }
}

TEST_CASE("runtime errors exit 2 with a JSON line") {
  TempDir d("cal_cli_runtime");
  const auto r = run({"decode", "--in", d / "nope.json"});
  CHECK(r.code == kExitRuntime);
  CHECK(json::parse(r.err)["error"]["exit_code"] == 2);
  {
    std::ofstream(d / "bad.json") << "{\"schema\": \"cal.encoding\"}";
  }
  CHECK(run({"decode", "--in", d / "bad.json"}).code == kExitRuntime);
}

TEST_CASE("help exits 0") {
  const auto r = run({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("train-toy") != std::string::npos);
  CHECK(run({"sweep", "--help"}).code == 0);
}

TEST_CASE("config file supplies defaults and flags override it") {
  TempDir d("cal_cli_config");
  {
    std::ofstream(d / "run.toml") << "[encode]\nx = 4.5\ny = 2.0\nwidth = 10\nheight = 8\n";
  }
  const auto a = run({"--config", d / "run.toml", "encode"});
  REQUIRE(a.code == 0);
  CHECK(json::parse(a.out)["grid"]["width"] == 10);
  const auto b = run({"--config", d / "run.toml", "encode", "--width", "12"});
  REQUIRE(b.code == 0);
  CHECK(json::parse(b.out)["grid"]["width"] == 12);
}

TEST_CASE("train-toy outputs feed eval") {
  TempDir d("cal_cli_train");
  const auto r = run({"train-toy", "--samples", "4", "--joints", "17", "--width", "16", "--height", "12",
                      "--stage1-steps", "300", "--stage2-steps", "100", "--seed", "2", "--out", d.path.string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"report.json", "losses.csv", "predictions.json", "ground_truth.json"})
    CHECK(fs::exists(d.path / f));
  const json rep = read_json_file(d.path / "report.json");
  CHECK(rep["steps"] == 400);
  CHECK(rep.count("wall_seconds") == 0);

  const auto e = run({"eval", "--gt", d / "ground_truth.json", "--pred", d / "predictions.json", "--out",
                      d.path.string()});
  REQUIRE(e.code == 0);
  const json s = read_json_file(d.path / "eval_summary.json");
  CHECK(s["instances"] == 4);
  CHECK(s["ap"].get<double>() == doctest::Approx(rep["oks"]["ap"].get<double>()).epsilon(1e-12));
  const std::string csv = slurp(d.path / "eval.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("train-toy on COCO annotations") {
  TempDir d("cal_cli_coco");
  json kps = json::array();
  for (int j = 0; j < 17; ++j) kps.insert(kps.end(), {10.0 + 3 * j, 20.0 + 2 * j, j % 3 ? 2 : 1});
  json anns = json::array();
  for (int a = 0; a < 3; ++a)
    anns.push_back({{"id", 10 + a}, {"image_id", 1}, {"bbox", {0, 0, 80, 60}}, {"keypoints", kps}});
  write_json_file(d.path / "coco.json", {{"images", {{{"id", 1}}}}, {"annotations", anns}});
  const auto r = run({"train-toy", "--coco", d / "coco.json", "--limit", "2", "--stage1-steps", "200",
                      "--stage2-steps", "50", "--out", d.path.string()});
  REQUIRE(r.code == 0);
  const json p = read_json_file(d.path / "predictions.json");
  CHECK(p["instances"].size() == 2u);
  CHECK(p["instances"][0]["id"] == "10");
}

TEST_CASE("sweep and ablate write one row per run") {
  TempDir d("cal_cli_sweep");
  const auto s = run({"sweep", "--resolutions", "32x24,64x48", "--samples", "2", "--joints", "3",
                      "--stage1-steps", "50", "--stage2-steps", "10", "--out", d.path.string()});
  REQUIRE(s.code == 0);
  const std::string sweep = slurp(d.path / "sweep.csv");
  CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 5);
  const auto a = run({"ablate", "--axis", "components", "--samples", "2", "--joints", "6", "--stage1-steps", "50",
                      "--stage2-steps", "10", "--out", d.path.string()});
  REQUIRE(a.code == 0);
  const std::string abl = slurp(d.path / "ablation.csv");
  CHECK(std::count(abl.begin(), abl.end(), '\n') == 4);
}
