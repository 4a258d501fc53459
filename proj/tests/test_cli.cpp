#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "primseg/embedder.hpp"
#include "primseg/train.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "primseg_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cli(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const std::string cmd = std::string(PRIMSEG_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

const char* kTwoPartSpec =
    R"({"parts": [{"kind": "ellipsoid", "center": [-1, 0, 0], "rotation": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "semi_axes": [0.5, 0.4, 0.3]},
                  {"kind": "ellipsoid", "center": [1, 0, 0], "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1], "semi_axes": [0.5, 0.3, 0.3]}],
        "labels": [0, 1], "points": 256})";

// One labeled two-part shape in its own directory.
std::string two_part_dir() {
  static const std::string dir = [] {
    std::ofstream(path("two.json")) << kTwoPartSpec;
    REQUIRE(cli("synth --spec " + path("two.json") + " --out " + path("two") + " --seed 1").code == 0);
    return path("two");
  }();
  return dir;
}

}  // namespace

TEST_CASE("help documents every flag and exits 0") {
  const std::vector<std::pair<std::string, std::vector<std::string>>> expected{
      {"decompose", {"--checkpoint", "--out-obj", "--out-json", "--primitive", "--seed", "--config", "--threads"}},
      {"train", {"--unlabeled", "--labeled", "--k", "--steps", "--out", "--log", "--seed", "--config"}},
      {"eval", {"--checkpoint", "--test", "--report"}},
      {"gradcheck", {"--seed", "--report"}},
      {"synth", {"--spec", "--out", "--seed", "--format"}}};
  for (const auto& [cmd, flags] : expected) {
    const Run r = cli(cmd + " --help");
    CHECK(r.code == 0);
    for (const auto& f : flags) CHECK_MESSAGE(r.output.find(f) != std::string::npos, cmd << " " << f);
  }
  CHECK(cli("--help").code == 0);
}

TEST_CASE("IO and parse errors exit 1") {
  const Run missing = cli("decompose " + path("nope.xyz"));
  CHECK(missing.code == 1);
  CHECK(missing.output.find("nope.xyz") != std::string::npos);
  CHECK(cli("train --bogus").code == 1);
  std::ofstream(path("bad.xyz")) << "1 2\n";
  CHECK(cli("decompose " + path("bad.xyz")).code == 1);
}

TEST_CASE("synth writes the labels of the spec") {
  REQUIRE(cli("synth --parts 3 --count 2 --points 300 --seed 4 --out " + path("k3")).code == 0);
  for (const auto& e : fs::directory_iterator(path("k3"))) {
    std::set<int> labels;
    std::istringstream in(slurp(e.path()));
    double x, y, z;
    int l;
    while (in >> x >> y >> z >> l) labels.insert(l);
    CHECK(labels == std::set<int>{0, 1, 2});
  }
}

TEST_CASE("decompose writes primitives of the requested kind") {
  const std::string shape = two_part_dir() + "/shape_0000.xyz";
  const Run r = cli("decompose " + shape + " --primitive cuboid --out-json " + path("d.json") + " --out-obj " +
                    path("d.obj"));
  CHECK(r.code == 0);
  CHECK(r.output.find("warning") != std::string::npos);
  const auto j = nlohmann::json::parse(slurp(path("d.json")));
  REQUIRE(j.is_array());
  REQUIRE_FALSE(j.empty());
  for (const auto& p : j) CHECK(p["kind"] == "cuboid");
  CHECK(slurp(path("d.obj")).find("\nf ") != std::string::npos);
}

TEST_CASE("zero-step training writes the initialization") {
  const Run r = cli("train --labeled " + two_part_dir() + " --steps 0 --seed 5 --out " + path("init.json"));
  REQUIRE(r.code == 0);
  primseg::TrainConfig c;
  c.seed = 5;
  const auto m = primseg::initial_model(c, 2);
  CHECK(nlohmann::json::parse(slurp(path("init.json"))) == primseg::checkpoint_to_json(m.embedder, m.classifier));
}

TEST_CASE("overfit checkpoint scores perfect IoU on its own shape") {
  REQUIRE(cli("train --labeled " + two_part_dir() + " --supervised-only --steps 400 --lr 0.05 --out " +
              path("fit.json"))
              .code == 0);
  const Run r = cli("eval --checkpoint " + path("fit.json") + " --test " + two_part_dir() + " --report " +
                    path("report.json"));
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(path("report.json")));
  for (const char* key : {"nmi", "miou", "per_class_iou"}) CHECK(j.contains(key));
  CHECK(j["miou"] == 1.0);
}

TEST_CASE("evaluation rejects unlabeled data") {
  fs::create_directories(path("unl"));
  std::ofstream(path("unl/a.xyz")) << "0 0 0\n1 0 0\n0 1 0\n0 0 1\n";
  const Run r = cli("eval --checkpoint " + path("init.json") + " --test " + path("unl") + " --report " + path("x.json"));
  CHECK(r.code == 1);
  CHECK(r.output.find("requires labels") != std::string::npos);
}

TEST_CASE("gradcheck exit codes") {
  const Run ok = cli("gradcheck --report " + path("gc.json"));
  CHECK(ok.code == 0);
  CHECK(nlohmann::json::parse(slurp(path("gc.json"))).contains("entries"));
  const Run broken = cli("gradcheck --break-op softmax_rows");
  CHECK(broken.code == 4);
  CHECK(broken.output.find("softmax_rows") != std::string::npos);
}

TEST_CASE("seeded invocations are byte-identical") {
  REQUIRE(cli("synth --benchmark --unlabeled 3 --labeled 1 --test 1 --points 96 --seed 2 --out " + path("b1")).code == 0);
  REQUIRE(cli("synth --benchmark --unlabeled 3 --labeled 1 --test 1 --points 96 --seed 2 --out " + path("b2")).code == 0);
  for (const auto& e : fs::recursive_directory_iterator(path("b1")))
    if (e.is_regular_file()) CHECK(slurp(e.path()) == slurp(path("b2") / fs::relative(e.path(), path("b1"))));
  const std::string train = "train --unlabeled " + path("b1/unlabeled") + " --labeled " + path("b1/labeled") +
                            " --steps 4 --ssl-lr 0.001 --clip 1 --seed 9";
  REQUIRE(cli(train + " --out " + path("c1.json") + " --log " + path("l1.jsonl")).code == 0);
  REQUIRE(cli(train + " --out " + path("c2.json") + " --log " + path("l2.jsonl")).code == 0);
  CHECK(slurp(path("c1.json")) == slurp(path("c2.json")));
  CHECK(slurp(path("l1.jsonl")) == slurp(path("l2.jsonl")));
}
