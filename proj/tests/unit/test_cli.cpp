#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "cem/cli.hpp"
#include "cem/imaging.hpp"
#include "support.hpp"

using namespace cem;
using cem::test::random_image;
using cem::test::TempDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cem::cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json load(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

// Library directory plus a clean 64x64 image pair, shared by the CLI cases.
struct Workspace {
  TempDir dir{"cem-cli"};
  std::string lib, img, odd;
  Workspace() {
    std::filesystem::create_directories(dir / "images");
    for (int i = 0; i < 3; ++i)
      write_image(random_image(48, 48, 3, 50 + i), dir / "images" / ("s" + std::to_string(i) + ".png"));
    img = (dir / "clean.png").string();
    odd = (dir / "odd.png").string();
    write_image(random_image(64, 64, 3, 7), img);
    write_image(random_image(60, 66, 3, 8), odd);
    lib = (dir / "lib").string();
    const auto r = run_cli({"library", "build", "--images", (dir / "images").string(), "--task", "dn",
                        "--pool", "200", "--seed", "3", "--out", lib});
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("library build writes the library and a manifest") {
  Workspace ws;
  CHECK(std::filesystem::exists(ws.lib + "/manifest.json"));
  CHECK(std::filesystem::exists(ws.lib + "/pool.bin"));
  const auto m = load(ws.lib + "/run_manifest.json");
  CHECK(m["config"]["degradation"]["sigma"] == 50.0);
  CHECK(m["config"]["patch_size"] == 8);
  CHECK(m["config"]["pool"] == 200);
  CHECK(m["hashes"].size() == 3);
  CHECK(m.contains("wall_clock_seconds"));
  CHECK(m["tool_version"] == cem::cli::kToolVersion);
}

TEST_CASE("run with identity on a clean pair") {
  Workspace ws;
  const auto out = ws.path("run1");
  const auto r = run_cli({"run", "--model", "builtin:identity", "--input", ws.img, "--gt", ws.img,
                      "--roi", "8,8,8,8", "--library", ws.lib, "--mode", "fast", "--seed", "1",
                      "--workers", "2", "--out", out});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto cem = load(out + "/cem.json");
  int nulls = 0;
  for (const auto& e : cem["effects"]) {
    if (e.is_null()) {
      ++nulls;
      continue;
    }
    CHECK(e.get<double>() == 0.0);
  }
  CHECK(nulls == 1);
  CHECK(cem["counts"]["inferences"] == 1 + 63 * 3);
  CHECK(std::filesystem::exists(out + "/heatmap.png"));
  const auto m = load(out + "/manifest.json");
  for (const char* key : {"command_line", "config", "hashes", "tool_version",
                          "wall_clock_seconds", "inferences"})
    CHECK(m.contains(key));
  CHECK(m["config"]["T"] == 500);
  CHECK(m["config"]["C"] == 3);
  CHECK(m["config"]["F"] == 50);
  CHECK(m["config"]["tau"] == 0.01);
  CHECK(m["config"]["patch_size"] == 8);
  CHECK(m["hashes"].contains("library_pool"));

  const auto c = run_cli({"compare", "--a", out + "/cem.json", "--b", out + "/cem.json"});
  CHECK(c.code == 0);
  CHECK(c.out == "similarity: 100.00%\n");
}

TEST_CASE("run is byte reproducible and honours CEM_SEED") {
  Workspace ws;
  std::vector<std::string> base{"run", "--model", "builtin:local_window", "--input", ws.img,
                                "--gt", ws.img, "--roi", "24,24,8,8", "--library", ws.lib};
  auto with = [&](std::vector<std::string> extra, const std::string& out) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    a.push_back("--out");
    a.push_back(out);
    const auto r = run_cli(a);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return slurp(out + "/cem.json");
  };
  const auto a = with({"--seed", "5"}, ws.path("a"));
  const auto b = with({"--seed", "5", "--workers", "3"}, ws.path("b"));
  CHECK(a == b);
  ::setenv("CEM_SEED", "5", 1);
  const auto c = with({}, ws.path("c"));
  ::unsetenv("CEM_SEED");
  CHECK(c == a);
  const auto d = with({"--seed", "6"}, ws.path("d"));
  CHECK(d != a);
}

TEST_CASE("non-divisible input") {
  Workspace ws;
  const auto r = run_cli({"run", "--model", "builtin:identity", "--input", ws.odd, "--gt", ws.odd,
                      "--roi", "0,0,8,8", "--library", ws.lib, "--out", ws.path("x")});
  CHECK(r.code == 1);
  CHECK(r.err.find("not divisible") != std::string::npos);
  CHECK(r.err.find("--crop-to-multiple") != std::string::npos);

  const auto ok = run_cli({"run", "--model", "builtin:identity", "--input", ws.odd, "--gt", ws.odd,
                       "--roi", "0,0,8,8", "--library", ws.lib, "--crop-to-multiple", "--out",
                       ws.path("y")});
  REQUIRE_MESSAGE(ok.code == 0, ok.err);
  const auto cem = load(ws.path("y") + "/cem.json");
  CHECK(cem["input"]["height"] == 56);
  CHECK(cem["input"]["width"] == 64);
}

TEST_CASE("usage and runtime errors map to exit codes") {
  Workspace ws;
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({"run", "--model", "builtin:identity"}).code == 1);
  CHECK(run_cli({"run", "--model", "builtin:identity", "--input", ws.img, "--gt", ws.img, "--roi",
             "8,8,8", "--library", ws.lib, "--out", ws.path("z")})
            .code == 1);
  CHECK(run_cli({"run", "--model", "builtin:identity", "--input", ws.img, "--gt", ws.img, "--roi",
             "8,8,8,8", "--library", ws.lib, "--mode", "slow", "--out", ws.path("z")})
            .code == 1);
  CHECK(run_cli({"run", "--model", "builtin:identity", "--input", ws.img, "--gt", ws.img, "--roi",
             "60,60,8,8", "--library", ws.lib, "--out", ws.path("z")})
            .code == 1);
  const auto missing = run_cli({"run", "--model", "builtin:identity", "--input", ws.path("nope.png"),
                            "--gt", ws.img, "--roi", "8,8,8,8", "--library", ws.lib, "--out",
                            ws.path("z")});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("nope.png") != std::string::npos);
  CHECK(run_cli({"compare", "--a", ws.path("none.json"), "--b", ws.path("none.json")}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"--version"}).out == std::string(cem::cli::kToolVersion) + "\n");
}

TEST_CASE("render, report and degrade") {
  Workspace ws;
  for (const char* name : {"r1", "r2"}) {
    const auto r = run_cli({"run", "--model", "builtin:box_denoise", "--input", ws.img, "--gt", ws.img,
                        "--roi", "16,16,16,8", "--library", ws.lib, "--mode", "full", "--T", "60",
                        "--seed", name, "--out", ws.path(name)});
    // --seed must be numeric.
    CHECK(r.code == 1);
  }
  for (int s : {1, 2}) {
    const auto r = run_cli({"run", "--model", "builtin:box_denoise", "--input", ws.img, "--gt", ws.img,
                        "--roi", "16,16,16,8", "--library", ws.lib, "--mode", "full", "--T", "60",
                        "--seed", std::to_string(s), "--out", ws.path("r" + std::to_string(s))});
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  const auto rend = run_cli({"render", "--cem", ws.path("r1") + "/cem.json", "--input", ws.img, "--out",
                         ws.path("h.png"), "--display-factor", "2"});
  REQUIRE_MESSAGE(rend.code == 0, rend.err);
  CHECK(read_image(ws.path("h.png")).width() == 128);
  CHECK(std::filesystem::exists(ws.path("h.png") + ".manifest.json"));

  const auto rep = run_cli({"report", "--glob", ws.path("r*") + "/cem.json", "--out", ws.path("t.csv"),
                        "--reference", ws.path("r1") + "/cem.json"});
  REQUIRE_MESSAGE(rep.code == 0, rep.err);
  std::istringstream csv(slurp(ws.path("t.csv")));
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 4);
  CHECK(run_cli({"report", "--glob", ws.path("nothing*"), "--out", ws.path("u.csv")}).code == 1);
  const auto rj = run_cli({"report", "--glob", ws.path("r*") + "/cem.json", "--out", ws.path("t.json"),
                       "--format", "json"});
  CHECK(rj.code == 0);
  CHECK(load(ws.path("t.json")).size() == 3);

  const auto dg = run_cli({"degrade", "--input", ws.img, "--task", "sr", "--out", ws.path("lr.png")});
  REQUIRE_MESSAGE(dg.code == 0, dg.err);
  CHECK(read_image(ws.path("lr.png")).width() == 16);
}

TEST_CASE("installed binary exit codes") {
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  const std::string bin = CEM_CLI_BINARY;
  CHECK(status(bin + " --version") == 0);
  CHECK(status(bin + " nonsense") == 1);
  CHECK(status(bin + " compare --a /nonexistent/a.json --b /nonexistent/b.json") == 2);
}
