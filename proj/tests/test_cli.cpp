#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nnspec/cli.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nnspec");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = nnspec::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nnspec_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("classify relu") {
  auto r = cli({"classify", "--activation", "relu"});
  REQUIRE(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(j["regime"] == "sparse");
  CHECK(std::abs(j["kappa_prime_1"].get<double>() - 1) <= 1e-6);
  CHECK(j["provenance"]["version"].is_string());
  CHECK(j["provenance"]["config"]["seed"] == 0);
}

TEST_CASE("support for shallow relu") {
  auto r = cli({"support", "--activation", "relu", "--d", "2", "--depth", "1", "--alpha", "0.2"});
  REQUIRE(r.code == 0);
  auto row = json::parse(r.out)["table"][0];
  CHECK(row["C_alpha"] == 1);
  CHECK(row["D_alpha"] == 4);
}

TEST_CASE("usage errors exit 2 with JSON on stderr") {
  for (auto args : std::vector<std::vector<std::string>>{{"classify", "--activation", "nosuch"},
                                                         {"classify"},
                                                         {"frobnicate"},
                                                         {"spectrum", "--activation", "relu", "--format", "xml"},
                                                         {"spectrum", "--activation", "relu", "--param", "a"},
                                                         {"spectrum", "--activation", "relu", "--depth", "0"},
                                                         {"spectrum", "--activation", "relu", "--gamma-b", "1"},
                                                         {"synth", "--activation", "relu", "--grid", "4by4", "--out", "x"}}) {
    auto r = cli(args);
    CHECK(r.code == 2);
    CHECK(r.out.empty());
    auto e = json::parse(r.err);
    CHECK(e["error"]["message"].is_string());
  }
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("moments from an emitted spectrum match the in-process ones") {
  auto dir = scratch("roundtrip");
  auto s = cli({"spectrum", "--activation", "tanh", "--depth", "1", "--depth", "5", "--out", dir.string()});
  REQUIRE(s.code == 0);
  for (int L : {1, 5}) {
    const auto file = dir / ("spectrum_L" + std::to_string(L) + ".json");
    std::ifstream f(file);
    auto emitted = json::parse(f);
    auto m = cli({"moments", "--law", file.string()});
    REQUIRE(m.code == 0);
    auto got = json::parse(m.out)["laws"][0]["moments"];
    REQUIRE(got.size() == emitted["moments"].size());
    for (std::size_t k = 0; k < got.size(); ++k) CHECK(got[k]["value"] == emitted["moments"][k]["value"]);
  }
}

TEST_CASE("csv outputs carry provenance and fixed columns") {
  auto dir = scratch("csv");
  REQUIRE(cli({"spectrum", "--activation", "relu", "--depth", "3", "--format", "csv", "--out", dir.string()}).code == 0);
  std::ifstream f(dir / "spectrum_L3.csv");
  std::string prov, header, row;
  std::getline(f, prov);
  std::getline(f, header);
  std::getline(f, row);
  CHECK(prov.rfind("# {", 0) == 0);
  CHECK(json::parse(prov.substr(2))["config"]["depths"] == json::array({3}));
  CHECK(header == "ell,mass,cumulative,n_ell_d");
  CHECK(row.rfind("0,", 0) == 0);
}

TEST_CASE("config file") {
  auto dir = scratch("config");
  {
    std::ofstream c(dir / "run.toml");
    c << "activation = \"relu\"\ndepth = [1]\nalpha = [0.2]\n";
  }
  auto r = cli({"support", "--config", (dir / "run.toml").string()});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["table"][0]["D_alpha"] == 4);
}

TEST_CASE("synth and simulate write their artifacts") {
  auto dir = scratch("synth");
  REQUIRE(cli({"synth", "--activation", "relu", "--lmax", "16", "--out", dir.string()}).code == 0);
  CHECK(fs::exists(dir / "field_L1.grid"));
  CHECK(fs::exists(dir / "field_L1.ppm"));
  std::ifstream side(dir / "field_L1.json");
  auto j = json::parse(side);
  CHECK(j["provenance"]["config"]["lmax"] == 16);
  CHECK(j["grid"]["aliased"] == false);

  auto sim = scratch("simulate");
  REQUIRE(cli({"simulate", "--activation", "relu", "--width", "50", "--replicas", "40", "--lmax", "8", "--out",
               sim.string()})
              .code == 0);
  CHECK(fs::exists(sim / "kernel_L1.csv"));
  CHECK(fs::exists(sim / "empirical_L1.csv"));
  CHECK(fs::exists(sim / "compare_L1.json"));
}
