#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "pimfused/experiment.hpp"

using namespace pimfused;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pimfused_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string small_workload(const fs::path& dir) {
  const fs::path p = dir / "resnet18_64.json";
  std::ofstream(p) << graph_to_json(build_resnet18(64, 64));
  return p.string();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

ExperimentSpec small_spec(const fs::path& dir) {
  ExperimentSpec s;
  s.name = "small";
  s.workload = small_workload(dir);
  s.scenario = Scenario::First8;
  s.grid = {"G2K_L0", "G4K_L64"};
  return s;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("spec TOML parsing") {
    const ExperimentSpec s = spec_from_toml(
        "name = \"sweep\"\nscenario = \"FIRST8\"\nsystems = [\"FUSED16\", \"AIM_LIKE\"]\n"
        "grid = [\"G2K_L0\", \"G32K_L256\"]\ncounting = \"SkipPool\"\n");
    CHECK(s.name == "sweep");
    CHECK(s.workload == "resnet18");
    CHECK(s.scenario == Scenario::First8);
    REQUIRE(s.systems.size() == 2);
    CHECK(s.systems[0] == System::Fused16);
    CHECK(s.grid.size() == 2);
    CHECK(s.counting == LayerCounting::SkipPool);
    CHECK_THROWS_AS(spec_from_toml("systems = [\"FUSED8\"]\n"), Error);
    CHECK_THROWS_AS(spec_from_toml("grid = [\"G2K\"]\n"), Error);
    CHECK_THROWS_AS(spec_from_toml("scenario = \"HALF\"\n"), Error);
    CHECK(load_spec(PIMFUSED_SOURCE_DIR "/configs/example_experiment.toml").scenario == Scenario::First8);
  }

  TEST_CASE("presets") {
    const auto fig5 = preset_specs("fig5");
    REQUIRE(fig5.size() == 2);
    CHECK(fig5[0].grid.front() == "G2K_L0");
    CHECK(fig5[0].grid.back() == "G64K_L0");
    const auto fig6 = preset_specs("fig6");
    REQUIRE(!fig6.empty());
    for (const auto& g : fig6[0].grid) CHECK(g.rfind("G2K_", 0) == 0);
    const auto fig7 = preset_specs("fig7");
    REQUIRE(fig7.size() == 1);
    CHECK(fig7[0].scenario == Scenario::Full);
    CHECK(std::find(fig7[0].grid.begin(), fig7[0].grid.end(), "G64K_L100K") != fig7[0].grid.end());
    CHECK_THROWS_AS(preset_specs("fig9"), Error);
  }

  TEST_CASE("FIRST8 keeps the first fused kernel") {
    const CnnGraph g = scenario_graph(build_resnet18(), Scenario::First8, LayerCounting::CountPool);
    CHECK(g.layers.size() == 8);
    CHECK(scenario_graph(build_resnet18(), Scenario::Full, LayerCounting::CountPool).layers.size() == 31);
  }

  TEST_CASE("run, CSV, JSON and plot data") {
    const fs::path dir = scratch_dir("run");
    const ExperimentSpec spec = small_spec(dir);
    const ResultTable t = run_experiment(spec);
    REQUIRE(t.rows.size() == 6);
    CHECK(t.rows[0].system == System::AimLike);
    CHECK(t.rows[0].label == "G2K_L0");
    CHECK(t.rows[0].cycles_pct == doctest::Approx(100.0));
    CHECK(t.rows[0].energy_pct == doctest::Approx(100.0));
    CHECK(t.rows[0].area_pct == doctest::Approx(100.0));
    for (const auto& r : t.rows) {
      CHECK(r.cycles > 0);
      CHECK(r.energy > 0);
      CHECK(r.area > 0);
      CHECK(r.cycles_pct == doctest::Approx(100.0 * double(r.cycles) / double(t.rows[0].cycles)));
      CHECK(r.energy_pct == doctest::Approx(100.0 * r.energy / t.rows[0].energy));
    }

    const auto csv = lines_of(table_to_csv(t));
    REQUIRE(csv.size() == 7);
    CHECK(csv[0] == "system,label,cycles,energy,area,cycles_pct,energy_pct,area_pct");
    const std::regex row(R"(^(AIM_LIKE|FUSED16|FUSED4),G\d+K_L\d+K?,\d+,\d+\.\d{3},\d+\.\d{6},\d+\.\d{2},\d+\.\d{2},\d+\.\d{2}$)");
    for (size_t i = 1; i < csv.size(); ++i) CHECK(std::regex_match(csv[i], row));

    const ResultTable back = table_from_json(table_to_json(t));
    CHECK(back.name == t.name);
    CHECK(back.rows.size() == t.rows.size());
    CHECK(back.rows[3].cycles == t.rows[3].cycles);
    CHECK(back.rows[3].energy == doctest::Approx(t.rows[3].energy));

    write_reports(t, dir / "out");
    CHECK(fs::exists(dir / "out" / "small.csv"));
    CHECK(fs::exists(dir / "out" / "small.json"));
    const auto plots = write_plot_data(t, dir / "plots");
    CHECK(plots.size() == 9);
    std::ifstream in(dir / "plots" / "small_FUSED4_cycles.dat");
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    const auto dat = lines_of(ss.str());
    REQUIRE(dat.size() >= 2);
    const std::regex point(R"(^\d+ G\d+K_L\d+K? \d+\.\d{4}$)");
    for (const auto& l : dat) {
      if (l.empty() || l[0] == '#') continue;
      CHECK(std::regex_match(l, point));
    }
  }

  TEST_CASE("runs are deterministic") {
    const fs::path dir = scratch_dir("determinism");
    const ExperimentSpec spec = small_spec(dir);
    CHECK(table_to_csv(run_experiment(spec)) == table_to_csv(run_experiment(spec)));
  }

  TEST_CASE("unwritable output directory is an error") {
    const fs::path dir = scratch_dir("unwritable");
    const fs::path file = dir / "plain_file";
    std::ofstream(file) << "x";
    ResultTable t;
    t.name = "x";
    CHECK_THROWS_AS(write_reports(t, file / "sub"), Error);
  }

  TEST_CASE("errors name the failing system and point") {
    const fs::path dir = scratch_dir("failing");
    ExperimentSpec spec = small_spec(dir);
    ArchConfig tiny = default_arch();
    tiny.max_trace_commands = 50;
    try {
      run_experiment(spec, tiny);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(" @ ") != std::string::npos);
    }
  }

  TEST_CASE("environment overrides patch the base arch") {
    const fs::path dir = scratch_dir("env");
    const fs::path p = dir / "over.toml";
    std::ofstream(p) << "[timing]\ntCL = 31\n";
    setenv("PIMFUSED_ARCH_OVERRIDES", p.c_str(), 1);
    const ArchConfig a = arch_with_env_overrides();
    unsetenv("PIMFUSED_ARCH_OVERRIDES");
    CHECK(a.timing.tCL == 31);
    CHECK(arch_with_env_overrides().timing.tCL == default_arch().timing.tCL);
  }
}
