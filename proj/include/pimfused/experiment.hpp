#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pimfused/arch.hpp"
#include "pimfused/ppa.hpp"
#include "pimfused/workload.hpp"

namespace pimfused {

enum class Scenario { First8, Full };
enum class System { AimLike, Fused16, Fused4 };

const char* to_string(Scenario s);
const char* to_string(System s);
Scenario scenario_from_string(const std::string& s);  // throws Error
System system_from_string(const std::string& s);      // throws Error

struct ExperimentSpec {
  std::string name = "experiment";
  std::string workload = "resnet18";  // built-in name or path to a workload JSON file
  Scenario scenario = Scenario::Full;
  std::vector<System> systems{System::AimLike, System::Fused16, System::Fused4};
  std::vector<std::string> grid{"G2K_L0"};
  LayerCounting counting = LayerCounting::CountPool;
};

// TOML keys: name, workload, scenario, systems, grid, counting. Missing keys keep the defaults above.
ExperimentSpec spec_from_toml(const std::string& text);
ExperimentSpec load_spec(const std::filesystem::path& path);

// fig5: GBUF sweep at L0; fig6: LBUF sweep at G2K; fig7: joint grid on the full network.
std::vector<ExperimentSpec> preset_specs(const std::string& name);

// Everything needed to run one system at one buffer point.
struct SystemSetup {
  CnnGraph graph;
  FusionPlan plan;
  ArchConfig arch;
};

CnnGraph resolve_workload(const std::string& workload);
// Graph for the scenario: FIRST8 keeps the layers of the first fused kernel.
CnnGraph scenario_graph(const CnnGraph& full, Scenario scenario, LayerCounting counting);
// Applies the system's PIMcore grouping and function set to `arch` and builds its plan.
SystemSetup configure_system(System system, const CnnGraph& graph, const ArchConfig& arch,
                             LayerCounting counting = LayerCounting::CountPool);

struct ResultRow {
  System system = System::AimLike;
  std::string label;
  std::int64_t cycles = 0;
  double energy = 0.0;  // nJ
  double area = 0.0;    // mm^2
  double cycles_pct = 0.0;
  double energy_pct = 0.0;
  double area_pct = 0.0;

  bool operator==(const ResultRow&) const = default;
};

struct ResultTable {
  std::string name;
  std::string workload;
  Scenario scenario = Scenario::Full;
  std::vector<ResultRow> rows;  // spec order: systems outer, grid inner

  bool operator==(const ResultTable&) const = default;
};

struct PointResult {
  std::int64_t cycles = 0;
  EnergyReport energy;
  AreaReport area;
};

PointResult run_point(const SystemSetup& setup);

// Baseline is the AiM-like system at G2K_L0 on the same scenario and base arch.
ResultTable run_experiment(const ExperimentSpec& spec, const ArchConfig& base = default_arch());

std::string table_to_csv(const ResultTable& t);
std::string table_to_json(const ResultTable& t);
ResultTable table_from_json(const std::string& text);
// One whitespace-separated file per (system, metric): "<index> <label> <percent>". Returns the paths.
std::vector<std::filesystem::path> write_plot_data(const ResultTable& t, const std::filesystem::path& dir);
// Writes <dir>/<name>.csv, <name>.json and plot-data; throws Error if the directory is unwritable.
void write_reports(const ResultTable& t, const std::filesystem::path& dir);

// Base arch with the TOML overlay named by PIMFUSED_ARCH_OVERRIDES applied, if set.
ArchConfig arch_with_env_overrides(const ArchConfig& base = default_arch());

}  // namespace pimfused
