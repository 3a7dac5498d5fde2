#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pimfused/arch.hpp"
#include "pimfused/dataflow.hpp"
#include "pimfused/experiment.hpp"
#include "pimfused/ppa.hpp"
#include "pimfused/simcore.hpp"
#include "pimfused/trace.hpp"
#include "pimfused/workload.hpp"

using namespace pimfused;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw Error("cannot write " + path);
}

struct ArchArgs {
  std::string path;
  std::string label;
};

void add_arch_options(CLI::App* cmd, ArchArgs& a) {
  cmd->add_option("--arch", a.path, "Architecture TOML (missing fields take defaults)");
  cmd->add_option("--label", a.label, "Buffer configuration, e.g. G32K_L256");
}

ArchConfig resolve_arch(const ArchArgs& a) {
  ArchConfig arch = arch_with_env_overrides();
  if (!a.path.empty()) arch = load_config(a.path, arch);
  if (!a.label.empty()) arch = named_config(a.label, arch);
  validate(arch);
  return arch;
}

struct PlanArgs {
  std::string arch_out;
  std::string workload = "resnet18";
  std::string plan = "fused16";
  std::string counting = "CountPool";
  std::string scenario = "FULL";
};

void add_plan_options(CLI::App* cmd, PlanArgs& p) {
  cmd->add_option("--workload", p.workload, "Workload JSON file or 'resnet18'")->capture_default_str();
  cmd->add_option("--plan", p.plan, "aim | fused16 | fused4 | path to a plan JSON")->capture_default_str();
  cmd->add_option("--counting", p.counting, "Layer counting for fused kernels")
      ->check(CLI::IsMember({"CountPool", "SkipPool"}))
      ->capture_default_str();
  cmd->add_option("--scenario", p.scenario, "FIRST8 or FULL")
      ->check(CLI::IsMember({"FIRST8", "FULL"}))
      ->capture_default_str();
  cmd->add_option("--arch-out", p.arch_out, "Also write the system's resolved arch TOML here");
}

SystemSetup resolve_setup(const PlanArgs& p, const ArchConfig& arch) {
  const LayerCounting counting = p.counting == "SkipPool" ? LayerCounting::SkipPool : LayerCounting::CountPool;
  CnnGraph g = scenario_graph(resolve_workload(p.workload), scenario_from_string(p.scenario), counting);
  if (p.plan == "aim") return configure_system(System::AimLike, g, arch, counting);
  if (p.plan == "fused16") return configure_system(System::Fused16, g, arch, counting);
  if (p.plan == "fused4") return configure_system(System::Fused4, g, arch, counting);
  SystemSetup s{g, plan_from_json(read_text(p.plan)), arch};
  auto problems = check_plan(g, s.plan);
  if (!problems.empty()) throw Error("plan " + p.plan + ": " + problems.front());
  return s;
}

SystemSetup resolve_and_record(const PlanArgs& p, const ArchArgs& a) {
  SystemSetup s = resolve_setup(p, resolve_arch(a));
  if (!p.arch_out.empty()) write_text(p.arch_out, config_to_toml(s.arch));
  return s;
}

int cmd_config(bool print_defaults, const ArchArgs& a) {
  ArchConfig arch = print_defaults && a.path.empty() && a.label.empty() ? default_arch() : resolve_arch(a);
  std::cout << config_to_toml(arch);
  return 0;
}

int cmd_analyze(const PlanArgs& p, const ArchArgs& a, const std::string& out) {
  SystemSetup s = resolve_and_record(p, a);
  write_text(out, metrics_to_json(analyze(s.graph, s.plan, s.arch)));
  return 0;
}

int cmd_trace(const PlanArgs& p, const ArchArgs& a, const std::string& out) {
  SystemSetup s = resolve_and_record(p, a);
  CommandTrace t = emit_trace(s.graph, s.plan, s.arch);
  if (out.empty() || out == "-") {
    serialize_trace(t, std::cout);
  } else {
    save_trace(t, out);
  }
  std::cerr << t.commands.size() << " commands\n";
  return 0;
}

int cmd_simulate(const std::string& trace_path, const ArchArgs& a, const std::string& out) {
  ArchConfig arch = resolve_arch(a);
  CommandTrace t = load_trace(trace_path);
  if (!t.arch_digest.empty() && t.arch_digest != arch_digest(arch)) {
    std::cerr << "warning: trace arch digest " << t.arch_digest << " differs from " << arch_digest(arch) << "\n";
  }
  write_text(out, stats_to_json(simulate(t, arch)));
  return 0;
}

int cmd_ppa(const std::string& stats_path, const ArchArgs& a, const std::string& out) {
  ArchConfig arch = resolve_arch(a);
  SimStats stats = stats_from_json(read_text(stats_path));
  const EnergyReport e = estimate_energy(stats, arch);
  const AreaReport ar = estimate_area(arch);
  nlohmann::ordered_json j;
  j["cycles"] = stats.total_cycles;
  j["energy"] = nlohmann::ordered_json::parse(energy_to_json(e));
  j["area"] = nlohmann::ordered_json::parse(area_to_json(ar));
  write_text(out, j.dump(2));
  return 0;
}

int cmd_run(const std::string& spec_path, const std::string& preset, const std::string& out) {
  std::vector<ExperimentSpec> specs;
  if (!spec_path.empty()) specs.push_back(load_spec(spec_path));
  if (!preset.empty()) {
    for (auto& s : preset_specs(preset)) specs.push_back(std::move(s));
  }
  if (specs.empty()) throw Error("run needs --spec or --preset");
  const ArchConfig base = arch_with_env_overrides();
  for (const auto& spec : specs) {
    ResultTable t = run_experiment(spec, base);
    write_reports(t, out);
    std::cout << table_to_csv(t);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fused-layer PIM dataflow analyzer and command-level simulator"};
  app.require_subcommand(1);

  bool print_defaults = false;
  ArchArgs cfg_arch;
  auto* config = app.add_subcommand("config", "Print an architecture configuration as TOML");
  config->add_flag("--print-defaults", print_defaults, "Print the built-in defaults");
  add_arch_options(config, cfg_arch);

  PlanArgs an_plan;
  ArchArgs an_arch;
  std::string an_out;
  auto* analyze_cmd = app.add_subcommand("analyze", "Compute dataflow metrics for a workload and plan");
  add_plan_options(analyze_cmd, an_plan);
  add_arch_options(analyze_cmd, an_arch);
  analyze_cmd->add_option("--out", an_out, "Output JSON (default stdout)");

  PlanArgs tr_plan;
  ArchArgs tr_arch;
  std::string tr_out;
  auto* trace_cmd = app.add_subcommand("trace", "Emit the PIM command trace for a workload and plan");
  add_plan_options(trace_cmd, tr_plan);
  add_arch_options(trace_cmd, tr_arch);
  trace_cmd->add_option("--out", tr_out, "Output trace file (default stdout)");

  std::string sim_trace;
  ArchArgs sim_arch;
  std::string sim_out;
  auto* sim_cmd = app.add_subcommand("simulate", "Replay a command trace and report cycle statistics");
  sim_cmd->add_option("--trace", sim_trace, "Trace file")->required()->check(CLI::ExistingFile);
  add_arch_options(sim_cmd, sim_arch);
  sim_cmd->add_option("--out", sim_out, "Output stats JSON (default stdout)");

  std::string ppa_stats;
  ArchArgs ppa_arch;
  std::string ppa_out;
  auto* ppa_cmd = app.add_subcommand("ppa", "Estimate energy and area from simulator statistics");
  ppa_cmd->add_option("--stats", ppa_stats, "Stats JSON from simulate")->required()->check(CLI::ExistingFile);
  add_arch_options(ppa_cmd, ppa_arch);
  ppa_cmd->add_option("--out", ppa_out, "Output JSON (default stdout)");

  std::string run_spec;
  std::string run_preset;
  std::string run_out = "results";
  auto* run_cmd = app.add_subcommand("run", "Run an experiment sweep and write CSV, JSON and plot data");
  auto* spec_opt = run_cmd->add_option("--spec", run_spec, "Experiment TOML")->check(CLI::ExistingFile);
  auto* preset_opt =
      run_cmd->add_option("--preset", run_preset, "Built-in sweep")->check(CLI::IsMember({"fig5", "fig6", "fig7"}));
  spec_opt->excludes(preset_opt);
  run_cmd->add_option("--out", run_out, "Output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (config->parsed()) return cmd_config(print_defaults, cfg_arch);
    if (analyze_cmd->parsed()) return cmd_analyze(an_plan, an_arch, an_out);
    if (trace_cmd->parsed()) return cmd_trace(tr_plan, tr_arch, tr_out);
    if (sim_cmd->parsed()) return cmd_simulate(sim_trace, sim_arch, sim_out);
    if (ppa_cmd->parsed()) return cmd_ppa(ppa_stats, ppa_arch, ppa_out);
    if (run_cmd->parsed()) return cmd_run(run_spec, run_preset, run_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
