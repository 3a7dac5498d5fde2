#include "pimfused/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#define TOML_EXCEPTIONS 1
#include "json.hpp"
#include "pimfused/simcore.hpp"
#include "pimfused/trace.hpp"
#include "toml.hpp"

namespace pimfused {

const char* to_string(Scenario s) { return s == Scenario::First8 ? "FIRST8" : "FULL"; }

const char* to_string(System s) {
  switch (s) {
    case System::AimLike:
      return "AIM_LIKE";
    case System::Fused16:
      return "FUSED16";
    case System::Fused4:
      return "FUSED4";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "FIRST8") return Scenario::First8;
  if (s == "FULL") return Scenario::Full;
  throw Error("unknown scenario '" + s + "' (expected FIRST8 or FULL)");
}

System system_from_string(const std::string& s) {
  for (System x : {System::AimLike, System::Fused16, System::Fused4}) {
    if (s == to_string(x)) return x;
  }
  throw Error("unknown system '" + s + "' (expected AIM_LIKE, FUSED16 or FUSED4)");
}

namespace {

LayerCounting counting_from_string(const std::string& s) {
  if (s == "CountPool") return LayerCounting::CountPool;
  if (s == "SkipPool") return LayerCounting::SkipPool;
  throw Error("unknown layer counting '" + s + "' (expected CountPool or SkipPool)");
}

std::vector<std::string> string_list(const toml::table& root, const char* key) {
  std::vector<std::string> out;
  const toml::node* n = root.get(key);
  if (!n) return out;
  const auto* arr = n->as_array();
  if (!arr) throw Error(std::string("experiment field '") + key + "': expected array of strings");
  for (const auto& e : *arr) {
    auto v = e.value<std::string>();
    if (!v) throw Error(std::string("experiment field '") + key + "': expected array of strings");
    out.push_back(*v);
  }
  return out;
}

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

ExperimentSpec spec_from_toml(const std::string& text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "experiment parse error at line " << e.source().begin.line << ": " << e.description();
    throw Error(os.str());
  }
  ExperimentSpec s;
  if (auto v = root["name"].value<std::string>()) s.name = *v;
  if (auto v = root["workload"].value<std::string>()) s.workload = *v;
  if (auto v = root["scenario"].value<std::string>()) s.scenario = scenario_from_string(*v);
  if (auto v = root["counting"].value<std::string>()) s.counting = counting_from_string(*v);
  if (root.contains("systems")) {
    s.systems.clear();
    for (const auto& name : string_list(root, "systems")) s.systems.push_back(system_from_string(name));
  }
  if (root.contains("grid")) s.grid = string_list(root, "grid");
  if (s.systems.empty()) throw Error("experiment 'systems' must not be empty");
  if (s.grid.empty()) throw Error("experiment 'grid' must not be empty");
  for (const auto& label : s.grid) parse_buffer_label(label);
  return s;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open experiment spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return spec_from_toml(ss.str());
}

std::vector<ExperimentSpec> preset_specs(const std::string& name) {
  std::vector<ExperimentSpec> out;
  auto both = [&](const std::string& base, const std::vector<std::string>& grid) {
    for (Scenario sc : {Scenario::First8, Scenario::Full}) {
      ExperimentSpec s;
      s.name = base + "_" + (sc == Scenario::First8 ? "first8" : "full");
      s.scenario = sc;
      s.grid = grid;
      out.push_back(s);
    }
  };
  if (name == "fig5") {
    both("fig5", {"G2K_L0", "G4K_L0", "G8K_L0", "G16K_L0", "G32K_L0", "G64K_L0"});
  } else if (name == "fig6") {
    both("fig6", {"G2K_L0", "G2K_L64", "G2K_L128", "G2K_L256", "G2K_L512"});
  } else if (name == "fig7") {
    ExperimentSpec s;
    s.name = "fig7_full";
    s.scenario = Scenario::Full;
    s.grid = {"G2K_L0", "G8K_L64", "G16K_L128", "G32K_L256", "G64K_L256", "G64K_L100K"};
    out.push_back(s);
  } else {
    throw Error("unknown preset '" + name + "' (expected fig5, fig6 or fig7)");
  }
  return out;
}

CnnGraph resolve_workload(const std::string& workload) {
  if (workload == "resnet18") return build_resnet18();
  return load_workload(workload);
}

CnnGraph scenario_graph(const CnnGraph& full, Scenario scenario, LayerCounting counting) {
  if (scenario == Scenario::Full) return full;
  FusionPlan p = default_fusion_plan(full, 16, counting);
  if (p.kernels.empty()) throw Error("workload '" + full.name + "' has no fused kernel to define FIRST8");
  return full.truncated(p.kernels.front().layer_ids.back() + 1);
}

SystemSetup configure_system(System system, const CnnGraph& graph, const ArchConfig& arch, LayerCounting counting) {
  SystemSetup s;
  s.graph = graph;
  s.arch = arch;
  switch (system) {
    case System::AimLike:
      s.arch.banks_per_pimcore = 1;
      s.arch.pimcore_functions = PimcoreFunctions::AimLike;
      s.plan = layer_by_layer_plan(graph);
      break;
    case System::Fused16:
      s.arch.banks_per_pimcore = 1;
      s.arch.pimcore_functions = PimcoreFunctions::Fused;
      s.plan = default_fusion_plan(graph, s.arch.num_pimcores(), counting);
      break;
    case System::Fused4:
      s.arch.banks_per_pimcore = 4;
      s.arch.pimcore_functions = PimcoreFunctions::Fused;
      s.plan = default_fusion_plan(graph, s.arch.num_pimcores(), counting);
      break;
  }
  validate(s.arch);
  return s;
}

PointResult run_point(const SystemSetup& setup) {
  CommandTrace t = emit_trace(setup.graph, setup.plan, setup.arch);
  SimStats st = simulate(t, setup.arch);
  return {st.total_cycles, estimate_energy(st, setup.arch), estimate_area(setup.arch)};
}

ResultTable run_experiment(const ExperimentSpec& spec, const ArchConfig& base) {
  if (spec.systems.empty() || spec.grid.empty()) throw Error("experiment needs at least one system and grid point");
  const CnnGraph graph = scenario_graph(resolve_workload(spec.workload), spec.scenario, spec.counting);

  struct Task {
    System system;
    std::string label;
  };
  std::vector<Task> tasks{{System::AimLike, "G2K_L0"}};
  for (System sys : spec.systems) {
    for (const auto& label : spec.grid) tasks.push_back({sys, label});
  }
  // Traces are large, so only a few grid points run at once.
  const size_t batch = std::clamp<size_t>(std::thread::hardware_concurrency(), 1, 4);
  std::vector<PointResult> results;
  for (size_t first = 0; first < tasks.size(); first += batch) {
    std::vector<std::future<PointResult>> futures;
    for (size_t i = first; i < std::min(tasks.size(), first + batch); ++i) {
      futures.push_back(std::async(std::launch::async, [&, task = tasks[i]] {
        try {
          return run_point(configure_system(task.system, graph, named_config(task.label, base), spec.counting));
        } catch (const Error& e) {
          throw Error(std::string(to_string(task.system)) + " @ " + task.label + ": " + e.what());
        }
      }));
    }
    for (auto& f : futures) results.push_back(f.get());
  }

  const PointResult& b = results.front();
  const PpaTriple baseline{double(b.cycles), b.energy.total, b.area.total};
  ResultTable t;
  t.name = spec.name;
  t.workload = graph.name;
  t.scenario = spec.scenario;
  for (size_t i = 1; i < tasks.size(); ++i) {
    const PointResult& r = results[i];
    PpaTriple n = normalize({double(r.cycles), r.energy.total, r.area.total}, baseline);
    t.rows.push_back({tasks[i].system, tasks[i].label, r.cycles, r.energy.total, r.area.total, 100.0 * n.cycles,
                      100.0 * n.energy, 100.0 * n.area});
  }
  return t;
}

std::string table_to_csv(const ResultTable& t) {
  std::ostringstream os;
  os << "system,label,cycles,energy,area,cycles_pct,energy_pct,area_pct\n";
  for (const auto& r : t.rows) {
    os << to_string(r.system) << ',' << r.label << ',' << r.cycles << ',' << format_double(r.energy, 3) << ','
       << format_double(r.area, 6) << ',' << format_double(r.cycles_pct, 2) << ','
       << format_double(r.energy_pct, 2) << ',' << format_double(r.area_pct, 2) << '\n';
  }
  return os.str();
}

std::string table_to_json(const ResultTable& t) {
  nlohmann::ordered_json j;
  j["name"] = t.name;
  j["workload"] = t.workload;
  j["scenario"] = to_string(t.scenario);
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : t.rows) {
    nlohmann::ordered_json x;
    x["system"] = to_string(r.system);
    x["label"] = r.label;
    x["cycles"] = r.cycles;
    x["energy"] = r.energy;
    x["area"] = r.area;
    x["cycles_pct"] = r.cycles_pct;
    x["energy_pct"] = r.energy_pct;
    x["area_pct"] = r.area_pct;
    j["rows"].push_back(x);
  }
  return j.dump(2);
}

ResultTable table_from_json(const std::string& text) {
  ResultTable t;
  try {
    auto j = nlohmann::json::parse(text);
    t.name = j.at("name").get<std::string>();
    t.workload = j.at("workload").get<std::string>();
    t.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    for (const auto& x : j.at("rows")) {
      ResultRow r;
      r.system = system_from_string(x.at("system").get<std::string>());
      r.label = x.at("label").get<std::string>();
      r.cycles = x.at("cycles").get<std::int64_t>();
      r.energy = x.at("energy").get<double>();
      r.area = x.at("area").get<double>();
      r.cycles_pct = x.at("cycles_pct").get<double>();
      r.energy_pct = x.at("energy_pct").get<double>();
      r.area_pct = x.at("area_pct").get<double>();
      t.rows.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("result table JSON: ") + e.what());
  }
  return t;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error("cannot write " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

std::vector<std::filesystem::path> write_plot_data(const ResultTable& t, const std::filesystem::path& dir) {
  if (t.rows.empty()) throw Error("cannot write plot data for an empty table");
  ensure_dir(dir);
  std::vector<System> systems;
  for (const auto& r : t.rows) {
    if (std::find(systems.begin(), systems.end(), r.system) == systems.end()) systems.push_back(r.system);
  }
  const std::pair<const char*, double ResultRow::*> metrics[] = {
      {"cycles", &ResultRow::cycles_pct}, {"energy", &ResultRow::energy_pct}, {"area", &ResultRow::area_pct}};
  std::vector<std::filesystem::path> paths;
  for (System sys : systems) {
    for (const auto& [metric, field] : metrics) {
      std::ostringstream os;
      os << "# " << t.name << ' ' << to_string(sys) << ' ' << metric << "_pct\n";
      int index = 0;
      for (const auto& r : t.rows) {
        if (r.system == sys) os << index++ << ' ' << r.label << ' ' << format_double(r.*field, 4) << '\n';
      }
      auto path = dir / (t.name + "_" + to_string(sys) + "_" + metric + ".dat");
      write_file(path, os.str());
      paths.push_back(path);
    }
  }
  return paths;
}

void write_reports(const ResultTable& t, const std::filesystem::path& dir) {
  if (t.rows.empty()) throw Error("cannot write reports for an empty table");
  ensure_dir(dir);
  write_file(dir / (t.name + ".csv"), table_to_csv(t));
  write_file(dir / (t.name + ".json"), table_to_json(t));
  write_plot_data(t, dir / "plot");
}

ArchConfig arch_with_env_overrides(const ArchConfig& base) {
  const char* path = std::getenv("PIMFUSED_ARCH_OVERRIDES");
  if (!path || !*path) return base;
  return load_config(path, base);
}

}  // namespace pimfused
