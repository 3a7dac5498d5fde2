#include "pimfused/ppa.hpp"

#include "json.hpp"

namespace pimfused {

namespace {

constexpr double kPjPerNj = 1000.0;

double sram_access_pj(const ArchConfig& arch, std::int64_t capacity) {
  return capacity > 0 ? interpolate_capacity(arch.energy.sram_access_pj, double(capacity)) : 0.0;
}

}  // namespace

EnergyReport estimate_energy(const SimStats& stats, const ArchConfig& arch) {
  validate(arch);
  if (!stats.arch_digest.empty() && stats.arch_digest != arch_digest(arch)) {
    throw Error("stats were produced under a different arch (digest " + stats.arch_digest + ", expected " +
                arch_digest(arch) + ")");
  }
  const EnergyParams& e = arch.energy;
  EnergyReport r;
  r.bank_near = double(stats.near_bank_bytes) * e.near_bank_access_fraction * e.dram_io_access_pj_per_byte;
  r.bank_via_bus = double(stats.via_bus_bytes) * e.dram_io_access_pj_per_byte;
  r.bus = double(stats.bus_bytes) * e.bus_pj_per_byte;
  r.gbuf = double(stats.gbuf_reads + stats.gbuf_writes) * sram_access_pj(arch, arch.gbuf_bytes);
  r.lbuf = double(stats.lbuf_reads + stats.lbuf_writes) * sram_access_pj(arch, arch.lbuf_bytes);
  r.pimcores = double(stats.mac_ops) * e.mac_op_pj;
  r.gbcore = double(stats.gbcore_ops) * e.gbcore_op_pj;

  const double sram_kb = double(arch.gbuf_bytes + std::int64_t(arch.num_pimcores()) * arch.lbuf_bytes) / 1024.0;
  const double power_mw =
      arch.num_pimcores() * e.leakage_pimcore_mw + e.leakage_gbcore_mw + sram_kb * e.leakage_sram_mw_per_kb;
  // mW x ns = pJ
  r.leakage = power_mw * double(stats.total_cycles) / arch.frequency_ghz;

  for (double* v : {&r.bank_near, &r.bank_via_bus, &r.gbuf, &r.lbuf, &r.pimcores, &r.gbcore, &r.bus, &r.leakage}) {
    *v /= kPjPerNj;
  }
  r.total = r.bank_near + r.bank_via_bus + r.gbuf + r.lbuf + r.pimcores + r.gbcore + r.bus + r.leakage;
  return r;
}

double sram_area_mm2(const ArchConfig& arch, double capacity_bytes) {
  return interpolate_capacity(arch.area.sram_mm2, capacity_bytes);
}

AreaReport estimate_area(const ArchConfig& arch) {
  validate(arch);
  const AreaParams& a = arch.area;
  const int cores = arch.num_pimcores();
  AreaReport r;
  r.pimcores =
      cores * (arch.pimcore_functions == PimcoreFunctions::Fused ? a.pimcore_fused_mm2 : a.pimcore_aim_mm2);
  r.gbcore = a.gbcore_mm2;
  r.gbuf = sram_area_mm2(arch, double(arch.gbuf_bytes));
  r.lbufs = cores * sram_area_mm2(arch, double(arch.lbuf_bytes));
  r.bus = a.bus_mm2;
  r.total = r.pimcores + r.gbcore + r.gbuf + r.lbufs + r.bus;
  return r;
}

PpaTriple normalize(const PpaTriple& value, const PpaTriple& baseline) {
  if (baseline.cycles <= 0 || baseline.energy <= 0 || baseline.area <= 0) {
    throw Error("cannot normalize against a baseline with a zero component");
  }
  return {value.cycles / baseline.cycles, value.energy / baseline.energy, value.area / baseline.area};
}

std::string energy_to_json(const EnergyReport& e) {
  nlohmann::ordered_json j;
  j["unit"] = "nJ";
  j["bank_near"] = e.bank_near;
  j["bank_via_bus"] = e.bank_via_bus;
  j["gbuf"] = e.gbuf;
  j["lbuf"] = e.lbuf;
  j["pimcores"] = e.pimcores;
  j["gbcore"] = e.gbcore;
  j["bus"] = e.bus;
  j["leakage"] = e.leakage;
  j["total"] = e.total;
  return j.dump(2);
}

std::string area_to_json(const AreaReport& a) {
  nlohmann::ordered_json j;
  j["unit"] = "mm2";
  j["pimcores"] = a.pimcores;
  j["gbcore"] = a.gbcore;
  j["gbuf"] = a.gbuf;
  j["lbufs"] = a.lbufs;
  j["bus"] = a.bus;
  j["total"] = a.total;
  return j.dump(2);
}

}  // namespace pimfused
