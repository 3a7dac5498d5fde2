#include "doctest.h"
#include "pimfused/experiment.hpp"
#include "pimfused/ppa.hpp"

using namespace pimfused;

namespace {

SimStats sample_stats() {
  SimStats s;
  s.total_cycles = 100000;
  s.near_bank_bytes = 1 << 20;
  s.via_bus_bytes = 1 << 16;
  s.bus_bytes = 1 << 16;
  s.gbuf_reads = 40000;
  s.gbuf_writes = 30000;
  s.lbuf_reads = 20000;
  s.lbuf_writes = 10000;
  s.mac_ops = 5000000;
  s.gbcore_ops = 7000;
  return s;
}

SimStats scaled(SimStats s, std::int64_t k) {
  for (std::int64_t* v : {&s.near_bank_bytes, &s.via_bus_bytes, &s.bus_bytes, &s.gbuf_reads, &s.gbuf_writes,
                          &s.lbuf_reads, &s.lbuf_writes, &s.mac_ops, &s.gbcore_ops}) {
    *v *= k;
  }
  return s;
}

}  // namespace

TEST_SUITE("ppa") {
  TEST_CASE("energy terms follow the per-event coefficients") {
    const ArchConfig a = named_config("G8K_L256", default_arch());
    const SimStats s = sample_stats();
    const EnergyReport e = estimate_energy(s, a);
    const EnergyParams& p = a.energy;
    CHECK(e.bank_near == doctest::Approx(double(s.near_bank_bytes) * p.near_bank_access_fraction *
                                         p.dram_io_access_pj_per_byte / 1000));
    CHECK(e.bank_via_bus == doctest::Approx(double(s.via_bus_bytes) * p.dram_io_access_pj_per_byte / 1000));
    CHECK(e.pimcores == doctest::Approx(double(s.mac_ops) * p.mac_op_pj / 1000));
    CHECK(e.gbcore == doctest::Approx(double(s.gbcore_ops) * p.gbcore_op_pj / 1000));
    CHECK(e.gbuf == doctest::Approx(70000 * interpolate_capacity(p.sram_access_pj, 8192) / 1000));
    CHECK(e.lbuf == doctest::Approx(30000 * interpolate_capacity(p.sram_access_pj, 256) / 1000));
    const double kb = (8192.0 + 16 * 256.0) / 1024;
    const double mw = 16 * p.leakage_pimcore_mw + p.leakage_gbcore_mw + kb * p.leakage_sram_mw_per_kb;
    CHECK(e.leakage == doctest::Approx(mw * 100000 / a.frequency_ghz / 1000));
    CHECK(e.total == doctest::Approx(e.bank_near + e.bank_via_bus + e.gbuf + e.lbuf + e.pimcores + e.gbcore + e.bus + e.leakage));
    CHECK(e.bus == doctest::Approx(double(s.bus_bytes) * p.bus_pj_per_byte / 1000));
  }

  TEST_CASE("dynamic energy is linear in event counts") {
    const ArchConfig a = default_arch();
    const EnergyReport one = estimate_energy(sample_stats(), a);
    for (std::int64_t k : {2, 3, 10}) {
      const EnergyReport many = estimate_energy(scaled(sample_stats(), k), a);
      CHECK(many.dynamic() == doctest::Approx(double(k) * one.dynamic()));
      CHECK(many.leakage == doctest::Approx(one.leakage));
    }
  }

  TEST_CASE("near-bank access costs 0.40 of a full DRAM access") {
    ArchConfig a = default_arch();
    SimStats s;
    s.near_bank_bytes = 123456;
    const double near = estimate_energy(s, a).bank_near;
    a.energy.near_bank_access_fraction = 1.0;
    const double full = estimate_energy(s, a).bank_near;
    CHECK(full / near == doctest::Approx(2.5));
  }

  TEST_CASE("stats from another arch are rejected") {
    SimStats s = sample_stats();
    s.arch_digest = arch_digest(named_config("G4K_L0", default_arch()));
    CHECK_THROWS_AS(estimate_energy(s, default_arch()), Error);
    CHECK_NOTHROW(estimate_energy(s, named_config("G4K_L0", default_arch())));
  }

  TEST_CASE("area grows with buffer capacity") {
    const ArchConfig base = default_arch();
    double prev = 0.0;
    for (const char* label : {"G2K_L0", "G4K_L0", "G8K_L0", "G16K_L0", "G32K_L0", "G64K_L0"}) {
      const double a = estimate_area(named_config(label, base)).total;
      CHECK(a > prev);
      prev = a;
    }
    prev = 0.0;
    for (const char* label : {"G2K_L0", "G2K_L64", "G2K_L128", "G2K_L256", "G2K_L512", "G2K_L100K"}) {
      const double a = estimate_area(named_config(label, base)).total;
      CHECK(a > prev);
      prev = a;
    }
    CHECK(sram_area_mm2(base, 512) < 2 * sram_area_mm2(base, 64));
    CHECK(sram_area_mm2(base, 512) > sram_area_mm2(base, 64));
  }

  TEST_CASE("fused PIMcores cost more area than AiM-like ones, fewer of them cost less") {
    const CnnGraph g = build_resnet18();
    const ArchConfig arch = named_config("G32K_L256", default_arch());
    const double aim = estimate_area(configure_system(System::AimLike, g, arch).arch).total;
    const double f16 = estimate_area(configure_system(System::Fused16, g, arch).arch).total;
    const double f4 = estimate_area(configure_system(System::Fused4, g, arch).arch).total;
    CHECK(f16 > aim);
    CHECK(f4 < f16);
    const AreaReport r = estimate_area(arch);
    CHECK(r.total == doctest::Approx(r.pimcores + r.gbcore + r.gbuf + r.lbufs + r.bus));
    CHECK(r.lbufs == doctest::Approx(16 * sram_area_mm2(arch, 256)));
  }

  TEST_CASE("normalization") {
    const PpaTriple n = normalize({50, 30, 2}, {100, 60, 4});
    CHECK(n.cycles == doctest::Approx(0.5));
    CHECK(n.energy == doctest::Approx(0.5));
    CHECK(n.area == doctest::Approx(0.5));
    CHECK_THROWS_AS(normalize({1, 1, 1}, {0, 1, 1}), Error);
  }

  TEST_CASE("reports serialize with units") {
    const std::string e = energy_to_json(estimate_energy(sample_stats(), default_arch()));
    CHECK(e.find("\"unit\": \"nJ\"") != std::string::npos);
    CHECK(e.find("\"total\"") != std::string::npos);
    const std::string a = area_to_json(estimate_area(default_arch()));
    CHECK(a.find("\"unit\": \"mm2\"") != std::string::npos);
  }
}
