#pragma once

#include <string>

#include "pimfused/arch.hpp"
#include "pimfused/simcore.hpp"

namespace pimfused {

// All energies in nJ.
struct EnergyReport {
  double bank_near = 0.0;
  double bank_via_bus = 0.0;
  double gbuf = 0.0;
  double lbuf = 0.0;
  double pimcores = 0.0;
  double gbcore = 0.0;
  double bus = 0.0;
  double leakage = 0.0;
  double total = 0.0;

  double dynamic() const { return total - leakage; }
};

// All areas in mm^2.
struct AreaReport {
  double pimcores = 0.0;
  double gbcore = 0.0;
  double gbuf = 0.0;
  double lbufs = 0.0;
  double bus = 0.0;
  double total = 0.0;
};

// Throws Error when the stats were produced under a different arch.
EnergyReport estimate_energy(const SimStats& stats, const ArchConfig& arch);
AreaReport estimate_area(const ArchConfig& arch);
double sram_area_mm2(const ArchConfig& arch, double capacity_bytes);

struct PpaTriple {
  double cycles = 0.0;
  double energy = 0.0;
  double area = 0.0;
};

// Component-wise ratio to the baseline. Throws Error on a zero baseline component.
PpaTriple normalize(const PpaTriple& value, const PpaTriple& baseline);

std::string energy_to_json(const EnergyReport& e);
std::string area_to_json(const AreaReport& a);

}  // namespace pimfused
