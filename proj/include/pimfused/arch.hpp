#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pimfused/workload.hpp"

namespace pimfused {

// All values in memory-clock cycles.
struct TimingParams {
  int tRCD = 18;
  int tRP = 18;
  int tCL = 20;
  int tCCD = 2;
  int tRAS = 42;
  int tWR = 16;
  int bus_transfer_cycles_per_burst = 8;
  int pim_cmd_issue_cycles = 1;

  bool operator==(const TimingParams&) const = default;
};

// (capacity in bytes, value) breakpoints, interpolated log-linearly in capacity.
using CapacityTable = std::vector<std::pair<double, double>>;

double interpolate_capacity(const CapacityTable& table, double capacity_bytes);

struct EnergyParams {
  double dram_io_access_pj_per_byte = 0.0;
  double near_bank_access_fraction = 0.40;
  CapacityTable sram_access_pj;  // pJ per byte accessed
  double mac_op_pj = 0.0;
  double gbcore_op_pj = 0.0;
  double bus_pj_per_byte = 0.0;
  // Static power in mW.
  double leakage_pimcore_mw = 0.0;
  double leakage_gbcore_mw = 0.0;
  double leakage_sram_mw_per_kb = 0.0;

  bool operator==(const EnergyParams&) const = default;
};

struct AreaParams {
  double pimcore_aim_mm2 = 0.0;    // MAC/BN/RELU
  double pimcore_fused_mm2 = 0.0;  // adds residual-add and pooling
  double gbcore_mm2 = 0.0;
  CapacityTable sram_mm2;
  double bus_mm2 = 0.0;

  bool operator==(const AreaParams&) const = default;
};

enum class PimcoreFunctions { AimLike, Fused };

struct ArchConfig {
  int num_banks = 16;
  int banks_per_pimcore = 1;
  std::int64_t gbuf_bytes = 2048;
  std::int64_t lbuf_bytes = 0;
  int macs_per_pimcore_per_cycle = 256;
  int gbcore_ops_per_cycle = 16;
  int burst_bytes = 32;
  int row_bytes = 2048;
  double frequency_ghz = 1.0;
  PimcoreFunctions pimcore_functions = PimcoreFunctions::AimLike;
  std::int64_t max_trace_commands = 50'000'000;
  TimingParams timing;
  EnergyParams energy;
  AreaParams area;

  int num_pimcores() const { return num_banks / banks_per_pimcore; }

  bool operator==(const ArchConfig&) const = default;
};

// Baseline (AiM-like, G2K_L0) with every ASSUMED coefficient populated.
ArchConfig default_arch();

// Throws Error naming the offending field.
void validate(const ArchConfig& arch);

// TOML; every field optional, missing ones keep the values in `base`.
ArchConfig config_from_toml(const std::string& text, const ArchConfig& base = default_arch());
ArchConfig load_config(const std::filesystem::path& path, const ArchConfig& base = default_arch());
std::string config_to_toml(const ArchConfig& arch);

// "G<m>K_L<n>[K]" -> gbuf = m KiB, lbuf = n bytes (n KiB with the K suffix).
ArchConfig named_config(const std::string& label, const ArchConfig& base);

struct BufferLabel {
  std::int64_t gbuf_bytes = 0;
  std::int64_t lbuf_bytes = 0;
};
BufferLabel parse_buffer_label(const std::string& label);

// Multiplies every timing parameter (except the issue cost) by factor, rounding, min 1.
ArchConfig scale_timing(const ArchConfig& arch, double factor);

// Stable hex digest of every field that shapes traces and cycles (energy and area excluded).
std::string arch_digest(const ArchConfig& arch);

std::string sha256_hex(const std::string& data);

}  // namespace pimfused
