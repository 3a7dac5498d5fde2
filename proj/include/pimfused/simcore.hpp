#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pimfused/arch.hpp"
#include "pimfused/dataflow.hpp"
#include "pimfused/trace.hpp"

namespace pimfused {

struct BankState {
  int open_row = kNone;
  std::int64_t next_ready_cycle = 0;
  std::int64_t last_activate_cycle = 0;
  std::int64_t write_done_cycle = 0;
  std::int64_t activates = 0;
  std::int64_t precharges = 0;
  std::int64_t reads = 0;   // bursts
  std::int64_t writes = 0;  // bursts
  std::int64_t near_bank_accesses = 0;  // bursts moved to/from the LBUF/PIMcore
};

struct SimStats {
  std::int64_t total_cycles = 0;
  std::array<std::int64_t, kNumOpcodes> opcode_cycles{};  // summed command occupancy
  std::array<std::int64_t, kNumOpcodes> opcode_counts{};

  std::int64_t near_bank_bytes = 0;  // bank <-> LBUF/PIMcore, all banks summed
  std::int64_t via_bus_bytes = 0;    // bank <-> GBUF and conventional RD/WR
  std::int64_t gbuf_reads = 0;       // bytes
  std::int64_t gbuf_writes = 0;
  std::int64_t lbuf_reads = 0;       // bytes, all LBUFs summed
  std::int64_t lbuf_writes = 0;
  std::int64_t mac_ops = 0;          // all PIMcores summed
  std::int64_t gbcore_ops = 0;
  std::int64_t bus_bytes = 0;
  std::int64_t activates = 0;
  std::vector<double> pimcore_utilization;

  std::string arch_digest;

  bool operator==(const SimStats&) const = default;
};

// Runs the trace in order with resource and window dependencies. Throws Error for commands that are
// illegal in the current bank state.
SimStats simulate(const CommandTrace& t, const ArchConfig& arch);

std::int64_t analytic_lower_bound(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch);
std::int64_t analytic_lower_bound(const DataflowMetrics& m, const ArchConfig& arch);

std::string stats_to_json(const SimStats& s);
SimStats stats_from_json(const std::string& text);

}  // namespace pimfused
