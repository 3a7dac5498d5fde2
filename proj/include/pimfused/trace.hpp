#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "pimfused/arch.hpp"
#include "pimfused/dataflow.hpp"
#include "pimfused/workload.hpp"

namespace pimfused {

enum class Opcode {
  ACT,
  PRE,
  RD,
  WR,
  PIMCORE_CMP,
  GBCORE_CMP,
  PIM_BK2LBUF,
  PIM_LBUF2BK,
  PIM_BK2GBUF,
  PIM_GBUF2BK,
};
inline constexpr int kNumOpcodes = 10;

const char* to_string(Opcode op);
Opcode opcode_from_string(const std::string& s);  // throws Error
bool is_compute(Opcode op);
bool is_gbuf_transfer(Opcode op);
bool is_lbuf_transfer(Opcode op);

inline constexpr int kAllBanks = -1;
inline constexpr int kNone = -1;

// Bit set over LayerKind.
using FlagSet = std::uint8_t;
inline FlagSet flag_bit(LayerKind k) { return FlagSet(1u << int(k)); }
std::vector<LayerKind> flag_list(FlagSet f);

struct PimCommand {
  Opcode opcode = Opcode::PIMCORE_CMP;
  int bank = kAllBanks;
  int row = kNone;
  int col = kNone;
  // Burst count for data commands; per-PIMcore operation count for PIMCORE_CMP, total for GBCORE_CMP.
  std::int64_t bursts = 0;
  FlagSet flags = 0;
  std::string tag;

  bool operator==(const PimCommand&) const = default;
};

struct CommandTrace {
  std::string workload;
  std::string arch_digest;
  std::string plan_digest;
  std::vector<PimCommand> commands;

  bool operator==(const CommandTrace&) const = default;
};

// Structured view of the tags written by emit_trace: "L<layer>:<role>:<tensor>:<window>".
struct TagInfo {
  bool valid = false;
  int layer = 0;
  std::string role;
  std::string tensor;
  int window = 0;
};
TagInfo parse_tag(const std::string& tag);
std::string make_tag(int layer, const std::string& role, const std::string& tensor, int window);

std::string plan_digest(const FusionPlan& plan);

CommandTrace emit_trace(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch);
// Lowers an already built execution plan.
CommandTrace lower_execution(const ExecutionPlan& ep, const CnnGraph& g, const FusionPlan& plan,
                             const ArchConfig& arch);

void serialize_trace(const CommandTrace& t, std::ostream& out);
std::string trace_to_string(const CommandTrace& t);
CommandTrace parse_trace(std::istream& in);
CommandTrace parse_trace_string(const std::string& text);
void save_trace(const CommandTrace& t, const std::string& path);
CommandTrace load_trace(const std::string& path);

// Warnings for header digests that differ from the given inputs.
std::vector<std::string> check_digests(const CommandTrace& t, const ArchConfig& arch, const FusionPlan& plan);

struct OpcodeStats {
  std::int64_t count = 0;
  std::int64_t bytes = 0;  // bursts * burst_bytes for data opcodes, 0 for compute and ACT/PRE
};

struct TraceStats {
  std::array<OpcodeStats, kNumOpcodes> by_opcode{};

  const OpcodeStats& operator[](Opcode op) const { return by_opcode[int(op)]; }
  std::int64_t gbuf_bytes() const {
    return (*this)[Opcode::PIM_BK2GBUF].bytes + (*this)[Opcode::PIM_GBUF2BK].bytes;
  }
  std::int64_t total_commands() const;
};

TraceStats trace_stats(const CommandTrace& t, int burst_bytes);

}  // namespace pimfused
