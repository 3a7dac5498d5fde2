#include "pimfused/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"

namespace pimfused {

namespace {

enum class Phase { Load, Compute, Store, Prep };

Phase phase_of(Opcode op) {
  switch (op) {
    case Opcode::RD:
    case Opcode::PIM_BK2GBUF:
    case Opcode::PIM_BK2LBUF:
      return Phase::Load;
    case Opcode::WR:
    case Opcode::PIM_GBUF2BK:
    case Opcode::PIM_LBUF2BK:
      return Phase::Store;
    case Opcode::PIMCORE_CMP:
    case Opcode::GBCORE_CMP:
      return Phase::Compute;
    default:
      return Phase::Prep;
  }
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

struct WindowState {
  std::int64_t loads_done = 0;
  std::int64_t cmp_done = 0;
  bool has_cmp = false;
  std::int64_t done = 0;
};

class Simulator {
 public:
  explicit Simulator(const ArchConfig& arch) : arch_(arch), banks_(arch.num_banks) {
    depth_ = arch.lbuf_bytes > 0 ? 2 : 1;
  }

  SimStats run(const CommandTrace& t) {
    for (size_t i = 0; i < t.commands.size(); ++i) step(t.commands[i], i);
    stats_.total_cycles = end_;
    stats_.arch_digest = arch_digest(arch_);
    for (const BankState& b : banks_) stats_.activates += b.activates;
    double util = end_ > 0 ? double(pim_busy_) / double(end_) : 0.0;
    stats_.pimcore_utilization.assign(arch_.num_pimcores(), util);
    return stats_;
  }

 private:
  [[noreturn]] void fail(size_t seq, const std::string& why) const {
    throw Error("command " + std::to_string(seq) + ": " + why);
  }

  std::vector<int> banks_of(const PimCommand& c, size_t seq) const {
    if (c.bank == kAllBanks) {
      std::vector<int> all(arch_.num_banks);
      for (int b = 0; b < arch_.num_banks; ++b) all[b] = b;
      return all;
    }
    if (c.bank < 0 || c.bank >= arch_.num_banks) fail(seq, "bank " + std::to_string(c.bank) + " out of range");
    return {c.bank};
  }

  std::int64_t dependency_ready(const PimCommand& c, const TagInfo& tag, Phase ph, size_t seq) {
    if (!tag.valid) {
      // Opaque commands run strictly one after another.
      return end_;
    }
    std::string seg = std::to_string(tag.layer) + (tag.role == "reorg" ? "r" : "");
    if (seg != segment_) {
      segment_ = seg;
      barrier_ = end_;
      windows_.clear();
    }
    std::int64_t ready = barrier_;
    WindowState& w = windows_[tag.window];
    if (ph == Phase::Load || ph == Phase::Prep) {
      // Spilled data written by the previous window must land before it is read back.
      auto it = windows_.find(tag.window - (tag.role == "spill" ? 1 : depth_));
      if (it != windows_.end()) ready = std::max(ready, it->second.done);
    } else if (ph == Phase::Compute) {
      ready = std::max(ready, w.loads_done);
    } else {
      ready = std::max(ready, w.has_cmp ? w.cmp_done : w.loads_done);
    }
    if (ph == Phase::Load && !tag.tensor.empty() && tag.tensor[0] == 'T' && tag.tensor != "Tin" &&
        !written_.count(tag.tensor)) {
      fail(seq, "reads tensor " + tag.tensor + " before any command produced it");
    }
    if (ph == Phase::Store && (c.opcode == Opcode::PIM_GBUF2BK || c.opcode == Opcode::PIM_LBUF2BK ||
                               c.opcode == Opcode::WR)) {
      written_.insert(tag.tensor);
    }
    return ready;
  }

  void retire(const TagInfo& tag, Phase ph, std::int64_t end) {
    end_ = std::max(end_, end);
    if (!tag.valid) return;
    WindowState& w = windows_[tag.window];
    if (ph == Phase::Load) w.loads_done = std::max(w.loads_done, end);
    if (ph == Phase::Compute) {
      w.cmp_done = std::max(w.cmp_done, end);
      w.has_cmp = true;
    }
    w.done = std::max(w.done, end);
  }

  void require_open(const PimCommand& c, const std::vector<int>& banks, size_t seq) const {
    for (int b : banks) {
      if (banks_[b].open_row == kNone || banks_[b].open_row != c.row) {
        fail(seq, std::string(to_string(c.opcode)) + " on bank " + std::to_string(b) + " row " +
                      std::to_string(c.row) + " which is not open");
      }
    }
  }

  void step(const PimCommand& c, size_t seq) {
    const TimingParams& tm = arch_.timing;
    const TagInfo tag = parse_tag(c.tag);
    const Phase ph = phase_of(c.opcode);
    std::int64_t start = dependency_ready(c, tag, ph, seq);
    // dur: resource occupancy; latency: extra cycles until the data is usable (pipelined column access).
    std::int64_t dur = 0, latency = 0;
    const std::int64_t bytes = c.bursts * arch_.burst_bytes;
    std::vector<int> banks;
    if (!is_compute(c.opcode)) banks = banks_of(c, seq);
    for (int b : banks) start = std::max(start, banks_[b].next_ready_cycle);

    switch (c.opcode) {
      case Opcode::ACT:
        for (int b : banks) {
          if (banks_[b].open_row != kNone) fail(seq, "ACT on bank " + std::to_string(b) + " with an open row");
        }
        dur = tm.tRCD;
        for (int b : banks) {
          banks_[b].open_row = c.row;
          banks_[b].last_activate_cycle = start;
          ++banks_[b].activates;
        }
        break;
      case Opcode::PRE:
        for (int b : banks) {
          start = std::max({start, banks_[b].last_activate_cycle + tm.tRAS, banks_[b].write_done_cycle + tm.tWR});
        }
        dur = tm.tRP;
        for (int b : banks) {
          banks_[b].open_row = kNone;
          ++banks_[b].precharges;
        }
        break;
      case Opcode::RD:
      case Opcode::WR:
        require_open(c, banks, seq);
        dur = c.bursts * tm.tCCD;
        latency = tm.tCL;
        for (int b : banks) (c.opcode == Opcode::RD ? banks_[b].reads : banks_[b].writes) += c.bursts;
        stats_.via_bus_bytes += bytes * std::int64_t(banks.size());
        stats_.bus_bytes += bytes * std::int64_t(banks.size());
        break;
      case Opcode::PIM_BK2GBUF:
      case Opcode::PIM_GBUF2BK:
        if (c.bank == kAllBanks) fail(seq, std::string(to_string(c.opcode)) + " needs a single bank");
        require_open(c, banks, seq);
        start = std::max(start, bus_ready_);
        dur = tm.tCL + c.bursts * tm.bus_transfer_cycles_per_burst + tm.pim_cmd_issue_cycles;
        if (c.opcode == Opcode::PIM_BK2GBUF) {
          banks_[c.bank].reads += c.bursts;
          stats_.gbuf_writes += bytes;
        } else {
          banks_[c.bank].writes += c.bursts;
          stats_.gbuf_reads += bytes;
        }
        stats_.via_bus_bytes += bytes;
        stats_.bus_bytes += bytes;
        break;
      case Opcode::PIM_BK2LBUF:
      case Opcode::PIM_LBUF2BK:
        if (c.bank != kAllBanks) fail(seq, std::string(to_string(c.opcode)) + " must address all banks");
        require_open(c, banks, seq);
        dur = c.bursts * tm.tCCD + tm.pim_cmd_issue_cycles;
        latency = tm.tCL;
        for (int b : banks) {
          (c.opcode == Opcode::PIM_BK2LBUF ? banks_[b].reads : banks_[b].writes) += c.bursts;
          banks_[b].near_bank_accesses += c.bursts;
        }
        stats_.near_bank_bytes += bytes * arch_.num_banks;
        if (c.opcode == Opcode::PIM_BK2LBUF) {
          stats_.lbuf_writes += bytes * arch_.num_banks;
        } else {
          stats_.lbuf_reads += bytes * arch_.num_banks;
        }
        break;
      case Opcode::PIMCORE_CMP:
        start = std::max(start, pim_ready_);
        dur = ceil_div(c.bursts, arch_.macs_per_pimcore_per_cycle) + tm.pim_cmd_issue_cycles;
        stats_.mac_ops += c.bursts * arch_.num_pimcores();
        if (arch_.lbuf_bytes > 0) {
          stats_.lbuf_reads += c.bursts * arch_.num_pimcores();
        } else {
          stats_.gbuf_reads += c.bursts;
        }
        break;
      case Opcode::GBCORE_CMP:
        start = std::max(start, gb_ready_);
        dur = ceil_div(c.bursts, arch_.gbcore_ops_per_cycle) + tm.pim_cmd_issue_cycles;
        stats_.gbcore_ops += c.bursts;
        stats_.gbuf_reads += c.bursts;
        break;
    }
    const std::int64_t end = start + dur;
    const std::int64_t done = end + latency;
    for (int b : banks) {
      banks_[b].next_ready_cycle = end;
      if (c.opcode == Opcode::WR || c.opcode == Opcode::PIM_GBUF2BK || c.opcode == Opcode::PIM_LBUF2BK) {
        banks_[b].write_done_cycle = done;
      }
    }
    if (is_gbuf_transfer(c.opcode)) bus_ready_ = end;
    if (c.opcode == Opcode::PIMCORE_CMP) {
      pim_ready_ = end;
      pim_busy_ += dur;
    }
    if (c.opcode == Opcode::GBCORE_CMP) gb_ready_ = end;
    stats_.opcode_cycles[int(c.opcode)] += dur;
    ++stats_.opcode_counts[int(c.opcode)];
    retire(tag, ph, done);
  }

  const ArchConfig& arch_;
  std::vector<BankState> banks_;
  int depth_ = 1;
  std::int64_t bus_ready_ = 0, pim_ready_ = 0, gb_ready_ = 0, pim_busy_ = 0;
  std::int64_t end_ = 0, barrier_ = 0;
  std::string segment_;
  std::map<int, WindowState> windows_;
  std::set<std::string> written_;
  SimStats stats_;
};

}  // namespace

SimStats simulate(const CommandTrace& t, const ArchConfig& arch) {
  validate(arch);
  return Simulator(arch).run(t);
}

std::int64_t analytic_lower_bound(const DataflowMetrics& m, const ArchConfig& arch) {
  const double compute = double(m.executed_macs) / (double(arch.num_pimcores()) * arch.macs_per_pimcore_per_cycle);
  const double bus = double(m.cross_bank_bytes) / arch.burst_bytes * arch.timing.bus_transfer_cycles_per_burst;
  const double bank = double(m.near_bank_bytes) / (double(arch.num_banks) * arch.burst_bytes) * arch.timing.tCCD;
  return std::int64_t(std::floor(std::max({compute, bus, bank})));
}

std::int64_t analytic_lower_bound(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch) {
  return analytic_lower_bound(analyze(g, plan, arch), arch);
}

std::string stats_to_json(const SimStats& s) {
  nlohmann::ordered_json j;
  j["total_cycles"] = s.total_cycles;
  nlohmann::ordered_json occ, counts;
  for (int i = 0; i < kNumOpcodes; ++i) {
    occ[to_string(Opcode(i))] = s.opcode_cycles[i];
    counts[to_string(Opcode(i))] = s.opcode_counts[i];
  }
  j["opcode_cycles"] = occ;
  j["opcode_counts"] = counts;
  j["near_bank_bytes"] = s.near_bank_bytes;
  j["via_bus_bytes"] = s.via_bus_bytes;
  j["gbuf_reads"] = s.gbuf_reads;
  j["gbuf_writes"] = s.gbuf_writes;
  j["lbuf_reads"] = s.lbuf_reads;
  j["lbuf_writes"] = s.lbuf_writes;
  j["mac_ops"] = s.mac_ops;
  j["gbcore_ops"] = s.gbcore_ops;
  j["bus_bytes"] = s.bus_bytes;
  j["activates"] = s.activates;
  j["pimcore_utilization"] = s.pimcore_utilization;
  j["arch_digest"] = s.arch_digest;
  return j.dump(2);
}

SimStats stats_from_json(const std::string& text) {
  SimStats s;
  try {
    auto j = nlohmann::json::parse(text);
    s.total_cycles = j.at("total_cycles").get<std::int64_t>();
    for (int i = 0; i < kNumOpcodes; ++i) {
      const char* name = to_string(Opcode(i));
      s.opcode_cycles[i] = j.at("opcode_cycles").value(name, std::int64_t(0));
      s.opcode_counts[i] = j.at("opcode_counts").value(name, std::int64_t(0));
    }
    s.near_bank_bytes = j.at("near_bank_bytes").get<std::int64_t>();
    s.via_bus_bytes = j.at("via_bus_bytes").get<std::int64_t>();
    s.gbuf_reads = j.at("gbuf_reads").get<std::int64_t>();
    s.gbuf_writes = j.at("gbuf_writes").get<std::int64_t>();
    s.lbuf_reads = j.at("lbuf_reads").get<std::int64_t>();
    s.lbuf_writes = j.at("lbuf_writes").get<std::int64_t>();
    s.mac_ops = j.at("mac_ops").get<std::int64_t>();
    s.gbcore_ops = j.at("gbcore_ops").get<std::int64_t>();
    s.bus_bytes = j.at("bus_bytes").get<std::int64_t>();
    s.activates = j.value("activates", std::int64_t(0));
    s.pimcore_utilization = j.value("pimcore_utilization", std::vector<double>{});
    s.arch_digest = j.value("arch_digest", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid stats JSON: ") + e.what());
  }
  return s;
}

}  // namespace pimfused
