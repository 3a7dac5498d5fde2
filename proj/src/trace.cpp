#include "pimfused/trace.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <tuple>

namespace pimfused {

namespace {

constexpr const char* kOpcodeNames[kNumOpcodes] = {
    "ACT", "PRE", "RD", "WR", "PIMCORE_CMP", "GBCORE_CMP", "PIM_BK2LBUF", "PIM_LBUF2BK", "PIM_BK2GBUF", "PIM_GBUF2BK",
};

constexpr LayerKind kAllKinds[] = {LayerKind::ConvBn, LayerKind::ConvBnRelu, LayerKind::Pool, LayerKind::AddRelu};

bool parse_int(const std::string& s, std::int64_t& v) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace

const char* to_string(Opcode op) { return kOpcodeNames[int(op)]; }

Opcode opcode_from_string(const std::string& s) {
  for (int i = 0; i < kNumOpcodes; ++i) {
    if (s == kOpcodeNames[i]) return Opcode(i);
  }
  throw Error("unknown opcode '" + s + "'");
}

bool is_compute(Opcode op) { return op == Opcode::PIMCORE_CMP || op == Opcode::GBCORE_CMP; }
bool is_gbuf_transfer(Opcode op) { return op == Opcode::PIM_BK2GBUF || op == Opcode::PIM_GBUF2BK; }
bool is_lbuf_transfer(Opcode op) { return op == Opcode::PIM_BK2LBUF || op == Opcode::PIM_LBUF2BK; }

std::vector<LayerKind> flag_list(FlagSet f) {
  std::vector<LayerKind> out;
  for (LayerKind k : kAllKinds) {
    if (f & flag_bit(k)) out.push_back(k);
  }
  return out;
}

std::string make_tag(int layer, const std::string& role, const std::string& tensor, int window) {
  return "L" + std::to_string(layer) + ":" + role + ":" + tensor + ":" + std::to_string(window);
}

TagInfo parse_tag(const std::string& tag) {
  TagInfo info;
  if (tag.size() < 2 || tag[0] != 'L') return info;
  std::vector<std::string> parts;
  std::stringstream ss(tag.substr(1));
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  std::int64_t layer = 0, window = 0;
  if (parts.size() != 4 || !parse_int(parts[0], layer) || !parse_int(parts[3], window)) return info;
  info.valid = true;
  info.layer = int(layer);
  info.role = parts[1];
  info.tensor = parts[2];
  info.window = int(window);
  return info;
}

std::string plan_digest(const FusionPlan& plan) { return sha256_hex(plan_to_json(plan)); }

void serialize_trace(const CommandTrace& t, std::ostream& out) {
  out << "# workload=" << t.workload << '\n';
  out << "# arch=" << t.arch_digest << '\n';
  out << "# plan=" << t.plan_digest << '\n';
  std::string line;
  for (size_t i = 0; i < t.commands.size(); ++i) {
    const PimCommand& c = t.commands[i];
    line.clear();
    line += std::to_string(i);
    line += ' ';
    line += to_string(c.opcode);
    line += ' ';
    line += c.bank == kAllBanks ? "ALL" : std::to_string(c.bank);
    line += ' ';
    line += c.row == kNone ? "-" : std::to_string(c.row);
    line += ' ';
    line += c.col == kNone ? "-" : std::to_string(c.col);
    line += ' ';
    line += std::to_string(c.bursts);
    if (c.flags) {
      line += " flags=";
      bool first = true;
      for (LayerKind k : flag_list(c.flags)) {
        if (!first) line += ',';
        line += to_string(k);
        first = false;
      }
    }
    if (!c.tag.empty()) {
      line += " tag=";
      line += c.tag;
    }
    line += '\n';
    out << line;
  }
}

std::string trace_to_string(const CommandTrace& t) {
  std::ostringstream out;
  serialize_trace(t, out);
  return out.str();
}

CommandTrace parse_trace(std::istream& in) {
  CommandTrace t;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw Error("trace line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      std::string value = line.substr(eq + 1);
      if (key == "workload") t.workload = value;
      else if (key == "arch") t.arch_digest = value;
      else if (key == "plan") t.plan_digest = value;
      continue;
    }
    std::istringstream fields(line);
    std::vector<std::string> f;
    std::string tok;
    while (fields >> tok) f.push_back(tok);
    if (f.size() < 6) fail("expected at least 6 fields");
    std::int64_t seq = 0, v = 0;
    if (!parse_int(f[0], seq)) fail("bad sequence number '" + f[0] + "'");
    if (seq != std::int64_t(t.commands.size())) fail("sequence number " + f[0] + " out of order");
    PimCommand c;
    try {
      c.opcode = opcode_from_string(f[1]);
    } catch (const Error& e) {
      fail(e.what());
    }
    if (f[2] == "ALL") c.bank = kAllBanks;
    else if (parse_int(f[2], v) && v >= 0) c.bank = int(v);
    else fail("bad bank '" + f[2] + "'");
    if (f[3] == "-") c.row = kNone;
    else if (parse_int(f[3], v) && v >= 0) c.row = int(v);
    else fail("bad row '" + f[3] + "'");
    if (f[4] == "-") c.col = kNone;
    else if (parse_int(f[4], v) && v >= 0) c.col = int(v);
    else fail("bad col '" + f[4] + "'");
    if (!parse_int(f[5], c.bursts) || c.bursts < 0) fail("bad bursts '" + f[5] + "'");
    for (size_t i = 6; i < f.size(); ++i) {
      if (f[i].rfind("flags=", 0) == 0) {
        std::stringstream ss(f[i].substr(6));
        std::string name;
        while (std::getline(ss, name, ',')) {
          try {
            c.flags |= flag_bit(layer_kind_from_string(name));
          } catch (const Error&) {
            fail("unknown flag '" + name + "'");
          }
        }
      } else if (f[i].rfind("tag=", 0) == 0) {
        c.tag = f[i].substr(4);
      } else {
        fail("unexpected field '" + f[i] + "'");
      }
    }
    t.commands.push_back(std::move(c));
  }
  return t;
}

CommandTrace parse_trace_string(const std::string& text) {
  std::istringstream in(text);
  return parse_trace(in);
}

void save_trace(const CommandTrace& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write trace file " + path);
  serialize_trace(t, out);
  if (!out) throw Error("failed writing trace file " + path);
}

CommandTrace load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open trace file " + path);
  return parse_trace(in);
}

std::vector<std::string> check_digests(const CommandTrace& t, const ArchConfig& arch, const FusionPlan& plan) {
  std::vector<std::string> warnings;
  if (t.arch_digest != arch_digest(arch)) warnings.push_back("trace arch digest does not match the configuration");
  if (t.plan_digest != plan_digest(plan)) warnings.push_back("trace plan digest does not match the plan");
  return warnings;
}

std::int64_t TraceStats::total_commands() const {
  std::int64_t n = 0;
  for (const auto& s : by_opcode) n += s.count;
  return n;
}

TraceStats trace_stats(const CommandTrace& t, int burst_bytes) {
  TraceStats s;
  for (const PimCommand& c : t.commands) {
    OpcodeStats& o = s.by_opcode[int(c.opcode)];
    ++o.count;
    if (!is_compute(c.opcode) && c.opcode != Opcode::ACT && c.opcode != Opcode::PRE) o.bytes += c.bursts * burst_bytes;
  }
  return s;
}

namespace {

class Emitter {
 public:
  Emitter(const CnnGraph& g, const ArchConfig& arch, CommandTrace& t)
      : g_(g), arch_(arch), t_(t), open_(arch.num_banks, kNone) {}

  void emit(const ExecutionPlan& ep) {
    const int depth = arch_.lbuf_bytes > 0 ? 2 : 1;
    size_t i = 0;
    while (i < ep.steps.size()) {
      size_t j = i;
      while (j < ep.steps.size() && ep.steps[j].layer == ep.steps[i].layer &&
             ep.steps[j].reorg_segment == ep.steps[i].reorg_segment) {
        ++j;
      }
      emit_segment(ep.steps, i, j, depth);
      i = j;
    }
  }

 private:
  static bool is_load(const Step& s) {
    return (s.op == StepOp::BankToGbuf || s.op == StepOp::BankToLbuf) && s.role != StepRole::Spill;
  }

  void emit_segment(const std::vector<Step>& steps, size_t begin, size_t end, int depth) {
    std::map<int, std::vector<const Step*>> loads, rest;
    for (size_t i = begin; i < end; ++i) {
      (is_load(steps[i]) ? loads : rest)[steps[i].window].push_back(&steps[i]);
    }
    std::vector<int> windows;
    for (size_t i = begin; i < end; ++i) {
      if (windows.empty() || windows.back() != steps[i].window) {
        if (std::find(windows.begin(), windows.end(), steps[i].window) == windows.end()) {
          windows.push_back(steps[i].window);
        }
      }
    }
    auto emit_all = [&](std::map<int, std::vector<const Step*>>& m, int w) {
      auto it = m.find(w);
      if (it == m.end()) return;
      for (const Step* s : it->second) emit_step(*s);
    };
    if (depth <= 1) {
      for (int w : windows) {
        emit_all(loads, w);
        emit_all(rest, w);
      }
      return;
    }
    if (!windows.empty()) emit_all(loads, windows.front());
    for (size_t k = 0; k < windows.size(); ++k) {
      if (k + 1 < windows.size()) emit_all(loads, windows[k + 1]);
      emit_all(rest, windows[k]);
    }
  }

  std::string tensor_name(const Step& s) const {
    if (s.op == StepOp::PimCompute || s.op == StepOp::GbCompute) return "-";
    if (s.weights) return "W" + std::to_string(s.tensor);
    return s.tensor == kNetworkInput ? "Tin" : "T" + std::to_string(s.tensor);
  }

  struct Region {
    std::int64_t base = 0;
    std::int64_t size = 0;
  };

  const Region& region_for(const Step& s, const std::string& name) {
    auto it = regions_.find(name);
    if (it != regions_.end()) return it->second;
    std::int64_t full;
    if (s.weights) {
      full = g_.layer(s.tensor).weight_bytes();
    } else if (s.tensor == kNetworkInput) {
      full = std::int64_t(g_.input.c) * g_.input.h * g_.input.w * g_.bytes_per_element;
    } else {
      full = g_.layer(s.tensor).output_bytes();
    }
    const std::int64_t row = arch_.row_bytes;
    std::int64_t per_bank = (full * (s.weights ? 1 : 2) + arch_.num_banks - 1) / arch_.num_banks;
    Region r;
    r.base = next_free_;
    r.size = std::max<std::int64_t>(row, (per_bank + row - 1) / row * row);
    next_free_ += r.size;
    return regions_.emplace(name, r).first->second;
  }

  void push(PimCommand c) {
    if (std::int64_t(t_.commands.size()) >= arch_.max_trace_commands) {
      throw Error("trace exceeds the command cap of " + std::to_string(arch_.max_trace_commands) + " commands");
    }
    t_.commands.push_back(std::move(c));
  }

  void open_row(int bank, int row, const std::string& tag) {
    if (bank == kAllBanks) {
      int stale = int(std::count_if(open_.begin(), open_.end(), [&](int r) { return r != row; }));
      if (stale == 0) return;
      if (stale < arch_.num_banks) {
        for (int b = 0; b < arch_.num_banks; ++b) open_row(b, row, tag);
        return;
      }
      bool any_open = std::any_of(open_.begin(), open_.end(), [](int r) { return r != kNone; });
      if (any_open) push(PimCommand{Opcode::PRE, kAllBanks, kNone, kNone, 0, 0, tag});
      push(PimCommand{Opcode::ACT, kAllBanks, row, kNone, 0, 0, tag});
      std::fill(open_.begin(), open_.end(), row);
      return;
    }
    if (open_[bank] == row) return;
    if (open_[bank] != kNone) push(PimCommand{Opcode::PRE, bank, kNone, kNone, 0, 0, tag});
    push(PimCommand{Opcode::ACT, bank, row, kNone, 0, 0, tag});
    open_[bank] = row;
  }

  void emit_step(const Step& s) {
    const std::string name = tensor_name(s);
    const std::string tag = make_tag(s.layer, s.reorg_segment ? "reorg" : to_string(s.role), name, s.window);
    if (s.op == StepOp::PimCompute || s.op == StepOp::GbCompute) {
      FlagSet flags = 0;
      for (LayerKind k : s.flags) flags |= flag_bit(k);
      Opcode op = s.op == StepOp::PimCompute ? Opcode::PIMCORE_CMP : Opcode::GBCORE_CMP;
      push(PimCommand{op, kAllBanks, kNone, kNone, s.ops, flags, tag});
      return;
    }
    Opcode op = Opcode::PIM_BK2GBUF;
    bool write = false;
    switch (s.op) {
      case StepOp::BankToGbuf: op = Opcode::PIM_BK2GBUF; break;
      case StepOp::GbufToBank: op = Opcode::PIM_GBUF2BK; write = true; break;
      case StepOp::BankToLbuf: op = Opcode::PIM_BK2LBUF; break;
      case StepOp::LbufToBank: op = Opcode::PIM_LBUF2BK; write = true; break;
      default: break;
    }
    const Region& region = region_for(s, name);
    const std::int64_t burst = arch_.burst_bytes, row_bytes = arch_.row_bytes;
    std::int64_t& cursor = cursors_[{name, write, s.bank}];
    const std::int64_t start = cursor;
    std::int64_t pos = start;
    for (std::int64_t rep = 0; rep < s.repeat; ++rep) {
      pos = start;
      std::int64_t left = s.bytes;
      while (left > 0) {
        if (pos >= region.size) pos = 0;
        std::int64_t addr = region.base + pos;
        std::int64_t in_row = row_bytes - addr % row_bytes;
        std::int64_t n = std::min({left, s.granule, in_row});
        std::int64_t bursts = (n + burst - 1) / burst;
        int row = int(addr / row_bytes);
        open_row(s.bank, row, tag);
        push(PimCommand{op, s.bank, row, int((addr % row_bytes) / burst), bursts, 0, tag});
        pos += bursts * burst;
        left -= n;
      }
    }
    cursor = pos >= region.size ? 0 : pos;
  }

  const CnnGraph& g_;
  const ArchConfig& arch_;
  CommandTrace& t_;
  std::vector<int> open_;
  std::map<std::string, Region> regions_;
  std::map<std::tuple<std::string, bool, int>, std::int64_t> cursors_;
  std::int64_t next_free_ = 0;
};

}  // namespace

CommandTrace lower_execution(const ExecutionPlan& ep, const CnnGraph& g, const FusionPlan& plan,
                             const ArchConfig& arch) {
  CommandTrace t;
  t.workload = g.name;
  t.arch_digest = arch_digest(arch);
  t.plan_digest = plan_digest(plan);
  Emitter(g, arch, t).emit(ep);
  return t;
}

CommandTrace emit_trace(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch) {
  return lower_execution(build_execution(g, plan, arch), g, plan, arch);
}

}  // namespace pimfused
