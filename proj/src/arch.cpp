#include "pimfused/arch.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

namespace pimfused {

double interpolate_capacity(const CapacityTable& table, double capacity_bytes) {
  if (capacity_bytes <= 0 || table.empty()) return 0.0;
  if (capacity_bytes <= table.front().first) return table.front().second;
  if (capacity_bytes >= table.back().first) {
    // Past the last anchor the array is tiled: cost grows linearly with capacity.
    return table.back().second * capacity_bytes / table.back().first;
  }
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto [c1, v1] = table[i];
    if (capacity_bytes <= c1) {
      const auto [c0, v0] = table[i - 1];
      const double t = std::log(capacity_bytes / c0) / std::log(c1 / c0);
      return v0 + t * (v1 - v0);
    }
  }
  return table.back().second;
}

ArchConfig default_arch() {
  ArchConfig a;
  // ASSUMED: GDDR5-derived access energy scaled to GDDR6; MAC energy for BF16 logic in a DRAM process;
  // SRAM anchors shaped after 22nm CACTI runs.
  a.energy.dram_io_access_pj_per_byte = 8.0;
  a.energy.near_bank_access_fraction = 0.40;
  a.energy.sram_access_pj = {{64, 0.08}, {256, 0.10}, {1024, 0.14}, {8192, 0.30}, {65536, 0.80}};
  a.energy.mac_op_pj = 7.0;
  a.energy.gbcore_op_pj = 1.0;
  a.energy.bus_pj_per_byte = 2.0;
  a.energy.leakage_pimcore_mw = 0.5;
  a.energy.leakage_gbcore_mw = 0.5;
  a.energy.leakage_sram_mw_per_kb = 0.05;

  a.area.pimcore_aim_mm2 = 0.0557;
  a.area.pimcore_fused_mm2 = 0.0845;
  a.area.gbcore_mm2 = 0.030;
  a.area.sram_mm2 = {{64, 0.028}, {256, 0.0335}, {1024, 0.045}, {8192, 0.11}, {65536, 0.36}};
  a.area.bus_mm2 = 0.018;
  return a;
}

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw Error("invalid config field '" + field + "': " + what);
}

void check_table(const CapacityTable& t, const std::string& field) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    require(t[i].first > 0 && t[i].second >= 0, field, "entries must have positive capacity and non-negative value");
    if (i > 0) {
      require(t[i].first > t[i - 1].first, field, "capacities must be strictly increasing");
      require(t[i].second >= t[i - 1].second, field, "values must be non-decreasing in capacity");
    }
  }
}

}  // namespace

void validate(const ArchConfig& a) {
  require(a.num_banks > 0, "num_banks", "must be positive");
  require(a.banks_per_pimcore > 0, "banks_per_pimcore", "must be positive");
  require(a.num_banks % a.banks_per_pimcore == 0, "banks_per_pimcore",
          "num_banks (" + std::to_string(a.num_banks) + ") is not divisible by " +
              std::to_string(a.banks_per_pimcore));
  require(a.gbuf_bytes > 0, "gbuf_bytes", "must be positive");
  require(a.lbuf_bytes >= 0, "lbuf_bytes", "must be non-negative");
  require(a.macs_per_pimcore_per_cycle > 0, "macs_per_pimcore_per_cycle", "must be positive");
  require(a.gbcore_ops_per_cycle > 0, "gbcore_ops_per_cycle", "must be positive");
  require(a.burst_bytes > 0, "burst_bytes", "must be positive");
  require(a.row_bytes >= a.burst_bytes && a.row_bytes % a.burst_bytes == 0, "row_bytes",
          "must be a positive multiple of burst_bytes");
  require(a.frequency_ghz > 0, "frequency_ghz", "must be positive");
  require(a.max_trace_commands > 0, "max_trace_commands", "must be positive");

  const auto& t = a.timing;
  require(t.tRCD >= 1, "timing.tRCD", "must be >= 1");
  require(t.tRP >= 1, "timing.tRP", "must be >= 1");
  require(t.tCL >= 1, "timing.tCL", "must be >= 1");
  require(t.tCCD >= 1, "timing.tCCD", "must be >= 1");
  require(t.tRAS >= 1, "timing.tRAS", "must be >= 1");
  require(t.tWR >= 1, "timing.tWR", "must be >= 1");
  require(t.bus_transfer_cycles_per_burst >= 1, "timing.bus_transfer_cycles_per_burst", "must be >= 1");
  require(t.pim_cmd_issue_cycles >= 0, "timing.pim_cmd_issue_cycles", "must be >= 0");

  const auto& e = a.energy;
  require(e.near_bank_access_fraction > 0 && e.near_bank_access_fraction <= 1, "energy.near_bank_access_fraction",
          "must be in (0, 1]");
  require(e.dram_io_access_pj_per_byte >= 0, "energy.dram_io_access_pj_per_byte", "must be >= 0");
  require(e.mac_op_pj >= 0, "energy.mac_op_pj", "must be >= 0");
  require(e.gbcore_op_pj >= 0, "energy.gbcore_op_pj", "must be >= 0");
  require(e.bus_pj_per_byte >= 0, "energy.bus_pj_per_byte", "must be >= 0");
  require(e.leakage_pimcore_mw >= 0, "energy.leakage_pimcore_mw", "must be >= 0");
  require(e.leakage_gbcore_mw >= 0, "energy.leakage_gbcore_mw", "must be >= 0");
  require(e.leakage_sram_mw_per_kb >= 0, "energy.leakage_sram_mw_per_kb", "must be >= 0");
  check_table(e.sram_access_pj, "energy.sram_access_pj");

  const auto& ar = a.area;
  require(ar.pimcore_aim_mm2 >= 0, "area.pimcore_aim_mm2", "must be >= 0");
  require(ar.pimcore_fused_mm2 >= 0, "area.pimcore_fused_mm2", "must be >= 0");
  require(ar.gbcore_mm2 >= 0, "area.gbcore_mm2", "must be >= 0");
  require(ar.bus_mm2 >= 0, "area.bus_mm2", "must be >= 0");
  check_table(ar.sram_mm2, "area.sram_mm2");
}

namespace {

template <typename T>
void read_num(const toml::table& tbl, const char* key, T& out, const std::string& path) {
  const toml::node* n = tbl.get(key);
  if (!n) return;
  if constexpr (std::is_integral_v<T>) {
    auto v = n->value<std::int64_t>();
    if (!v || !n->is_integer()) throw Error("invalid config field '" + path + key + "': expected integer");
    out = static_cast<T>(*v);
  } else {
    auto v = n->value<double>();
    if (!v) throw Error("invalid config field '" + path + key + "': expected number");
    out = *v;
  }
}

void read_table(const toml::table& tbl, const char* key, CapacityTable& out, const std::string& path) {
  const toml::node* n = tbl.get(key);
  if (!n) return;
  const auto* arr = n->as_array();
  if (!arr) throw Error("invalid config field '" + path + key + "': expected array of [bytes, value]");
  CapacityTable t;
  for (const auto& entry : *arr) {
    const auto* pair = entry.as_array();
    if (!pair || pair->size() != 2)
      throw Error("invalid config field '" + path + key + "': expected array of [bytes, value]");
    auto c = (*pair)[0].value<double>();
    auto v = (*pair)[1].value<double>();
    if (!c || !v) throw Error("invalid config field '" + path + key + "': non-numeric entry");
    t.emplace_back(*c, *v);
  }
  out = std::move(t);
}

const toml::table* subtable(const toml::table& root, const char* key) {
  const toml::node* n = root.get(key);
  if (!n) return nullptr;
  const auto* t = n->as_table();
  if (!t) throw Error(std::string("invalid config field '") + key + "': expected table");
  return t;
}

}  // namespace

ArchConfig config_from_toml(const std::string& text, const ArchConfig& base) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config parse error at line " << e.source().begin.line << ": " << e.description();
    throw Error(os.str());
  }
  ArchConfig a = base;
  read_num(root, "num_banks", a.num_banks, "");
  read_num(root, "banks_per_pimcore", a.banks_per_pimcore, "");
  read_num(root, "gbuf_bytes", a.gbuf_bytes, "");
  read_num(root, "lbuf_bytes", a.lbuf_bytes, "");
  read_num(root, "macs_per_pimcore_per_cycle", a.macs_per_pimcore_per_cycle, "");
  read_num(root, "gbcore_ops_per_cycle", a.gbcore_ops_per_cycle, "");
  read_num(root, "burst_bytes", a.burst_bytes, "");
  read_num(root, "row_bytes", a.row_bytes, "");
  read_num(root, "frequency_ghz", a.frequency_ghz, "");
  read_num(root, "max_trace_commands", a.max_trace_commands, "");
  if (const auto* n = root.get("pimcore_functions")) {
    auto s = n->value<std::string>();
    if (s && *s == "aim") a.pimcore_functions = PimcoreFunctions::AimLike;
    else if (s && *s == "fused") a.pimcore_functions = PimcoreFunctions::Fused;
    else throw Error("invalid config field 'pimcore_functions': expected \"aim\" or \"fused\"");
  }
  if (const auto* t = subtable(root, "timing")) {
    read_num(*t, "tRCD", a.timing.tRCD, "timing.");
    read_num(*t, "tRP", a.timing.tRP, "timing.");
    read_num(*t, "tCL", a.timing.tCL, "timing.");
    read_num(*t, "tCCD", a.timing.tCCD, "timing.");
    read_num(*t, "tRAS", a.timing.tRAS, "timing.");
    read_num(*t, "tWR", a.timing.tWR, "timing.");
    read_num(*t, "bus_transfer_cycles_per_burst", a.timing.bus_transfer_cycles_per_burst, "timing.");
    read_num(*t, "pim_cmd_issue_cycles", a.timing.pim_cmd_issue_cycles, "timing.");
  }
  if (const auto* t = subtable(root, "energy")) {
    read_num(*t, "dram_io_access_pj_per_byte", a.energy.dram_io_access_pj_per_byte, "energy.");
    read_num(*t, "near_bank_access_fraction", a.energy.near_bank_access_fraction, "energy.");
    read_table(*t, "sram_access_pj", a.energy.sram_access_pj, "energy.");
    read_num(*t, "mac_op_pj", a.energy.mac_op_pj, "energy.");
    read_num(*t, "gbcore_op_pj", a.energy.gbcore_op_pj, "energy.");
    read_num(*t, "bus_pj_per_byte", a.energy.bus_pj_per_byte, "energy.");
    read_num(*t, "leakage_pimcore_mw", a.energy.leakage_pimcore_mw, "energy.");
    read_num(*t, "leakage_gbcore_mw", a.energy.leakage_gbcore_mw, "energy.");
    read_num(*t, "leakage_sram_mw_per_kb", a.energy.leakage_sram_mw_per_kb, "energy.");
  }
  if (const auto* t = subtable(root, "area")) {
    read_num(*t, "pimcore_aim_mm2", a.area.pimcore_aim_mm2, "area.");
    read_num(*t, "pimcore_fused_mm2", a.area.pimcore_fused_mm2, "area.");
    read_num(*t, "gbcore_mm2", a.area.gbcore_mm2, "area.");
    read_table(*t, "sram_mm2", a.area.sram_mm2, "area.");
    read_num(*t, "bus_mm2", a.area.bus_mm2, "area.");
  }
  validate(a);
  return a;
}

ArchConfig load_config(const std::filesystem::path& path, const ArchConfig& base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_toml(ss.str(), base);
}

namespace {

toml::array table_to_toml(const CapacityTable& t) {
  toml::array arr;
  for (auto [c, v] : t) arr.push_back(toml::array{c, v});
  return arr;
}

}  // namespace

std::string config_to_toml(const ArchConfig& a) {
  toml::table root{
      {"num_banks", a.num_banks},
      {"banks_per_pimcore", a.banks_per_pimcore},
      {"gbuf_bytes", a.gbuf_bytes},
      {"lbuf_bytes", a.lbuf_bytes},
      {"macs_per_pimcore_per_cycle", a.macs_per_pimcore_per_cycle},
      {"gbcore_ops_per_cycle", a.gbcore_ops_per_cycle},
      {"burst_bytes", a.burst_bytes},
      {"row_bytes", a.row_bytes},
      {"frequency_ghz", a.frequency_ghz},
      {"max_trace_commands", a.max_trace_commands},
      {"pimcore_functions", a.pimcore_functions == PimcoreFunctions::Fused ? "fused" : "aim"},
  };
  root.insert("timing", toml::table{
                            {"tRCD", a.timing.tRCD},
                            {"tRP", a.timing.tRP},
                            {"tCL", a.timing.tCL},
                            {"tCCD", a.timing.tCCD},
                            {"tRAS", a.timing.tRAS},
                            {"tWR", a.timing.tWR},
                            {"bus_transfer_cycles_per_burst", a.timing.bus_transfer_cycles_per_burst},
                            {"pim_cmd_issue_cycles", a.timing.pim_cmd_issue_cycles},
                        });
  root.insert("energy", toml::table{
                            {"dram_io_access_pj_per_byte", a.energy.dram_io_access_pj_per_byte},
                            {"near_bank_access_fraction", a.energy.near_bank_access_fraction},
                            {"sram_access_pj", table_to_toml(a.energy.sram_access_pj)},
                            {"mac_op_pj", a.energy.mac_op_pj},
                            {"gbcore_op_pj", a.energy.gbcore_op_pj},
                            {"bus_pj_per_byte", a.energy.bus_pj_per_byte},
                            {"leakage_pimcore_mw", a.energy.leakage_pimcore_mw},
                            {"leakage_gbcore_mw", a.energy.leakage_gbcore_mw},
                            {"leakage_sram_mw_per_kb", a.energy.leakage_sram_mw_per_kb},
                        });
  root.insert("area", toml::table{
                          {"pimcore_aim_mm2", a.area.pimcore_aim_mm2},
                          {"pimcore_fused_mm2", a.area.pimcore_fused_mm2},
                          {"gbcore_mm2", a.area.gbcore_mm2},
                          {"sram_mm2", table_to_toml(a.area.sram_mm2)},
                          {"bus_mm2", a.area.bus_mm2},
                      });
  std::ostringstream os;
  os << root << "\n";
  return os.str();
}

BufferLabel parse_buffer_label(const std::string& label) {
  static const std::regex re(R"(G([0-9]+)K_L([0-9]+)(K?))");
  std::smatch m;
  if (!std::regex_match(label, m, re)) throw Error("malformed buffer label '" + label + "' (expected G<m>K_L<n>)");
  BufferLabel b;
  b.gbuf_bytes = std::stoll(m[1].str()) * 1024;
  b.lbuf_bytes = std::stoll(m[2].str()) * (m[3].length() ? 1024 : 1);
  if (b.gbuf_bytes < 1024) throw Error("buffer label '" + label + "' needs a GBUF of at least 1 KB");
  return b;
}

ArchConfig named_config(const std::string& label, const ArchConfig& base) {
  const auto b = parse_buffer_label(label);
  ArchConfig a = base;
  a.gbuf_bytes = b.gbuf_bytes;
  a.lbuf_bytes = b.lbuf_bytes;
  return a;
}

ArchConfig scale_timing(const ArchConfig& arch, double factor) {
  ArchConfig a = arch;
  auto s = [factor](int& v) { v = std::max(1, static_cast<int>(std::lround(v * factor))); };
  s(a.timing.tRCD);
  s(a.timing.tRP);
  s(a.timing.tCL);
  s(a.timing.tCCD);
  s(a.timing.tRAS);
  s(a.timing.tWR);
  s(a.timing.bus_transfer_cycles_per_burst);
  return a;
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string arch_digest(const ArchConfig& arch) {
  ArchConfig a = arch;
  a.energy = EnergyParams{};
  a.area = AreaParams{};
  return sha256_hex(config_to_toml(a));
}

}  // namespace pimfused
