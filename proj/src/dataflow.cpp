#include "pimfused/dataflow.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <tuple>

#include "json.hpp"

namespace pimfused {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }


TileRegion full_map(const CnnGraph& g, int id) {
  TileRegion r;
  r.layer_id = id;
  if (id == kNetworkInput) {
    r.x1 = g.input.w;
    r.y1 = g.input.h;
    r.c1 = g.input.c;
  } else {
    const LayerSpec& l = g.layer(id);
    r.x1 = l.out_w;
    r.y1 = l.out_h;
    r.c1 = l.cout;
  }
  return r;
}

// Splits `bytes` over the banks of one PIMcore.
void add_core_bytes(std::vector<std::int64_t>& per_bank, int core, std::int64_t bytes, const ArchConfig& arch) {
  int bpc = arch.banks_per_pimcore;
  for (int b = 0; b < bpc; ++b) {
    per_bank[core * bpc + b] += bytes / bpc + (b < bytes % bpc ? 1 : 0);
  }
}

}  // namespace

TileRegion intersect(const TileRegion& a, const TileRegion& b) {
  TileRegion r;
  r.layer_id = a.layer_id;
  r.x0 = std::max(a.x0, b.x0);
  r.x1 = std::min(a.x1, b.x1);
  r.y0 = std::max(a.y0, b.y0);
  r.y1 = std::min(a.y1, b.y1);
  r.c0 = std::max(a.c0, b.c0);
  r.c1 = std::min(a.c1, b.c1);
  if (r.empty()) r.x1 = r.x0 = r.y1 = r.y0 = r.c1 = r.c0 = 0;
  return r;
}

TileRegion bounding_union(const TileRegion& a, const TileRegion& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  TileRegion r;
  r.layer_id = a.layer_id;
  r.x0 = std::min(a.x0, b.x0);
  r.x1 = std::max(a.x1, b.x1);
  r.y0 = std::min(a.y0, b.y0);
  r.y1 = std::max(a.y1, b.y1);
  r.c0 = std::min(a.c0, b.c0);
  r.c1 = std::max(a.c1, b.c1);
  return r;
}

namespace {

// Input extent touched along one axis by outputs [o0, o1), skipping windows that lie entirely in padding.
std::pair<int, int> touched_axis(int o0, int o1, int in, int k, int s, int p) {
  int first = o0, last = o1 - 1;
  while (first <= last && first * s - p + k <= 0) ++first;
  while (last >= first && last * s - p >= in) --last;
  if (first > last) return {0, 0};
  return {std::max(0, first * s - p), std::min(in, last * s - p + k)};
}

}  // namespace

TileRegion backprop_tile(const TileRegion& out, const LayerSpec& layer) {
  if (out.empty()) throw InfeasiblePlan("empty output tile for layer " + std::to_string(layer.id));
  if (out.x0 < 0 || out.y0 < 0 || out.c0 < 0 || out.x1 > layer.out_w || out.y1 > layer.out_h ||
      out.c1 > layer.cout) {
    throw Error("tile outside output map of layer " + std::to_string(layer.id));
  }
  TileRegion in;
  in.layer_id = kNetworkInput;
  const int s = layer.stride, p = layer.padding;
  std::tie(in.x0, in.x1) = touched_axis(out.x0, out.x1, layer.in_w, layer.kw, s, p);
  std::tie(in.y0, in.y1) = touched_axis(out.y0, out.y1, layer.in_h, layer.kh, s, p);
  if (is_conv(layer.kind)) {
    in.c0 = 0;
    in.c1 = layer.cin;
  } else {
    in.c0 = out.c0;
    in.c1 = out.c1;
  }
  if (in.empty()) throw InfeasiblePlan("receptive field of layer " + std::to_string(layer.id) + " tile is empty");
  return in;
}

std::vector<std::pair<int, int>> split_ceil(int n, int parts) {
  if (parts <= 0) throw Error("split into non-positive parts");
  std::vector<std::pair<int, int>> r;
  int step = int(ceil_div(n, parts));
  for (int i = 0; i < parts; ++i) {
    int a = std::min(n, i * step);
    int b = std::min(n, a + step);
    r.emplace_back(a, b);
  }
  return r;
}

std::vector<std::pair<int, int>> split_balanced(int n, int parts) {
  if (parts <= 0) throw Error("split into non-positive parts");
  std::vector<std::pair<int, int>> r;
  int base = n / parts, rem = n % parts, a = 0;
  for (int i = 0; i < parts; ++i) {
    int b = a + base + (i < rem ? 1 : 0);
    r.emplace_back(a, b);
    a = b;
  }
  return r;
}

std::vector<BankPiece> bank_pieces(const Layout& layout, const TileRegion& region, const ArchConfig& arch,
                                   int bytes_per_element) {
  std::vector<std::int64_t> per_bank(arch.num_banks, 0);
  if (!region.empty()) {
    switch (layout.kind) {
      case Layout::Kind::RowInterleaved: {
        std::int64_t row_bytes = std::int64_t(region.width()) * region.channels() * bytes_per_element;
        for (int y = region.y0; y < region.y1; ++y) per_bank[y % arch.num_banks] += row_bytes;
        break;
      }
      case Layout::Kind::CoutSliced:
        for (size_t p = 0; p < layout.owned.size(); ++p) {
          int c0 = std::max(region.c0, layout.owned[p].c0);
          int c1 = std::min(region.c1, layout.owned[p].c1);
          if (c1 > c0) add_core_bytes(per_bank, int(p), region.pixels() * (c1 - c0) * bytes_per_element, arch);
        }
        break;
      case Layout::Kind::Spatial:
        for (size_t p = 0; p < layout.owned.size(); ++p) {
          TileRegion o = layout.owned[p];
          o.c0 = region.c0;
          o.c1 = region.c1;
          TileRegion x = intersect(region, o);
          if (!x.empty()) add_core_bytes(per_bank, int(p), x.elements() * bytes_per_element, arch);
        }
        break;
    }
  }
  std::vector<BankPiece> out;
  for (int b = 0; b < arch.num_banks; ++b) {
    if (per_bank[b] > 0) out.push_back({b, per_bank[b]});
  }
  return out;
}

std::int64_t local_bytes(const Layout& layout, const TileRegion& region, int core, const ArchConfig& arch,
                         int bytes_per_element) {
  std::int64_t sum = 0;
  for (const BankPiece& piece : bank_pieces(layout, region, arch, bytes_per_element)) {
    if (piece.bank / arch.banks_per_pimcore == core) sum += piece.bytes;
  }
  return sum;
}

std::vector<ActWindow> plan_act_windows(const LayerSpec& layer, std::int64_t capacity, int inputs,
                                        bool with_output, int max_group) {
  const std::int64_t bpe = layer.bytes_per_element;
  auto rows_in = [&](int r) { return std::min<std::int64_t>(layer.in_h, std::int64_t(r - 1) * layer.stride + layer.kh); };
  auto bytes = [&](int c, int r) {
    std::int64_t b = std::int64_t(inputs) * c * rows_in(r) * layer.in_w * bpe;
    if (with_output) b += std::int64_t(c) * r * layer.out_w * bpe;
    return b;
  };
  int group = layer.cin;
  if (bytes(group, 1) > capacity) {
    std::int64_t per_channel = bytes(1, 1);
    group = int(capacity / per_channel);
    if (group < 1) {
      throw Error("GBUF of " + std::to_string(capacity) + " bytes cannot hold one window of layer " +
                  std::to_string(layer.id));
    }
  }
  if (max_group > 0) group = std::min(group, max_group);
  // Prefer equal groups that divide the channel count.
  while (layer.cin % group != 0) --group;
  int rows = 1;
  while (rows < layer.out_h && bytes(group, rows + 1) <= capacity) ++rows;

  std::vector<std::pair<int, int>> groups;
  for (int c = 0; c < layer.cin; c += group) groups.emplace_back(c, std::min(layer.cin, c + group));

  std::vector<ActWindow> out;
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    int prev_in1 = -1;
    for (int a = 0; a < layer.out_h; a += rows) {
      int b = std::min(layer.out_h, a + rows);
      ActWindow w;
      w.out_row0 = a;
      w.out_row1 = b;
      std::tie(w.in_row0, w.in_row1) = touched_axis(a, b, layer.in_h, layer.kh, layer.stride, layer.padding);
      w.c0 = groups[gi].first;
      w.c1 = groups[gi].second;
      w.fetch_row0 = prev_in1 > w.in_row0 ? std::min(prev_in1, w.in_row1) : w.in_row0;
      w.first_group = gi == 0;
      w.last_group = gi + 1 == groups.size();
      out.push_back(w);
      prev_in1 = w.in_row1;
    }
  }
  return out;
}

WeightChunking weight_chunking(const LayerSpec& layer, std::int64_t gbuf_bytes) {
  WeightChunking w;
  std::int64_t filter = std::int64_t(layer.cin) * layer.kh * layer.kw * layer.bytes_per_element;
  if (filter <= gbuf_bytes) {
    w.couts_per_chunk = int(std::min<std::int64_t>(layer.cout, gbuf_bytes / filter));
    w.chunk_bytes = w.couts_per_chunk * filter;
    w.chunks = int(ceil_div(layer.cout, w.couts_per_chunk));
  } else {
    w.couts_per_chunk = 0;
    w.chunk_bytes = gbuf_bytes;
    w.chunks = int(ceil_div(layer.weight_bytes(), gbuf_bytes));
  }
  return w;
}

LayerByLayerSchedule plan_layer_by_layer(const LayerSpec& layer, const ArchConfig& arch) {
  LayerByLayerSchedule s;
  s.layer_id = layer.id;
  int cores = arch.num_pimcores();
  s.cout_ranges = split_balanced(layer.cout, cores);
  int widest = 0;
  for (auto [a, b] : s.cout_ranges) widest = std::max(widest, b - a);
  const std::int64_t bpe = layer.bytes_per_element;
  s.weight_bytes_per_core = std::int64_t(widest) * layer.cin * layer.kh * layer.kw * bpe;
  s.output_bytes_per_core = std::int64_t(widest) * layer.out_h * layer.out_w * bpe;
  return s;
}

namespace {

TileRegion canonical_tile(const CnnGraph& g, int id, const FusedKernel& k, int core) {
  TileRegion full = full_map(g, id);
  int ix = core % k.tiles_x, iy = core / k.tiles_x;
  auto xs = split_ceil(full.x1, k.tiles_x);
  auto ys = split_ceil(full.y1, k.tiles_y);
  TileRegion r = full;
  r.x0 = xs[ix].first;
  r.x1 = xs[ix].second;
  r.y0 = ys[iy].first;
  r.y1 = ys[iy].second;
  return r;
}

std::int64_t region_macs(const TileRegion& out, const LayerSpec& l) {
  if (!is_conv(l.kind)) return 0;
  return out.elements() * l.cin * l.kh * l.kw;
}

std::int64_t region_ops(const TileRegion& out, const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Pool:
      return out.elements() * l.kh * l.kw;
    case LayerKind::AddRelu:
      return out.elements();
    default:
      return region_macs(out, l);
  }
}

}  // namespace

FusedTileSchedule plan_fused_kernel(const CnnGraph& g, const FusedKernel& kernel, const ArchConfig& arch) {
  const auto& ids = kernel.layer_ids;
  if (ids.empty()) throw InfeasiblePlan("empty fused kernel");
  for (size_t i = 0; i < ids.size(); ++i) {
    g.layer(ids[i]);
    if (i > 0 && ids[i] != ids[i - 1] + 1) throw InfeasiblePlan("fused kernel layers are not contiguous");
  }
  if (kernel.tiles_x < 1 || kernel.tiles_y < 1 || kernel.tiles_x * kernel.tiles_y != arch.num_pimcores()) {
    throw InfeasiblePlan("tile grid " + std::to_string(kernel.tiles_x) + "x" + std::to_string(kernel.tiles_y) +
                         " does not match " + std::to_string(arch.num_pimcores()) + " PIMcores");
  }
  const int first = ids.front(), last = ids.back();
  auto inside = [&](int id) { return id >= first && id <= last; };
  const int cores = arch.num_pimcores();
  const int bpe = g.bytes_per_element;

  FusedTileSchedule s;
  s.kernel = kernel;
  for (int id : ids) {
    for (int c : g.consumers(id)) {
      if (!inside(c)) {
        s.exported.push_back(id);
        break;
      }
    }
  }
  auto is_exported = [&](int id) { return std::find(s.exported.begin(), s.exported.end(), id) != s.exported.end(); };

  s.cores.resize(cores);
  for (int p = 0; p < cores; ++p) {
    CoreSchedule& cs = s.cores[p];
    cs.layers.resize(ids.size());
    TileRegion tile = canonical_tile(g, last, kernel, p);
    if (tile.empty()) throw InfeasiblePlan("tile grid leaves PIMcore " + std::to_string(p) + " without output");
    cs.tensors[last] = tile;
    for (int id : s.exported) {
      if (id == last) continue;
      TileRegion t = canonical_tile(g, id, kernel, p);
      if (!t.empty()) cs.tensors[id] = t;
    }
    for (int i = int(ids.size()) - 1; i >= 0; --i) {
      const int id = ids[i];
      const LayerSpec& l = g.layer(id);
      auto it = cs.tensors.find(id);
      TileRegion out = it != cs.tensors.end() ? it->second : canonical_tile(g, id, kernel, p);
      if (out.empty()) throw InfeasiblePlan("empty tile for layer " + std::to_string(id));
      cs.tensors[id] = out;
      cs.layers[i].out = out;
      for (int prod : g.producers(id)) {
        TileRegion req = backprop_tile(out, l);
        req.layer_id = prod;
        cs.layers[i].inputs.push_back(req);
        if (inside(prod)) {
          cs.tensors[prod] = bounding_union(cs.tensors.count(prod) ? cs.tensors[prod] : TileRegion{}, req);
        } else {
          auto& b = cs.boundary_inputs[prod];
          b = bounding_union(b, req);
        }
      }
    }
    for (auto& [id, r] : cs.boundary_inputs) cs.tensors[id] = r;
  }

  std::map<int, int> last_use;
  for (int id : ids) {
    for (int prod : g.producers(id)) {
      if (inside(prod)) last_use[prod] = std::max(last_use[prod], id);
    }
  }
  auto tensor_bytes = [&](int id) {
    std::int64_t m = 0;
    for (const auto& cs : s.cores) m = std::max(m, cs.tensors.at(id).elements() * bpe);
    return m;
  };
  std::int64_t live = 0;
  for (int id : ids) {
    std::int64_t bytes = tensor_bytes(id);
    bool resident = id != last && !is_exported(id) && last_use.count(id) && live + bytes <= arch.lbuf_bytes;
    s.placement[id] = resident ? Placement::Lbuf : Placement::LocalBank;
    if (resident) live += bytes;
    s.lbuf_peak_bytes = std::max(s.lbuf_peak_bytes, live);
    for (int prod : g.producers(id)) {
      if (inside(prod) && last_use[prod] == id && s.placement[prod] == Placement::Lbuf) live -= tensor_bytes(prod);
    }
    if (id != last && !resident) {
      for (const auto& cs : s.cores) s.spill_bytes += cs.tensors.at(id).elements() * bpe;
    }
  }
  return s;
}

double duplication_factor(const FusedTileSchedule& s, const CnnGraph& g) {
  std::int64_t tiled = 0, unique = 0;
  for (int id : s.kernel.layer_ids) {
    unique += full_map(g, id).elements();
    for (const auto& cs : s.cores) tiled += cs.tensors.at(id).elements();
  }
  return unique ? double(tiled) / double(unique) - 1.0 : 0.0;
}

double input_replication(const FusedTileSchedule& s, const CnnGraph& g) {
  std::int64_t tiled = 0, unique = 0;
  if (s.cores.empty()) return 0.0;
  for (const auto& [id, r] : s.cores.front().boundary_inputs) {
    unique += full_map(g, id).elements();
    for (const auto& cs : s.cores) tiled += cs.boundary_inputs.at(id).elements();
  }
  return unique ? double(tiled) / double(unique) - 1.0 : 0.0;
}

double redundancy_factor(const FusedTileSchedule& s, const CnnGraph& g) {
  std::int64_t executed = 0, nominal = 0;
  for (size_t i = 0; i < s.kernel.layer_ids.size(); ++i) {
    const LayerSpec& l = g.layer(s.kernel.layer_ids[i]);
    nominal += l.macs();
    for (const auto& cs : s.cores) executed += region_macs(cs.layers[i].out, l);
  }
  return nominal ? double(executed) / double(nominal) - 1.0 : 0.0;
}

const char* to_string(StepRole role) {
  switch (role) {
    case StepRole::Act: return "act";
    case StepRole::Weight: return "wgt";
    case StepRole::Reorg: return "reorg";
    case StepRole::Out: return "out";
    case StepRole::Spill: return "spill";
    case StepRole::Compute: return "cmp";
  }
  return "?";
}

std::int64_t step_payload_bytes(const Step& s, const ArchConfig& arch) {
  if (s.op == StepOp::PimCompute || s.op == StepOp::GbCompute) return 0;
  std::int64_t per_bank = ceil_div(s.bytes, arch.burst_bytes) * arch.burst_bytes;
  std::int64_t banks = s.bank < 0 ? arch.num_banks : 1;
  return per_bank * s.repeat * banks;
}

namespace {

// Bytes each bank must send to other PIMcores (`fetch`, counted once) and bytes each destination
// PIMcore needs from each source PIMcore (`need[src][dst]`).
struct ReorgDemand {
  std::vector<std::int64_t> fetch;
  std::vector<std::vector<std::int64_t>> need;
};

int owner_bank(const Layout& layout, int y, int x, int c, const ArchConfig& arch) {
  const int bpc = arch.banks_per_pimcore;
  switch (layout.kind) {
    case Layout::Kind::RowInterleaved:
      return y % arch.num_banks;
    case Layout::Kind::CoutSliced:
      for (size_t p = 0; p < layout.owned.size(); ++p) {
        if (c >= layout.owned[p].c0 && c < layout.owned[p].c1) return int(p) * bpc + c % bpc;
      }
      break;
    case Layout::Kind::Spatial:
      for (size_t p = 0; p < layout.owned.size(); ++p) {
        const TileRegion& o = layout.owned[p];
        if (y >= o.y0 && y < o.y1 && x >= o.x0 && x < o.x1) return int(p) * bpc + c % bpc;
      }
      break;
  }
  throw Error("tensor element (" + std::to_string(y) + "," + std::to_string(x) + "," + std::to_string(c) +
              ") has no owning bank");
}

ReorgDemand reorg_demand(const Layout& layout, int tensor, const FusedTileSchedule& s, const ArchConfig& arch,
                         int bytes_per_element) {
  const int cores = int(s.cores.size());
  const int bpc = arch.banks_per_pimcore;
  TileRegion box;
  for (const auto& cs : s.cores) box = bounding_union(box, cs.boundary_inputs.at(tensor));
  ReorgDemand d{std::vector<std::int64_t>(arch.num_banks, 0),
                std::vector<std::vector<std::int64_t>>(cores, std::vector<std::int64_t>(cores, 0))};
  std::vector<std::uint32_t> wanted(box.elements(), 0);
  std::vector<int> owner(box.elements(), -1);
  auto index = [&](int y, int x, int c) {
    return (std::int64_t(y - box.y0) * box.width() + (x - box.x0)) * box.channels() + (c - box.c0);
  };
  for (int p = 0; p < cores; ++p) {
    const TileRegion& r = s.cores[p].boundary_inputs.at(tensor);
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        for (int c = r.c0; c < r.c1; ++c) {
          const std::int64_t i = index(y, x, c);
          if (owner[i] < 0) owner[i] = owner_bank(layout, y, x, c, arch);
          const int q = owner[i] / bpc;
          if (q == p) continue;
          wanted[i] |= 1u << p;
          d.need[q][p] += bytes_per_element;
        }
      }
    }
  }
  for (std::int64_t i = 0; i < box.elements(); ++i) {
    if (wanted[i]) d.fetch[owner[i]] += bytes_per_element;
  }
  return d;
}

class Lowering {
 public:
  Lowering(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch) : g_(g), plan_(plan), arch_(arch) {}

  ExecutionPlan run() {
    auto problems = check_plan(g_, plan_);
    if (!problems.empty()) throw InfeasiblePlan(problems.front());
    std::map<int, const FusedKernel*> kernel_at;
    for (const auto& k : plan_.kernels) kernel_at[k.layer_ids.front()] = &k;
    ep_.layouts[kNetworkInput] = Layout{};
    for (size_t i = 0; i < g_.layers.size();) {
      const LayerSpec& l = g_.layers[i];
      auto it = kernel_at.find(l.id);
      if (it != kernel_at.end()) {
        lower_fused(*it->second);
        i += it->second->layer_ids.size();
      } else {
        if (is_conv(l.kind)) {
          lower_tail_conv(l);
        } else {
          lower_tail_gbcore(l);
        }
        ++i;
      }
    }
    return std::move(ep_);
  }

 private:
  std::int64_t granule(std::int64_t bytes) const {
    std::int64_t b = arch_.burst_bytes;
    return std::max(b, bytes / b * b);
  }
  std::int64_t per_bank(std::int64_t core_bytes) const { return ceil_div(core_bytes, arch_.banks_per_pimcore); }
  std::int64_t lbuf_granule() const {
    return arch_.lbuf_bytes > 0 ? granule(per_bank(arch_.lbuf_bytes)) : arch_.burst_bytes;
  }
  std::int64_t store_granule() const {
    return arch_.lbuf_bytes > 0 ? granule(per_bank(arch_.lbuf_bytes)) : arch_.burst_bytes;
  }

  Step make(StepOp op, StepRole role, int layer, int window) const {
    Step s;
    s.op = op;
    s.role = role;
    s.layer = layer;
    s.window = window;
    return s;
  }

  void gbuf_loads(const std::vector<BankPiece>& pieces, StepRole role, int layer, int window, int tensor,
                  bool weights, bool reorg = false) {
    for (const BankPiece& p : pieces) {
      Step s = make(StepOp::BankToGbuf, role, layer, window);
      s.bank = p.bank;
      s.tensor = tensor;
      s.weights = weights;
      s.bytes = p.bytes;
      s.granule = granule(p.bytes);
      s.reorg_segment = reorg;
      ep_.steps.push_back(s);
    }
  }

  void gbuf_stores(const std::vector<BankPiece>& pieces, StepRole role, int layer, int window, int tensor,
                   bool reorg = false) {
    for (const BankPiece& p : pieces) {
      Step s = make(StepOp::GbufToBank, role, layer, window);
      s.bank = p.bank;
      s.tensor = tensor;
      s.bytes = p.bytes;
      s.granule = granule(p.bytes);
      s.reorg_segment = reorg;
      ep_.steps.push_back(s);
    }
  }

  void lbuf_step(StepOp op, StepRole role, int layer, int window, int tensor, bool weights, std::int64_t bytes,
                 std::int64_t gran, std::int64_t repeat) {
    if (bytes <= 0 || repeat <= 0) return;
    Step s = make(op, role, layer, window);
    s.tensor = tensor;
    s.weights = weights;
    s.bytes = bytes;
    s.granule = gran;
    s.repeat = repeat;
    ep_.steps.push_back(s);
  }

  void compute(StepOp op, const LayerSpec& l, int window, std::int64_t ops) {
    Step s = make(op, StepRole::Compute, l.id, window);
    s.tensor = l.id;
    s.ops = ops;
    s.flags = {l.kind};
    ep_.steps.push_back(s);
  }

  // Weight chunks are stored contiguously, chunk j of layer l in bank (l + j) mod num_banks.
  std::vector<BankPiece> weight_chunk_piece(int layer, int chunk, std::int64_t bytes) const {
    return {BankPiece{(layer + chunk) % arch_.num_banks, bytes}};
  }

  void lower_tail_conv(const LayerSpec& l);
  void lower_tail_gbcore(const LayerSpec& l);
  void lower_fused(const FusedKernel& k);

  const CnnGraph& g_;
  const FusionPlan& plan_;
  const ArchConfig& arch_;
  ExecutionPlan ep_;
  int gbuf_resident_ = -2;  // tensor whose whole map is still in the GBUF
};

void Lowering::lower_tail_conv(const LayerSpec& l) {
  gbuf_resident_ = -2;
  LayerByLayerSchedule lbl = plan_layer_by_layer(l, arch_);
  ep_.tail.push_back(lbl);
  const int prod = g_.producers(l.id).front();
  const Layout& in_layout = ep_.layouts.at(prod);
  const std::int64_t bpe = l.bytes_per_element;
  int widest = 0;
  for (auto [a, b] : lbl.cout_ranges) widest = std::max(widest, b - a);

  // With an LBUF, groups are small enough for one output channel's weights to stay resident.
  const int max_group = arch_.lbuf_bytes > 0 ? int(std::max<std::int64_t>(1, arch_.lbuf_bytes / (l.kh * l.kw * bpe))) : 0;
  auto windows = plan_act_windows(l, arch_.gbuf_bytes, 1, false, max_group);
  for (size_t wi = 0; wi < windows.size(); ++wi) {
    const ActWindow& w = windows[wi];
    const int win = int(wi);
    TileRegion fetch{prod, 0, l.in_w, w.fetch_row0, w.in_row1, w.c0, w.c1};
    if (!fetch.empty()) gbuf_loads(bank_pieces(in_layout, fetch, arch_, int(bpe)), StepRole::Act, l.id, win, prod, false);

    // PIMcores work through their output channels one at a time; the weights of one output channel
    // for this window's channel group are `per_cout` bytes.
    const std::int64_t pixels = std::int64_t(w.out_row1 - w.out_row0) * l.out_w;
    const std::int64_t per_cout = std::int64_t(w.c1 - w.c0) * l.kh * l.kw * bpe;
    const std::int64_t wgt = per_bank(per_cout * widest);
    if (!w.first_group) {
      lbuf_step(StepOp::BankToLbuf, StepRole::Spill, l.id, win, l.id, false, per_bank(pixels * widest * bpe),
                lbuf_granule(), 1);
    }
    if (arch_.lbuf_bytes > 0 && per_cout <= arch_.lbuf_bytes) {
      bool resident = wi > 0 && windows[wi - 1].c0 == w.c0 && per_cout * widest <= arch_.lbuf_bytes;
      if (!resident) lbuf_step(StepOp::BankToLbuf, StepRole::Weight, l.id, win, l.id, true, wgt, lbuf_granule(), 1);
    } else {
      // The LBUF keeps what it can of each output channel's slice; the rest is re-read per output pixel.
      const std::int64_t kept = std::min(per_cout, arch_.lbuf_bytes);
      lbuf_step(StepOp::BankToLbuf, StepRole::Weight, l.id, win, l.id, true, per_bank(kept * widest),
                lbuf_granule(), 1);
      lbuf_step(StepOp::BankToLbuf, StepRole::Weight, l.id, win, l.id, true, per_bank((per_cout - kept) * widest),
                lbuf_granule(), pixels);
    }
    compute(StepOp::PimCompute, l, win, pixels * widest * (w.c1 - w.c0) * l.kh * l.kw);
    lbuf_step(StepOp::LbufToBank, w.last_group ? StepRole::Out : StepRole::Spill, l.id, win, l.id, false,
              per_bank(pixels * widest * bpe), store_granule(), 1);
  }

  Layout out;
  out.kind = Layout::Kind::CoutSliced;
  for (auto [a, b] : lbl.cout_ranges) out.owned.push_back(TileRegion{l.id, 0, l.out_w, 0, l.out_h, a, b});
  ep_.layouts[l.id] = out;
}

void Lowering::lower_tail_gbcore(const LayerSpec& l) {
  const auto prods = g_.producers(l.id);
  const std::int64_t bpe = l.bytes_per_element;
  auto windows = plan_act_windows(l, arch_.gbuf_bytes, int(prods.size()), true);
  Layout interleaved;
  for (size_t wi = 0; wi < windows.size(); ++wi) {
    const ActWindow& w = windows[wi];
    const int win = int(wi);
    for (int prod : prods) {
      if (prod == gbuf_resident_ && windows.size() == 1) continue;
      TileRegion fetch{prod, 0, l.in_w, w.fetch_row0, w.in_row1, w.c0, w.c1};
      if (!fetch.empty()) {
        gbuf_loads(bank_pieces(ep_.layouts.at(prod), fetch, arch_, int(bpe)), StepRole::Act, l.id, win, prod, false);
      }
    }
    TileRegion out{l.id, 0, l.out_w, w.out_row0, w.out_row1, w.c0, w.c1};
    compute(StepOp::GbCompute, l, win, region_ops(out, l));
    gbuf_stores(bank_pieces(interleaved, out, arch_, int(bpe)), StepRole::Out, l.id, win, l.id);
  }
  ep_.layouts[l.id] = interleaved;
  gbuf_resident_ = windows.size() == 1 ? l.id : -2;
}

void Lowering::lower_fused(const FusedKernel& k) {
  gbuf_resident_ = -2;
  if (arch_.pimcore_functions == PimcoreFunctions::AimLike) {
    for (int id : k.layer_ids) {
      if (!is_conv(g_.layer(id).kind)) {
        throw InfeasiblePlan("layer " + std::to_string(id) + " needs pooling/residual support in the PIMcores");
      }
    }
  }
  FusedTileSchedule s = plan_fused_kernel(g_, k, arch_);
  const int first = k.layer_ids.front(), last = k.layer_ids.back();
  const int bpe = g_.bytes_per_element;
  const int cores = arch_.num_pimcores();
  const int bpc = arch_.banks_per_pimcore;

  // Kernel-entry reorganization: every boundary byte a PIMcore needs that sits in another
  // PIMcore's banks is fetched once into the GBUF and written to each PIMcore that needs it.
  int win = 0;
  for (const auto& [tensor, unused] : s.cores.front().boundary_inputs) {
    const Layout& layout = ep_.layouts.at(tensor);
    ReorgDemand d = reorg_demand(layout, tensor, s, arch_, bpe);
    for (int q = 0; q < cores; ++q) {
      std::int64_t total = 0;
      for (int b = 0; b < bpc; ++b) total += d.fetch[q * bpc + b];
      std::int64_t done = 0;
      while (done < total) {
        const std::int64_t take = std::min<std::int64_t>(arch_.gbuf_bytes, total - done);
        std::vector<BankPiece> src;
        for (int b = 0; b < bpc; ++b) {
          const std::int64_t v = d.fetch[q * bpc + b];
          const std::int64_t part = v * (done + take) / total - v * done / total;
          if (part > 0) src.push_back({q * bpc + b, part});
        }
        gbuf_loads(src, StepRole::Reorg, first, win, tensor, false, true);
        std::vector<BankPiece> dst;
        for (int p = 0; p < cores; ++p) {
          const std::int64_t v = d.need[q][p];
          const std::int64_t part = v * (done + take) / total - v * done / total;
          for (int b = 0; b < bpc; ++b) {
            std::int64_t x = part / bpc + (b < part % bpc ? 1 : 0);
            if (x > 0) dst.push_back({p * bpc + b, x});
          }
        }
        gbuf_stores(dst, StepRole::Reorg, first, win, tensor, true);
        done += take;
        ++win;
      }
    }
  }

  auto max_bytes = [&](auto region_of) {
    std::int64_t m = 0;
    for (const auto& cs : s.cores) m = std::max(m, region_of(cs).elements() * bpe);
    return m;
  };
  auto exported = [&](int id) { return std::find(s.exported.begin(), s.exported.end(), id) != s.exported.end(); };

  for (size_t i = 0; i < k.layer_ids.size(); ++i) {
    const int id = k.layer_ids[i];
    const LayerSpec& l = g_.layer(id);
    const auto prods = g_.producers(id);
    const std::int64_t out_pixels = max_bytes([&](const CoreSchedule& cs) { return cs.layers[i].out; }) / bpe / l.cout;
    const bool store = s.placement.at(id) == Placement::LocalBank;
    const StepRole store_role = (id == last || exported(id)) ? StepRole::Out : StepRole::Spill;
    std::vector<std::int64_t> in_bytes;
    std::vector<bool> resident;
    for (size_t j = 0; j < prods.size(); ++j) {
      in_bytes.push_back(per_bank(max_bytes([&](const CoreSchedule& cs) { return cs.layers[i].inputs[j]; })));
      bool inside = prods[j] >= first && prods[j] <= last;
      resident.push_back(inside && s.placement.at(prods[j]) == Placement::Lbuf);
    }

    if (is_conv(l.kind)) {
      WeightChunking wc = weight_chunking(l, arch_.gbuf_bytes);
      const std::int64_t filter = std::int64_t(l.cin) * l.kh * l.kw * bpe;
      const std::int64_t total_w = l.weight_bytes();
      for (int j = 0; j < wc.chunks; ++j) {
        std::int64_t chunk_bytes, couts_done, ops;
        if (wc.couts_per_chunk > 0) {
          couts_done = std::min<std::int64_t>(wc.couts_per_chunk, l.cout - std::int64_t(j) * wc.couts_per_chunk);
          chunk_bytes = couts_done * filter;
          ops = out_pixels * couts_done * l.cin * l.kh * l.kw;
        } else {
          std::int64_t lo = std::int64_t(j) * wc.chunk_bytes;
          std::int64_t hi = std::min(total_w, lo + wc.chunk_bytes);
          chunk_bytes = hi - lo;
          couts_done = hi / filter - lo / filter;
          ops = out_pixels * (chunk_bytes / bpe);
        }
        gbuf_loads(weight_chunk_piece(id, j, chunk_bytes), StepRole::Weight, id, j, id, true);
        if (!resident[0] && (j == 0 || in_bytes[0] * bpc > arch_.lbuf_bytes)) {
          lbuf_step(StepOp::BankToLbuf, StepRole::Act, id, j, prods[0], false, in_bytes[0], lbuf_granule(), 1);
        }
        compute(StepOp::PimCompute, l, j, ops);
        if (store && couts_done > 0) {
          lbuf_step(StepOp::LbufToBank, store_role, id, j, id, false, per_bank(out_pixels * couts_done * bpe),
                    store_granule(), 1);
        }
      }
    } else {
      for (size_t j = 0; j < prods.size(); ++j) {
        if (!resident[j]) {
          lbuf_step(StepOp::BankToLbuf, StepRole::Act, id, 0, prods[j], false, in_bytes[j], lbuf_granule(), 1);
        }
      }
      std::int64_t ops = 0;
      for (const auto& cs : s.cores) ops = std::max(ops, region_ops(cs.layers[i].out, l));
      compute(StepOp::PimCompute, l, 0, ops);
      if (store) {
        lbuf_step(StepOp::LbufToBank, store_role, id, 0, id, false, per_bank(out_pixels * l.cout * bpe),
                  store_granule(), 1);
      }
    }
  }

  for (int id : k.layer_ids) {
    Layout layout;
    layout.kind = Layout::Kind::Spatial;
    for (int p = 0; p < cores; ++p) layout.owned.push_back(canonical_tile(g_, id, k, p));
    ep_.layouts[id] = layout;
  }
  ep_.kernels.push_back(std::move(s));
}

}  // namespace

ExecutionPlan build_execution(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch) {
  return Lowering(g, plan, arch).run();
}

std::map<int, Layout> tensor_layouts(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch) {
  return build_execution(g, plan, arch).layouts;
}

DataflowMetrics analyze(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch) {
  ExecutionPlan ep = build_execution(g, plan, arch);
  DataflowMetrics m;
  std::map<int, LayerMetrics> per_layer;
  for (const LayerSpec& l : g.layers) {
    LayerMetrics& lm = per_layer[l.id];
    lm.layer_id = l.id;
    lm.macs = l.macs();
    lm.executed_macs = l.macs();
  }
  for (const Step& s : ep.steps) {
    std::int64_t bytes = step_payload_bytes(s, arch);
    if (s.op == StepOp::BankToGbuf || s.op == StepOp::GbufToBank) {
      m.cross_bank_bytes += bytes;
      per_layer[s.layer].cross_bank_bytes += bytes;
    } else if (s.op == StepOp::BankToLbuf || s.op == StepOp::LbufToBank) {
      m.near_bank_bytes += bytes;
    }
  }
  std::int64_t tiled = 0, unique = 0;
  for (const FusedTileSchedule& s : ep.kernels) {
    m.kernel_replication.push_back(duplication_factor(s, g));
    m.kernel_redundancy.push_back(redundancy_factor(s, g));
    m.lbuf_spill_bytes += s.spill_bytes;
    const int last = s.kernel.layer_ids.back();
    for (size_t i = 0; i < s.kernel.layer_ids.size(); ++i) {
      const int id = s.kernel.layer_ids[i];
      const LayerSpec& l = g.layer(id);
      LayerMetrics& lm = per_layer[id];
      lm.fused = true;
      lm.executed_macs = 0;
      unique += full_map(g, id).elements();
      for (const auto& cs : s.cores) {
        lm.executed_macs += region_macs(cs.layers[i].out, l);
        std::int64_t e = cs.tensors.at(id).elements();
        tiled += e;
        if (id != last) {
          m.intermediate_tile_bytes += e * g.bytes_per_element;
          if (s.placement.at(id) == Placement::LocalBank) lm.spill_bytes += e * g.bytes_per_element;
        }
      }
    }
  }
  m.replication_ratio = unique ? double(tiled) / double(unique) - 1.0 : 0.0;
  for (auto& [id, lm] : per_layer) {
    m.nominal_macs += lm.macs;
    m.executed_macs += lm.executed_macs;
    m.layers.push_back(lm);
  }
  m.redundancy_ratio = m.nominal_macs ? double(m.executed_macs) / double(m.nominal_macs) - 1.0 : 0.0;
  return m;
}

std::string metrics_to_json(const DataflowMetrics& m) {
  nlohmann::ordered_json j;
  j["replication_ratio"] = m.replication_ratio;
  j["redundancy_ratio"] = m.redundancy_ratio;
  j["cross_bank_bytes"] = m.cross_bank_bytes;
  j["lbuf_spill_bytes"] = m.lbuf_spill_bytes;
  j["intermediate_tile_bytes"] = m.intermediate_tile_bytes;
  j["nominal_macs"] = m.nominal_macs;
  j["executed_macs"] = m.executed_macs;
  j["near_bank_bytes"] = m.near_bank_bytes;
  j["kernel_replication"] = m.kernel_replication;
  j["kernel_redundancy"] = m.kernel_redundancy;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const LayerMetrics& l : m.layers) {
    layers.push_back({{"id", l.layer_id},
                      {"fused", l.fused},
                      {"macs", l.macs},
                      {"executed_macs", l.executed_macs},
                      {"cross_bank_bytes", l.cross_bank_bytes},
                      {"spill_bytes", l.spill_bytes}});
  }
  return j.dump(2);
}

}  // namespace pimfused
