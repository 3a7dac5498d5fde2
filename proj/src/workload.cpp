#include "pimfused/workload.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include "json.hpp"

namespace pimfused {

using nlohmann::json;

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::ConvBn: return "CONV_BN";
    case LayerKind::ConvBnRelu: return "CONV_BN_RELU";
    case LayerKind::Pool: return "POOL";
    case LayerKind::AddRelu: return "ADD_RELU";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "CONV_BN") return LayerKind::ConvBn;
  if (s == "CONV_BN_RELU") return LayerKind::ConvBnRelu;
  if (s == "POOL") return LayerKind::Pool;
  if (s == "ADD_RELU") return LayerKind::AddRelu;
  throw Error("unknown layer kind '" + s + "'");
}

std::int64_t LayerSpec::macs() const {
  if (!is_conv(kind)) return 0;
  return std::int64_t(out_h) * out_w * cout * cin * kh * kw;
}

std::int64_t LayerSpec::ops() const {
  const std::int64_t outs = std::int64_t(out_h) * out_w * cout;
  switch (kind) {
    case LayerKind::ConvBn:
    case LayerKind::ConvBnRelu: return macs();
    case LayerKind::Pool: return outs * kh * kw;
    case LayerKind::AddRelu: return outs;
  }
  return 0;
}

int conv_out_dim(int in, int k, int stride, int pad) {
  const int span = in + 2 * pad - k;
  if (stride <= 0 || span < 0) return 0;
  return span / stride + 1;
}

const LayerSpec& CnnGraph::layer(int id) const {
  if (id < 0 || id >= static_cast<int>(layers.size()) || layers[id].id != id)
    throw Error("no layer with id " + std::to_string(id));
  return layers[id];
}

std::vector<int> CnnGraph::producers(int id) const {
  std::vector<int> out;
  for (auto [p, c] : edges)
    if (c == id) out.push_back(p);
  return out;
}

std::vector<int> CnnGraph::consumers(int id) const {
  std::vector<int> out;
  for (auto [p, c] : edges)
    if (p == id) out.push_back(c);
  return out;
}

std::int64_t CnnGraph::total_macs() const {
  std::int64_t total = 0;
  for (const auto& l : layers) total += l.macs();
  return total;
}

CnnGraph CnnGraph::truncated(int count) const {
  if (count <= 0 || count > static_cast<int>(layers.size()))
    throw Error("cannot truncate graph of " + std::to_string(layers.size()) + " layers to " +
                std::to_string(count));
  CnnGraph g = *this;
  g.layers.resize(count);
  g.edges.clear();
  for (auto e : edges)
    if (e.first < count && e.second < count) g.edges.push_back(e);
  return g;
}

std::vector<Violation> validate_graph(const CnnGraph& g) {
  std::vector<Violation> out;
  auto report = [&](Violation::Kind k, int layer, std::string msg) {
    out.push_back({k, layer, "layer " + std::to_string(layer) + ": " + std::move(msg)});
  };
  const int n = static_cast<int>(g.layers.size());

  for (int i = 0; i < n; ++i) {
    const auto& l = g.layers[i];
    if (l.id != i) {
      report(Violation::Kind::BadLayer, i, "id does not match position");
      continue;
    }
    if (l.cin <= 0 || l.cout <= 0 || l.kh <= 0 || l.kw <= 0 || l.stride <= 0 || l.padding < 0 ||
        l.in_h <= 0 || l.in_w <= 0 || l.bytes_per_element <= 0) {
      report(Violation::Kind::BadLayer, i, "non-positive dimension");
      continue;
    }
    if (l.out_h != conv_out_dim(l.in_h, l.kh, l.stride, l.padding) ||
        l.out_w != conv_out_dim(l.in_w, l.kw, l.stride, l.padding) || l.out_h <= 0 || l.out_w <= 0)
      report(Violation::Kind::BadLayer, i, "output extent inconsistent with stride/padding");
    if ((l.kind == LayerKind::Pool || l.kind == LayerKind::AddRelu) && l.cin != l.cout)
      report(Violation::Kind::BadLayer, i, "POOL/ADD_RELU must preserve channels");
    if (l.kind == LayerKind::AddRelu && (l.kh != 1 || l.kw != 1 || l.stride != 1 || l.padding != 0))
      report(Violation::Kind::BadLayer, i, "ADD_RELU must be 1x1, stride 1, no padding");
  }

  std::vector<int> indegree(n, 0);
  std::vector<std::vector<int>> succ(n);
  for (auto [p, c] : g.edges) {
    if (c < 0 || c >= n || p < kNetworkInput || p >= n) {
      out.push_back({Violation::Kind::BadEdge, c,
                     "edge (" + std::to_string(p) + "," + std::to_string(c) + ") references unknown layer"});
      continue;
    }
    ++indegree[c];
    if (p != kNetworkInput) succ[p].push_back(c);

    const auto& cons = g.layers[c];
    int pc = g.input.c, ph = g.input.h, pw = g.input.w;
    if (p != kNetworkInput) {
      pc = g.layers[p].cout;
      ph = g.layers[p].out_h;
      pw = g.layers[p].out_w;
    }
    if (pc != cons.cin || ph != cons.in_h || pw != cons.in_w) {
      std::ostringstream os;
      os << "input " << cons.cin << "x" << cons.in_h << "x" << cons.in_w << " does not match producer "
         << p << " output " << pc << "x" << ph << "x" << pw;
      report(Violation::Kind::ShapeMismatch, c, os.str());
    }
  }

  for (int i = 0; i < n; ++i) {
    if (indegree[i] == 0) {
      report(Violation::Kind::MissingInput, i, "no incoming edge");
    } else if (g.layers[i].kind == LayerKind::AddRelu && indegree[i] != 2) {
      report(Violation::Kind::Arity, i, "ADD_RELU needs exactly 2 inputs, has " + std::to_string(indegree[i]));
    } else if (g.layers[i].kind != LayerKind::AddRelu && indegree[i] != 1) {
      report(Violation::Kind::Arity, i, "expects 1 input, has " + std::to_string(indegree[i]));
    }
  }

  // Kahn's algorithm over layer-to-layer edges.
  std::vector<int> deg(n, 0);
  for (int i = 0; i < n; ++i)
    for (int c : succ[i]) ++deg[c];
  std::queue<int> ready;
  for (int i = 0; i < n; ++i)
    if (deg[i] == 0) ready.push(i);
  int seen = 0;
  while (!ready.empty()) {
    int v = ready.front();
    ready.pop();
    ++seen;
    for (int c : succ[v])
      if (--deg[c] == 0) ready.push(c);
  }
  if (seen != n) out.push_back({Violation::Kind::Cycle, -1, "graph contains a cycle"});
  for (auto [p, c] : g.edges)
    if (p != kNetworkInput && p >= c && p < n && c >= 0 && c < n)
      report(Violation::Kind::BadEdge, c, "edge from " + std::to_string(p) + " is not in graph order");
  return out;
}

namespace {

struct GraphBuilder {
  CnnGraph g;

  int add(LayerKind kind, std::string name, int cout, int k, int stride, int pad, std::vector<int> inputs) {
    LayerSpec l;
    l.id = static_cast<int>(g.layers.size());
    l.kind = kind;
    l.name = std::move(name);
    const int src = inputs.front();
    if (src == kNetworkInput) {
      l.cin = g.input.c;
      l.in_h = g.input.h;
      l.in_w = g.input.w;
    } else {
      l.cin = g.layers[src].cout;
      l.in_h = g.layers[src].out_h;
      l.in_w = g.layers[src].out_w;
    }
    l.cout = (kind == LayerKind::Pool || kind == LayerKind::AddRelu) ? l.cin : cout;
    l.kh = l.kw = k;
    l.stride = stride;
    l.padding = pad;
    l.out_h = conv_out_dim(l.in_h, k, stride, pad);
    l.out_w = conv_out_dim(l.in_w, k, stride, pad);
    l.bytes_per_element = g.bytes_per_element;
    g.layers.push_back(l);
    for (int in : inputs) g.edges.emplace_back(in, l.id);
    return l.id;
  }
};

}  // namespace

CnnGraph build_resnet18(int input_h, int input_w, int bytes_per_element) {
  if (input_h <= 0 || input_w <= 0) throw Error("input extents must be positive");
  if (bytes_per_element <= 0) throw Error("bytes_per_element must be positive");
  GraphBuilder b;
  b.g.name = "resnet18";
  b.g.input = {3, input_h, input_w};
  b.g.bytes_per_element = bytes_per_element;

  int x = b.add(LayerKind::ConvBnRelu, "conv1", 64, 7, 2, 3, {kNetworkInput});
  x = b.add(LayerKind::Pool, "maxpool", 0, 3, 2, 1, {x});

  const int widths[] = {64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    for (int block = 0; block < 2; ++block) {
      const std::string pre = "layer" + std::to_string(stage + 1) + "." + std::to_string(block) + ".";
      const bool down = stage > 0 && block == 0;
      const int stride = down ? 2 : 1;
      int a = b.add(LayerKind::ConvBnRelu, pre + "conv1", widths[stage], 3, stride, 1, {x});
      a = b.add(LayerKind::ConvBn, pre + "conv2", widths[stage], 3, 1, 1, {a});
      int skip = x;
      if (down) skip = b.add(LayerKind::ConvBn, pre + "downsample", widths[stage], 1, 2, 0, {x});
      x = b.add(LayerKind::AddRelu, pre + "add", 0, 1, 1, 0, {a, skip});
    }
  }
  const int last_w = b.g.layers[x].out_w;
  x = b.add(LayerKind::Pool, "avgpool", 0, b.g.layers[x].out_h, 1, 0, {x});
  b.g.layers[x].kw = last_w;
  b.g.layers[x].out_w = 1;
  b.add(LayerKind::ConvBn, "fc", 1000, 1, 1, 0, {x});
  return b.g;
}

CnnGraph graph_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("workload parse error: ") + e.what());
  }
  try {
    CnnGraph g;
    g.name = j.value("name", "workload");
    g.bytes_per_element = j.value("bytes_per_element", 1);
    auto in = j.at("input");
    g.input = {in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
    if (j.contains("edges"))
      for (const auto& e : j.at("edges")) g.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());

    const auto& layers = j.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& jl = layers[i];
      LayerSpec l;
      l.id = jl.value("id", static_cast<int>(i));
      if (l.id != static_cast<int>(i)) throw Error("layer ids must be 0..n-1 in order");
      l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
      l.name = jl.value("name", "");
      if (jl.contains("k")) {
        const auto& k = jl.at("k");
        if (k.is_array()) {
          l.kh = k.at(0).get<int>();
          l.kw = k.at(1).get<int>();
        } else {
          l.kh = l.kw = k.get<int>();
        }
      }
      l.stride = jl.value("stride", 1);
      l.padding = jl.value("pad", 0);
      l.bytes_per_element = g.bytes_per_element;

      int src = kNetworkInput;
      bool has_edge = false;
      for (auto [p, c] : g.edges)
        if (c == l.id) {
          if (!has_edge) src = p;
          has_edge = true;
        }
      if (!has_edge) g.edges.emplace_back(kNetworkInput, l.id);
      if (src == kNetworkInput) {
        l.in_h = g.input.h;
        l.in_w = g.input.w;
      } else {
        if (src < 0 || src >= l.id) throw Error("layer " + std::to_string(l.id) + " consumes a later layer");
        l.in_h = g.layers[src].out_h;
        l.in_w = g.layers[src].out_w;
      }
      const int src_c = src == kNetworkInput ? g.input.c : g.layers[src].cout;
      l.cin = jl.value("cin", src_c);
      l.cout = jl.value("cout", l.cin);
      l.out_h = conv_out_dim(l.in_h, l.kh, l.stride, l.padding);
      l.out_w = conv_out_dim(l.in_w, l.kw, l.stride, l.padding);
      g.layers.push_back(l);
    }
    std::stable_sort(g.edges.begin(), g.edges.end(), [](auto a, auto b) { return a.second < b.second; });
    return g;
  } catch (const json::exception& e) {
    throw Error(std::string("workload schema error: ") + e.what());
  }
}

CnnGraph load_workload(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open workload file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return graph_from_json(ss.str());
}

std::string graph_to_json(const CnnGraph& g) {
  json j;
  j["name"] = g.name;
  j["input"] = {g.input.c, g.input.h, g.input.w};
  j["bytes_per_element"] = g.bytes_per_element;
  j["layers"] = json::array();
  for (const auto& l : g.layers) {
    j["layers"].push_back({{"id", l.id},
                           {"kind", to_string(l.kind)},
                           {"name", l.name},
                           {"cin", l.cin},
                           {"cout", l.cout},
                           {"k", {l.kh, l.kw}},
                           {"stride", l.stride},
                           {"pad", l.padding}});
  }
  j["edges"] = json::array();
  for (auto [p, c] : g.edges) j["edges"].push_back({p, c});
  return j.dump(2);
}

FusionPlan layer_by_layer_plan(const CnnGraph& g) {
  FusionPlan plan;
  for (const auto& l : g.layers) plan.tail_layers.push_back(l.id);
  return plan;
}

FusionPlan default_fusion_plan(const CnnGraph& g, int num_pimcores, LayerCounting counting) {
  std::vector<int> sizes;
  int tiles = 0;
  if (num_pimcores == 16) {
    sizes = {8, 7};
    tiles = 4;
  } else if (num_pimcores == 4) {
    sizes = {8, 7, 7};
    tiles = 2;
  } else {
    throw Error("default fusion plan supports 4 or 16 PIMcores, got " + std::to_string(num_pimcores));
  }

  const int n = static_cast<int>(g.layers.size());
  FusionPlan plan;
  int next = 0;
  for (int size : sizes) {
    if (next >= n) break;
    FusedKernel k;
    k.tiles_x = k.tiles_y = tiles;
    int counted = 0;
    while (counted < size) {
      if (next >= n)
        throw Error("graph too short for a " + std::to_string(size) + "-layer fused kernel");
      const bool counts = counting == LayerCounting::CountPool || g.layers[next].kind != LayerKind::Pool;
      k.layer_ids.push_back(next++);
      if (counts) ++counted;
    }
    if (counting == LayerCounting::SkipPool)
      while (next < n && g.layers[next].kind == LayerKind::Pool) k.layer_ids.push_back(next++);
    plan.kernels.push_back(std::move(k));
  }
  for (int i = next; i < n; ++i) plan.tail_layers.push_back(i);
  return plan;
}

std::vector<std::string> check_plan(const CnnGraph& g, const FusionPlan& plan) {
  std::vector<std::string> out;
  const int n = static_cast<int>(g.layers.size());
  std::vector<int> seen(n, 0);
  auto mark = [&](int id) {
    if (id < 0 || id >= n)
      out.push_back("plan references unknown layer " + std::to_string(id));
    else
      ++seen[id];
  };
  for (std::size_t k = 0; k < plan.kernels.size(); ++k) {
    const auto& ids = plan.kernels[k].layer_ids;
    if (ids.empty()) out.push_back("kernel " + std::to_string(k) + " is empty");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      mark(ids[i]);
      if (i > 0 && ids[i] != ids[i - 1] + 1)
        out.push_back("kernel " + std::to_string(k) + " is not a contiguous run");
    }
    if (plan.kernels[k].tiles_x <= 0 || plan.kernels[k].tiles_y <= 0)
      out.push_back("kernel " + std::to_string(k) + " has non-positive tiling");
  }
  for (int id : plan.tail_layers) mark(id);
  for (int i = 0; i < n; ++i)
    if (seen[i] != 1)
      out.push_back("layer " + std::to_string(i) + " appears " + std::to_string(seen[i]) + " times in plan");
  return out;
}

std::string plan_to_json(const FusionPlan& plan) {
  json j;
  j["kernels"] = json::array();
  for (const auto& k : plan.kernels)
    j["kernels"].push_back({{"layers", k.layer_ids}, {"tiles", {k.tiles_x, k.tiles_y}}});
  j["tail"] = plan.tail_layers;
  return j.dump();
}

FusionPlan plan_from_json(const std::string& text) {
  try {
    auto j = json::parse(text);
    FusionPlan plan;
    for (const auto& jk : j.at("kernels")) {
      FusedKernel k;
      k.layer_ids = jk.at("layers").get<std::vector<int>>();
      k.tiles_x = jk.at("tiles").at(0).get<int>();
      k.tiles_y = jk.at("tiles").at(1).get<int>();
      plan.kernels.push_back(std::move(k));
    }
    plan.tail_layers = j.value("tail", std::vector<int>{});
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("plan parse error: ") + e.what());
  }
}

}  // namespace pimfused
