#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pimfused {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LayerKind { ConvBn, ConvBnRelu, Pool, AddRelu };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

inline bool is_conv(LayerKind k) { return k == LayerKind::ConvBn || k == LayerKind::ConvBnRelu; }

// Sentinel producer id for the network input tensor.
inline constexpr int kNetworkInput = -1;

struct LayerSpec {
  int id = 0;
  LayerKind kind = LayerKind::ConvBnRelu;
  std::string name;
  int cin = 0;
  int cout = 0;
  int kh = 1;
  int kw = 1;
  int stride = 1;
  int padding = 0;
  int in_h = 0;
  int in_w = 0;
  int out_h = 0;
  int out_w = 0;
  int bytes_per_element = 1;

  std::int64_t output_bytes() const {
    return std::int64_t(cout) * out_h * out_w * bytes_per_element;
  }
  std::int64_t input_bytes() const {
    return std::int64_t(cin) * in_h * in_w * bytes_per_element;
  }
  std::int64_t weight_bytes() const {
    return is_conv(kind) ? std::int64_t(cout) * cin * kh * kw * bytes_per_element : 0;
  }
  // Multiply-accumulates for CONV kinds, zero otherwise.
  std::int64_t macs() const;
  // Elementary operations: MACs for CONV, window compares for POOL, adds for ADD_RELU.
  std::int64_t ops() const;
};

// out = floor((in + 2*pad - k) / stride) + 1
int conv_out_dim(int in, int k, int stride, int pad);

struct TensorShape {
  int c = 0;
  int h = 0;
  int w = 0;
};

struct CnnGraph {
  std::string name;
  TensorShape input;
  int bytes_per_element = 1;
  std::vector<LayerSpec> layers;
  std::vector<std::pair<int, int>> edges;  // (producer, consumer); producer may be kNetworkInput

  const LayerSpec& layer(int id) const;
  std::vector<int> producers(int id) const;
  std::vector<int> consumers(int id) const;  // kNetworkInput allowed as id
  std::int64_t total_macs() const;

  // Layers [0, count) with edges restricted to them.
  CnnGraph truncated(int count) const;
};

struct Violation {
  enum class Kind { Cycle, MissingInput, Arity, ShapeMismatch, BadLayer, BadEdge };
  Kind kind;
  int layer = 0;
  std::string message;
};

std::vector<Violation> validate_graph(const CnnGraph& g);

CnnGraph build_resnet18(int input_h = 224, int input_w = 224, int bytes_per_element = 1);

// JSON workload schema:
// {"name":..., "input":[c,h,w], "layers":[{"id","kind","cin","cout","k":[kh,kw],"stride","pad"}], "edges":[[p,c],...]}
// Spatial extents are propagated from "input" along the edges. Producer -1 denotes the network input;
// layers with no listed producer consume the network input.
CnnGraph graph_from_json(const std::string& text);
CnnGraph load_workload(const std::filesystem::path& path);
std::string graph_to_json(const CnnGraph& g);

struct FusedKernel {
  std::vector<int> layer_ids;  // contiguous run in graph order
  int tiles_x = 1;
  int tiles_y = 1;
};

struct FusionPlan {
  std::vector<FusedKernel> kernels;
  std::vector<int> tail_layers;  // executed layer-by-layer

  bool empty() const { return kernels.empty(); }
};

// How "the first N layers" are counted when sizing fused kernels.
enum class LayerCounting {
  CountPool,  // POOL layers count toward a kernel's size
  SkipPool,   // POOL layers ride along with their producer and are not counted
};

// Everything layer-by-layer.
FusionPlan layer_by_layer_plan(const CnnGraph& g);

// Fused16 (16 PIMcores): kernels of 8 and 7 layers tiled 4x4.
// Fused4 (4 PIMcores): kernels of 8, 7 and 7 layers tiled 2x2.
// Remaining layers run layer-by-layer.
FusionPlan default_fusion_plan(const CnnGraph& g, int num_pimcores,
                               LayerCounting counting = LayerCounting::CountPool);

// Checks partition and contiguity; returns violations as text (empty if valid).
std::vector<std::string> check_plan(const CnnGraph& g, const FusionPlan& plan);

std::string plan_to_json(const FusionPlan& plan);
FusionPlan plan_from_json(const std::string& text);

}  // namespace pimfused
