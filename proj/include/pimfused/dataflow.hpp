#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pimfused/arch.hpp"
#include "pimfused/workload.hpp"

namespace pimfused {

// Half-open pixel/channel box in the output map of `layer_id` (kNetworkInput for the network input).
struct TileRegion {
  int layer_id = kNetworkInput;
  int x0 = 0, x1 = 0;
  int y0 = 0, y1 = 0;
  int c0 = 0, c1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  int channels() const { return c1 - c0; }
  std::int64_t pixels() const { return std::int64_t(width()) * height(); }
  std::int64_t elements() const { return pixels() * channels(); }
  bool empty() const { return x1 <= x0 || y1 <= y0 || c1 <= c0; }

  bool operator==(const TileRegion&) const = default;
};

TileRegion intersect(const TileRegion& a, const TileRegion& b);
TileRegion bounding_union(const TileRegion& a, const TileRegion& b);

// Minimal input box (in the layer's input map) that computes `out`. Throws Error when `out` is
// outside the output map, or InfeasiblePlan when the receptive field clamps to nothing.
TileRegion backprop_tile(const TileRegion& out, const LayerSpec& layer);

class InfeasiblePlan : public Error {
 public:
  using Error::Error;
};

// Splits [0, n) into `parts` ranges of ceil(n/parts); the last takes the remainder.
std::vector<std::pair<int, int>> split_ceil(int n, int parts);
// Splits [0, n) into `parts` ranges whose sizes differ by at most one.
std::vector<std::pair<int, int>> split_balanced(int n, int parts);

enum class Placement { Lbuf, LocalBank };

// How a tensor is spread over the banks.
struct Layout {
  enum class Kind { RowInterleaved, CoutSliced, Spatial };
  Kind kind = Kind::RowInterleaved;
  // RowInterleaved: map row y (all channels) lives in bank y mod num_banks.
  // CoutSliced: channel range per PIMcore. Spatial: pixel box per PIMcore (all channels).
  std::vector<TileRegion> owned;
};

struct BankPiece {
  int bank = 0;
  std::int64_t bytes = 0;
};

// Bytes of `region` held by each bank (banks with nothing are omitted), ordered by bank.
std::vector<BankPiece> bank_pieces(const Layout& layout, const TileRegion& region, const ArchConfig& arch,
                                   int bytes_per_element);
// Bytes of `region` already in the banks of `core`.
std::int64_t local_bytes(const Layout& layout, const TileRegion& region, int core, const ArchConfig& arch,
                         int bytes_per_element);

struct LayerTile {
  TileRegion out;                 // region of this layer's output the core computes
  std::vector<TileRegion> inputs;  // one per producer, in graph edge order
};

struct CoreSchedule {
  std::vector<LayerTile> layers;                 // parallel to FusedKernel::layer_ids
  std::map<int, TileRegion> boundary_inputs;     // tensors produced outside the kernel
  std::map<int, TileRegion> tensors;             // every tensor region the core holds
};

struct FusedTileSchedule {
  FusedKernel kernel;
  std::vector<CoreSchedule> cores;
  std::map<int, Placement> placement;     // per tensor produced inside the kernel
  std::vector<int> exported;              // tensors consumed outside the kernel
  std::int64_t lbuf_peak_bytes = 0;       // LBUF-resident live set high-water mark (per core)
  std::int64_t spill_bytes = 0;           // intermediate bytes written to local banks, summed over cores
};

struct LayerByLayerSchedule {
  int layer_id = 0;
  std::vector<std::pair<int, int>> cout_ranges;  // per PIMcore
  std::int64_t weight_bytes_per_core = 0;        // largest slice
  std::int64_t output_bytes_per_core = 0;
};

// A GBUF-sized slab of a layer's input feeding a contiguous band of output rows.
struct ActWindow {
  int out_row0 = 0, out_row1 = 0;  // output rows the window contributes to
  int in_row0 = 0, in_row1 = 0;    // input rows resident for this window
  int c0 = 0, c1 = 0;              // input channel group
  int fetch_row0 = 0;              // first row not already resident from the previous window
  bool first_group = true;
  bool last_group = true;
};

// Input windows for a layer streamed through a GBUF of `capacity` bytes. `inputs` is the number of
// input tensors (2 for ADD_RELU); `with_output` reserves room for the window's output (GBcore layers).
// Channel groups form the outer loop; within a group, consecutive row bands keep overlapping rows.
// `max_group` caps the input channels per group (0 = no cap).
std::vector<ActWindow> plan_act_windows(const LayerSpec& layer, std::int64_t capacity, int inputs,
                                        bool with_output, int max_group = 0);

FusedTileSchedule plan_fused_kernel(const CnnGraph& g, const FusedKernel& kernel, const ArchConfig& arch);
LayerByLayerSchedule plan_layer_by_layer(const LayerSpec& layer, const ArchConfig& arch);

// Extra bytes of tensors produced inside the kernel caused by halos, relative to their unique bytes.
double duplication_factor(const FusedTileSchedule& s, const CnnGraph& g);
// Same ratio for the kernel's boundary inputs (the data each PIMcore loads from outside).
double input_replication(const FusedTileSchedule& s, const CnnGraph& g);
// Extra MACs over nominal MACs.
double redundancy_factor(const FusedTileSchedule& s, const CnnGraph& g);

// Weight chunk geometry for fused layers: whole filters per GBUF fill when they fit.
struct WeightChunking {
  std::int64_t chunk_bytes = 0;
  int couts_per_chunk = 0;  // 0 when a single filter exceeds the GBUF
  int chunks = 0;
};
WeightChunking weight_chunking(const LayerSpec& layer, std::int64_t gbuf_bytes);

// Bank layout of every tensor after executing `plan` (index kNetworkInput for the input).
std::map<int, Layout> tensor_layouts(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch);

// Abstract data movement and compute produced by mapping a plan onto the machine. The trace
// generator lowers each step to commands; the metrics below are computed from the same steps.
enum class StepOp { BankToGbuf, GbufToBank, BankToLbuf, LbufToBank, PimCompute, GbCompute };
enum class StepRole { Act, Weight, Reorg, Out, Spill, Compute };

const char* to_string(StepRole role);

struct Step {
  StepOp op = StepOp::PimCompute;
  StepRole role = StepRole::Compute;
  int layer = 0;
  bool reorg_segment = false;  // kernel-entry reorganization runs before the layer itself
  int window = 0;
  int bank = -1;               // concrete bank for GBUF transfers, -1 = all banks
  int tensor = kNetworkInput;  // activation tensor (producer id) or layer id for weights
  bool weights = false;
  std::int64_t bytes = 0;      // per bank for all-bank transfers
  std::int64_t granule = 0;    // max bytes per command
  std::int64_t repeat = 1;     // identical re-reads of the same bytes
  std::int64_t ops = 0;        // per PIMcore (PimCompute) or total (GbCompute)
  std::vector<LayerKind> flags;
};

struct ExecutionPlan {
  std::vector<Step> steps;
  std::vector<FusedTileSchedule> kernels;
  std::vector<LayerByLayerSchedule> tail;
  std::map<int, Layout> layouts;
};

ExecutionPlan build_execution(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch);

// Payload bytes after rounding each command up to whole bursts (matches the generated trace).
std::int64_t step_payload_bytes(const Step& s, const ArchConfig& arch);

struct LayerMetrics {
  int layer_id = 0;
  bool fused = false;
  std::int64_t macs = 0;            // nominal
  std::int64_t executed_macs = 0;   // including redundant halo work
  std::int64_t cross_bank_bytes = 0;
  std::int64_t spill_bytes = 0;
};

struct DataflowMetrics {
  double replication_ratio = 0;
  double redundancy_ratio = 0;
  std::int64_t cross_bank_bytes = 0;
  std::int64_t lbuf_spill_bytes = 0;
  std::int64_t intermediate_tile_bytes = 0;
  std::int64_t nominal_macs = 0;
  std::int64_t executed_macs = 0;
  std::int64_t near_bank_bytes = 0;
  std::vector<LayerMetrics> layers;
  std::vector<double> kernel_replication;
  std::vector<double> kernel_redundancy;
};

DataflowMetrics analyze(const CnnGraph& g, const FusionPlan& plan, const ArchConfig& arch);
std::string metrics_to_json(const DataflowMetrics& m);

}  // namespace pimfused
