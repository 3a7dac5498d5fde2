#include <algorithm>
#include <random>

#include "doctest.h"
#include "pimfused/workload.hpp"

using namespace pimfused;

namespace {

// Count valid window starts by enumeration.
int window_positions(int in, int k, int stride, int pad) {
  int n = 0;
  for (int start = -pad; start + k <= in + pad; start += stride) ++n;
  return n;
}

std::int64_t conv_macs(std::int64_t oh, std::int64_t ow, std::int64_t cout, std::int64_t cin, std::int64_t k) {
  return oh * ow * cout * cin * k * k;
}

bool has_kind(const std::vector<Violation>& v, Violation::Kind k) {
  return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.kind == k; });
}

}  // namespace

TEST_SUITE("workload") {
  TEST_CASE("conv_out_dim matches window enumeration") {
    for (int in = 1; in <= 32; ++in)
      for (int k = 1; k <= 7; ++k)
        for (int s = 1; s <= 4; ++s)
          for (int p = 0; p <= 3; ++p) {
            CAPTURE(in);
            CAPTURE(k);
            CAPTURE(s);
            CAPTURE(p);
            CHECK(conv_out_dim(in, k, s, p) == window_positions(in, k, s, p));
          }
  }

  TEST_CASE("resnet18 structure") {
    const CnnGraph g = build_resnet18();
    CHECK(validate_graph(g).empty());
    REQUIRE(g.layers.size() == 31);
    CHECK(g.layer(0).out_h == 112);
    CHECK(g.layer(1).kind == LayerKind::Pool);
    CHECK(g.layer(1).out_h == 56);
    CHECK(g.layer(4).kind == LayerKind::AddRelu);
    CHECK(g.layer(7).kind == LayerKind::AddRelu);
    CHECK(g.layer(10).name == "layer2.0.downsample");
    CHECK(g.layer(28).out_h == 7);
    CHECK(g.layer(29).out_h == 1);
    CHECK(g.layer(30).cout == 1000);
    CHECK(g.producers(4).size() == 2);
  }

  TEST_CASE("resnet18 MAC total matches the stage table") {
    std::int64_t expected = conv_macs(112, 112, 64, 3, 7);
    expected += 4 * conv_macs(56, 56, 64, 64, 3);
    const int widths[] = {128, 256, 512};
    int hw = 28;
    for (int w : widths) {
      expected += conv_macs(hw, hw, w, w / 2, 3) + 3 * conv_macs(hw, hw, w, w, 3) + conv_macs(hw, hw, w, w / 2, 1);
      hw /= 2;
    }
    expected += 512 * 1000;
    CHECK(expected == 1814073344);
    CHECK(build_resnet18().total_macs() == expected);
    CHECK(build_resnet18().truncated(8).total_macs() == 580435968);
  }

  TEST_CASE("graph JSON round trip") {
    const CnnGraph g = build_resnet18(64, 48, 2);
    const CnnGraph back = graph_from_json(graph_to_json(g));
    REQUIRE(back.layers.size() == g.layers.size());
    CHECK(back.edges == g.edges);
    for (size_t i = 0; i < g.layers.size(); ++i) {
      CHECK(back.layers[i].out_h == g.layers[i].out_h);
      CHECK(back.layers[i].out_w == g.layers[i].out_w);
      CHECK(back.layers[i].macs() == g.layers[i].macs());
      CHECK(back.layers[i].bytes_per_element == 2);
    }
  }

  TEST_CASE("validation reports malformed graphs") {
    CnnGraph g = build_resnet18();
    g.edges.push_back({5, 2});
    CHECK(!validate_graph(g).empty());

    CnnGraph arity = build_resnet18();
    std::erase(arity.edges, std::pair<int, int>{3, 4});
    CHECK(has_kind(validate_graph(arity), Violation::Kind::Arity));

    CnnGraph shape = build_resnet18();
    shape.layers[2].cin = 32;
    CHECK(has_kind(validate_graph(shape), Violation::Kind::ShapeMismatch));

    CHECK_THROWS_AS(graph_from_json("{\"name\":\"x\"}"), Error);
    CHECK_THROWS_AS(graph_from_json("not json"), Error);
  }

  TEST_CASE("fusion plans partition the graph") {
    const CnnGraph g = build_resnet18();
    const FusionPlan f16 = default_fusion_plan(g, 16);
    REQUIRE(f16.kernels.size() == 2);
    CHECK(f16.kernels[0].layer_ids.front() == 0);
    CHECK(f16.kernels[0].layer_ids.back() == 7);
    CHECK(f16.kernels[1].layer_ids.back() == 14);
    CHECK(f16.kernels[0].tiles_x * f16.kernels[0].tiles_y == 16);
    CHECK(check_plan(g, f16).empty());

    const FusionPlan f4 = default_fusion_plan(g, 4);
    REQUIRE(f4.kernels.size() == 3);
    CHECK(f4.kernels[2].layer_ids.back() == 21);
    CHECK(f4.kernels[0].tiles_x * f4.kernels[0].tiles_y == 4);
    CHECK(check_plan(g, f4).empty());

    const FusionPlan lbl = layer_by_layer_plan(g);
    CHECK(lbl.empty());
    CHECK(lbl.tail_layers.size() == 31);

    FusionPlan bad = f16;
    bad.tail_layers.pop_back();
    CHECK(!check_plan(g, bad).empty());
    FusionPlan dup = f16;
    dup.tail_layers.push_back(3);
    CHECK(!check_plan(g, dup).empty());

    const FusionPlan back = plan_from_json(plan_to_json(f4));
    CHECK(back.tail_layers == f4.tail_layers);
    REQUIRE(back.kernels.size() == 3);
    CHECK(back.kernels[1].layer_ids == f4.kernels[1].layer_ids);
  }

  TEST_CASE("SkipPool counting lets pooling ride along") {
    const CnnGraph g = build_resnet18();
    const FusionPlan p = default_fusion_plan(g, 16, LayerCounting::SkipPool);
    CHECK(check_plan(g, p).empty());
    REQUIRE(!p.kernels.empty());
    CHECK(p.kernels[0].layer_ids.size() >= 8);
  }

  TEST_CASE("property: random input extents keep resnet18 valid") {
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> dim(32, 256);
    for (int i = 0; i < 20; ++i) {
      const int h = dim(rng), w = dim(rng);
      CAPTURE(h);
      CAPTURE(w);
      const CnnGraph g = build_resnet18(h, w);
      CHECK(validate_graph(g).empty());
      CHECK(g.layer(0).out_h == window_positions(h, 7, 2, 3));
    }
  }
}
