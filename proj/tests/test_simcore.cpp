#include <random>

#include "doctest.h"
#include "pimfused/experiment.hpp"
#include "pimfused/simcore.hpp"
#include "pimfused/trace.hpp"

using namespace pimfused;

namespace {

SimStats run_text(const std::string& text, const ArchConfig& arch = default_arch()) {
  return simulate(parse_trace_string(text), arch);
}

std::string all_bank_lbuf_trace(std::int64_t bursts) {
  return "0 ACT ALL 3 - 0 tag=L0:act:Tin:0\n"
         "1 PIM_BK2LBUF ALL 3 0 " +
         std::to_string(bursts) + " tag=L0:act:Tin:0\n";
}

}  // namespace

TEST_SUITE("simcore") {
  TEST_CASE("single two-burst RD on a closed row") {
    for (double scale : {0.75, 1.0, 1.25}) {
      const ArchConfig a = scale_timing(default_arch(), scale);
      const SimStats s = run_text("0 ACT 2 9 - 0\n1 RD 2 9 0 2\n", a);
      CHECK(s.total_cycles == a.timing.tRCD + a.timing.tCL + 2 * a.timing.tCCD);
      CHECK(s.activates == 1);
      CHECK(s.via_bus_bytes == 2 * a.burst_bytes);
    }
    CHECK(run_text("0 ACT 2 9 - 0\n1 RD 2 9 0 2\n").total_cycles == 42);
  }

  TEST_CASE("illegal commands for the bank state are rejected") {
    CHECK_THROWS_AS(run_text("0 RD 0 1 0 1\n"), Error);
    CHECK_THROWS_AS(run_text("0 ACT 0 1 - 0\n1 RD 0 2 0 1\n"), Error);
    CHECK_THROWS_AS(run_text("0 ACT 0 1 - 0\n1 ACT 0 2 - 0\n"), Error);
    CHECK_THROWS_AS(run_text("0 ACT 0 1 - 0\n1 PIM_BK2LBUF 0 1 0 1\n"), Error);
    CHECK_THROWS_AS(run_text("0 ACT ALL 1 - 0\n1 PIM_BK2GBUF ALL 1 0 1\n"), Error);
    CHECK_THROWS_AS(run_text("0 ACT 40 1 - 0\n"), Error);
    CHECK_NOTHROW(run_text("0 ACT 0 1 - 0\n1 PRE 0 - - 0\n2 ACT 0 2 - 0\n"));
  }

  TEST_CASE("reading a tensor before it is written is rejected") {
    const std::string bad =
        "0 ACT ALL 0 - 0 tag=L1:act:T0:0\n"
        "1 PIM_BK2LBUF ALL 0 0 1 tag=L1:act:T0:0\n";
    CHECK_THROWS_AS(run_text(bad), Error);
    const std::string good =
        "0 ACT ALL 0 - 0 tag=L0:out:T0:0\n"
        "1 PIM_LBUF2BK ALL 0 0 1 tag=L0:out:T0:0\n"
        "2 PIM_BK2LBUF ALL 0 0 1 tag=L1:act:T0:0\n";
    CHECK_NOTHROW(run_text(good));
  }

  TEST_CASE("GBUF transfer time is linear in bursts") {
    const ArchConfig a = default_arch();
    auto cost = [&](int bursts) {
      return run_text("0 ACT 1 0 - 0\n1 PIM_BK2GBUF 1 0 0 " + std::to_string(bursts) + "\n", a).total_cycles;
    };
    const std::int64_t c1 = cost(1), c4 = cost(4), c9 = cost(9);
    CHECK(c4 - c1 == 3 * a.timing.bus_transfer_cycles_per_burst);
    CHECK(c9 - c4 == 5 * a.timing.bus_transfer_cycles_per_burst);
    CHECK(c1 == a.timing.tRCD + a.timing.tCL + a.timing.bus_transfer_cycles_per_burst + a.timing.pim_cmd_issue_cycles);
  }

  TEST_CASE("all-bank LBUF transfers take the same time for any bank count") {
    std::int64_t reference = -1;
    for (int banks : {4, 8, 16, 32}) {
      ArchConfig a = default_arch();
      a.num_banks = banks;
      const SimStats s = run_text(all_bank_lbuf_trace(16), a);
      if (reference < 0) reference = s.total_cycles;
      CHECK(s.total_cycles == reference);
      CHECK(s.near_bank_bytes == 16 * a.burst_bytes * banks);
    }
    const ArchConfig a = default_arch();
    CHECK(reference == a.timing.tRCD + 16 * a.timing.tCCD + a.timing.pim_cmd_issue_cycles + a.timing.tCL);
  }

  TEST_CASE("compute commands use the configured throughput") {
    const ArchConfig a = default_arch();
    const SimStats s = run_text("0 PIMCORE_CMP ALL - - 1000 tag=L0:cmp:T0:0\n", a);
    const std::int64_t per_core = (1000 + a.macs_per_pimcore_per_cycle - 1) / a.macs_per_pimcore_per_cycle;
    CHECK(s.total_cycles == per_core + a.timing.pim_cmd_issue_cycles);
    CHECK(s.mac_ops == 1000 * a.num_pimcores());
    const SimStats g = run_text("0 GBCORE_CMP ALL - - 100\n", a);
    CHECK(g.total_cycles == (100 + a.gbcore_ops_per_cycle - 1) / a.gbcore_ops_per_cycle + a.timing.pim_cmd_issue_cycles);
    CHECK(g.gbcore_ops == 100);
  }

  TEST_CASE("precharge respects tRAS") {
    const ArchConfig a = default_arch();
    const SimStats s = run_text("0 ACT 0 1 - 0\n1 PRE 0 - - 0\n", a);
    CHECK(s.total_cycles == a.timing.tRAS + a.timing.tRP);
  }

  TEST_CASE("stats JSON round trip and determinism") {
    const CnnGraph g = scenario_graph(build_resnet18(), Scenario::First8, LayerCounting::CountPool);
    const SystemSetup s = configure_system(System::Fused4, g, named_config("G4K_L64", default_arch()));
    const CommandTrace t = emit_trace(s.graph, s.plan, s.arch);
    const SimStats a = simulate(t, s.arch);
    const SimStats b = simulate(t, s.arch);
    CHECK(a == b);
    CHECK(stats_from_json(stats_to_json(a)) == a);
    CHECK(a.arch_digest == arch_digest(s.arch));
    CHECK(a.mac_ops >= analyze(s.graph, s.plan, s.arch).executed_macs);
    CHECK_THROWS_AS(stats_from_json("{\"total_cycles\": \"x\"}"), Error);
  }

  TEST_CASE("property: simulated cycles never beat the analytic lower bound") {
    std::mt19937 rng(2024);
    const char* labels[] = {"G2K_L0", "G4K_L0", "G8K_L64", "G16K_L128", "G32K_L256", "G64K_L512", "G2K_L256"};
    std::uniform_int_distribution<int> pick_label(0, 6), pick_sys(0, 2), pick_dim(2, 6), pick_scale(0, 2);
    const double scales[] = {0.75, 1.0, 1.25};
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const int dim = 16 * pick_dim(rng);
      const System sys = System(pick_sys(rng));
      const std::string label = labels[pick_label(rng)];
      const double scale = scales[pick_scale(rng)];
      CAPTURE(dim);
      CAPTURE(to_string(sys));
      CAPTURE(label);
      CAPTURE(scale);
      const CnnGraph g = scenario_graph(build_resnet18(dim, dim), Scenario::First8, LayerCounting::CountPool);
      const ArchConfig arch = scale_timing(named_config(label, default_arch()), scale);
      const SystemSetup s = configure_system(sys, g, arch);
      const SimStats st = simulate(emit_trace(s.graph, s.plan, s.arch), s.arch);
      const std::int64_t bound = analytic_lower_bound(s.graph, s.plan, s.arch);
      CHECK(bound > 0);
      CHECK(st.total_cycles >= bound);
      ++checked;
    }
    CHECK(checked == 100);
  }
}
