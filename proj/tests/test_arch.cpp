#include <cmath>
#include <fstream>

#include "doctest.h"
#include "pimfused/arch.hpp"

using namespace pimfused;

TEST_SUITE("arch") {
  TEST_CASE("defaults validate and round trip through TOML") {
    const ArchConfig a = default_arch();
    CHECK_NOTHROW(validate(a));
    CHECK(a.num_pimcores() == 16);
    CHECK(a.timing.tRCD == 18);
    CHECK(a.timing.tCL == 20);
    CHECK(a.burst_bytes == 32);
    CHECK(a.energy.near_bank_access_fraction == doctest::Approx(0.40));
    CHECK(config_from_toml(config_to_toml(a)) == a);
  }

  TEST_CASE("partial TOML keeps the base values") {
    const ArchConfig a = config_from_toml("lbuf_bytes = 256\n[timing]\ntCL = 30\n");
    CHECK(a.lbuf_bytes == 256);
    CHECK(a.timing.tCL == 30);
    CHECK(a.timing.tRCD == default_arch().timing.tRCD);
    CHECK(a.gbuf_bytes == default_arch().gbuf_bytes);
  }

  TEST_CASE("invalid configs are rejected with the field name") {
    CHECK_THROWS_AS(config_from_toml("num_banks = 0\n"), Error);
    CHECK_THROWS_AS(config_from_toml("num_banks = 16\nbanks_per_pimcore = 3\n"), Error);
    CHECK_THROWS_AS(config_from_toml("[timing]\ntCCD = -1\n"), Error);
    CHECK_THROWS_AS(config_from_toml("gbuf_bytes = \"big\"\n"), Error);
    CHECK_THROWS_AS(config_from_toml("this is = = not toml"), Error);
    try {
      config_from_toml("burst_bytes = 0\n");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("burst_bytes") != std::string::npos);
    }
  }

  TEST_CASE("buffer labels") {
    CHECK(parse_buffer_label("G2K_L0").gbuf_bytes == 2048);
    CHECK(parse_buffer_label("G2K_L0").lbuf_bytes == 0);
    CHECK(parse_buffer_label("G32K_L256").gbuf_bytes == 32768);
    CHECK(parse_buffer_label("G32K_L256").lbuf_bytes == 256);
    CHECK(parse_buffer_label("G64K_L100K").lbuf_bytes == 102400);
    CHECK_THROWS_AS(parse_buffer_label("G32_L256"), Error);
    CHECK_THROWS_AS(parse_buffer_label("L256"), Error);
    CHECK_THROWS_AS(parse_buffer_label("G0K_L0"), Error);
    const ArchConfig a = named_config("G8K_L64", default_arch());
    CHECK(a.gbuf_bytes == 8192);
    CHECK(a.lbuf_bytes == 64);
    CHECK(a.timing == default_arch().timing);
  }

  TEST_CASE("log-linear capacity interpolation") {
    const CapacityTable t{{64, 1.0}, {1024, 5.0}};
    CHECK(interpolate_capacity(t, 64) == doctest::Approx(1.0));
    CHECK(interpolate_capacity(t, 1024) == doctest::Approx(5.0));
    // 256 is halfway between 64 and 1024 in log space.
    CHECK(interpolate_capacity(t, 256) == doctest::Approx(3.0));
    CHECK(interpolate_capacity(t, 128) == doctest::Approx(2.0));
    // Monotone between anchors.
    double prev = 0.0;
    for (double c = 64; c <= 1024; c *= 1.1) {
      const double v = interpolate_capacity(t, c);
      CHECK(v >= prev);
      prev = v;
    }
  }

  TEST_CASE("timing scale") {
    const ArchConfig a = default_arch();
    const ArchConfig up = scale_timing(a, 1.25);
    CHECK(up.timing.tRCD == static_cast<int>(std::lround(18 * 1.25)));
    CHECK(up.timing.tCL == 25);
    CHECK(up.timing.pim_cmd_issue_cycles == a.timing.pim_cmd_issue_cycles);
    const ArchConfig down = scale_timing(a, 0.75);
    CHECK(down.timing.tCL == 15);
    CHECK(down.timing.tCCD >= 1);
    CHECK(scale_timing(a, 0.01).timing.tCCD == 1);
  }

  TEST_CASE("digest covers timing and buffers but not energy or area") {
    const ArchConfig a = default_arch();
    CHECK(arch_digest(a) == arch_digest(default_arch()));
    CHECK(arch_digest(a).size() == 64);
    ArchConfig b = a;
    b.timing.tCL += 1;
    CHECK(arch_digest(b) != arch_digest(a));
    ArchConfig c = a;
    c.lbuf_bytes = 64;
    CHECK(arch_digest(c) != arch_digest(a));
    ArchConfig d = a;
    d.energy.near_bank_access_fraction = 1.0;
    d.area.bus_mm2 *= 2;
    CHECK(arch_digest(d) == arch_digest(a));
  }

  TEST_CASE("sha256 known vector") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("shipped default config matches the built-in defaults") {
    std::ifstream probe(PIMFUSED_SOURCE_DIR "/configs/default_arch.toml");
    REQUIRE(probe.good());
    CHECK(load_config(PIMFUSED_SOURCE_DIR "/configs/default_arch.toml") == default_arch());
  }
}
