#include "sqz/config.hpp"

#include <doctest.h>

#include <fstream>

using namespace sqz;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST_CASE("apply setting") {
  Settings s;
  apply_setting(s, "seq.compression", "60");
  CHECK(s.sim.seq.compression == 60);
  apply_setting(s, "loops.opa.gain", "1e2");
  CHECK(s.sim.seq.opa_lock.loop_gain == 100);
  apply_setting(s, "seq.loops_off", "true");
  CHECK(s.sim.seq.loops_off);
  apply_setting(s, "seq.loops_off", "0");
  CHECK_FALSE(s.sim.seq.loops_off);
  apply_setting(s, "scenario.sweep_points", "11");
  CHECK(s.scenario.sweep_points == 11);
  apply_setting(s, "lockin.detector", "square_law");
  CHECK(s.sim.lockin.detector == EnvelopeDetector::SquareLaw);

  CHECK_THROWS_AS(apply_setting(s, "seq.no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(s, "seq.tick_s", "abc"), ConfigError);
  CHECK_THROWS_AS(apply_setting(s, "seq.tick_s", "1.0x"), ConfigError);
  CHECK_THROWS_AS(apply_setting(s, "scenario.sweep_points", "2.5"), ConfigError);
  CHECK_THROWS_AS(apply_setting(s, "seq.loops_off", "maybe"), ConfigError);
  CHECK_THROWS_AS(apply_setting(s, "lockin.detector", "diode"), ConfigError);
}

TEST_CASE("split assignment") {
  auto [k, v] = split_assignment("  seq.tick_s = 0.002 ");
  CHECK(k == "seq.tick_s");
  CHECK(v == "0.002");
  CHECK_THROWS_AS(split_assignment("novalue"), ConfigError);
  CHECK_THROWS_AS(split_assignment("=3"), ConfigError);
}

TEST_CASE("config file") {
  const auto path = std::filesystem::temp_directory_path() / "sqz_test_config.cfg";
  {
    std::ofstream os(path);
    os << "# comment\n\nseq.compression = 7200\n  plant.bs2_tap=0.01   # trailing\n";
  }
  Settings s;
  load_config_file(s, path);
  CHECK(s.sim.seq.compression == 7200);
  CHECK(s.sim.plant.bs2_tap == 0.01);
  {
    std::ofstream os(path);
    os << "seq.compression = 7200\nbogus.key = 1\n";
  }
  Settings t;
  try {
    load_config_file(t, path);
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("canonical listing and hash") {
  Settings s;
  const auto listing = canonical_settings(s);
  const auto keys = config_keys();
  REQUIRE(listing.size() == keys.size());
  std::string text;
  for (std::size_t i = 0; i < listing.size(); ++i) {
    CHECK(listing[i].first == keys[i].key);
    CHECK_FALSE(keys[i].doc.empty());
    if (i > 0) CHECK(listing[i - 1].first < listing[i].first);
    text += listing[i].first + "=" + listing[i].second + "\n";
  }
  CHECK(config_hash(s) == fnv1a(text));
  CHECK(hex64(config_hash(s)).size() == 16);

  Settings t;
  CHECK(config_hash(t) == config_hash(s));
  apply_setting(t, "seq.relock_ticks", "11");
  CHECK(config_hash(t) != config_hash(s));

  // every printed value parses back to the same listing
  Settings u;
  for (const auto& [k, v] : canonical_settings(t)) apply_setting(u, k, v);
  CHECK(canonical_settings(u) == canonical_settings(t));
}

TEST_CASE("validation catches out-of-range values") {
  Settings s;
  apply_setting(s, "plant.bs2_tap", "1.5");
  CHECK_THROWS(s.sim.validate());
  Settings a;
  apply_setting(a, "seq.alignment_period_s", "1000");
  CHECK_THROWS(a.sim.validate());
  Settings b;
  apply_setting(b, "scenario.sweep_points", "1");
  CHECK_THROWS_AS(b.scenario.validate(), ConfigError);
}
