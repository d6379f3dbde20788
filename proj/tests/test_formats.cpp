#include <doctest.h>

#include <filesystem>
#include <stdexcept>
#include <fstream>

#include "raydet/config.hpp"
#include "raydet/errors.hpp"
#include "raydet/mapio.hpp"
#include "raydet/rng.hpp"

using namespace raydet;

TEST_SUITE("formats") {

TEST_CASE("map files round trip bit-exactly") {
  Rng rng(80, streams::kTestData);
  std::vector<double> data(5 * 7 * 3);
  for (double& v : data) v = rng.uniform(-10, 10);
  MapFile m = MapFile::wrap(5, 7, 3, data);
  auto path = std::filesystem::temp_directory_path() / "raydet_map_test.map";
  m.save(path.string());
  MapFile back = MapFile::load(path.string());
  CHECK(back.height == 5);
  CHECK(back.width == 7);
  CHECK(back.channels == 3);
  REQUIRE(back.data.size() == data.size());
  for (std::size_t k = 0; k < data.size(); ++k) CHECK(back.data[k] == data[k]);
}

TEST_CASE("map loader validates magic and payload length") {
  auto path = std::filesystem::temp_directory_path() / "raydet_map_bad.map";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTAMAP!";
  }
  CHECK_THROWS_AS(MapFile::load(path.string()), io_error);
  CHECK_THROWS_AS(MapFile::wrap(2, 2, 1, std::vector<double>(5)),
                  std::invalid_argument);
}

TEST_CASE("config parsing handles comments, spacing and types") {
  KeyValueConfig cfg = KeyValueConfig::parse_text(
      "# a comment\n"
      "iters = 120   # trailing comment\n"
      "lr=0.5\n"
      "  strategy =  lnis \n"
      "fine = on\n"
      "\n");
  CHECK(cfg.get_int("iters", 0) == 120);
  CHECK(cfg.get_double("lr", 0) == 0.5);
  CHECK(cfg.get_string("strategy", "") == "lnis");
  CHECK(cfg.get_bool("fine", false) == true);
  CHECK(cfg.get_int("missing", 7) == 7);
}

TEST_CASE("config parse errors carry the line number") {
  try {
    KeyValueConfig::parse_text("a = 1\nnot a pair\n", "test.cfg");
    CHECK(false);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("test.cfg:2") != std::string::npos);
  }
  CHECK_THROWS_AS(KeyValueConfig::parse_text("x = abc\n").get_int("x", 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(KeyValueConfig::parse_text("x = maybe\n").get_bool("x", false),
                  std::invalid_argument);
}

TEST_CASE("counter rng: streams are independent and restorable") {
  Rng a(5, 1), b(5, 2);
  CHECK(a.next_u64() != b.next_u64());

  Rng c(5, 1);
  std::vector<std::uint64_t> first;
  for (int i = 0; i < 10; ++i) first.push_back(c.next_u64());
  std::uint64_t base = c.base();
  std::uint64_t counter = c.counter();
  for (int i = 0; i < 5; ++i) c.next_u64();
  c.restore(base, counter);
  Rng d(5, 1);
  for (int i = 0; i < 10; ++i) d.next_u64();
  for (int i = 0; i < 5; ++i) CHECK(c.next_u64() == d.next_u64());

  // doubles stay in [0, 1)
  Rng e(9, 3);
  for (int i = 0; i < 1000; ++i) {
    double v = e.next_double();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

}  // TEST_SUITE
