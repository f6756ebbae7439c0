#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "synthtrack/core.hpp"

using namespace synthtrack;

namespace {

std::set<std::pair<int, int>> pixel_set(const std::vector<PixelCoord>& px) {
  std::set<std::pair<int, int>> s;
  for (const auto& p : px) s.insert({p.x, p.y});
  return s;
}

}  // namespace

TEST_CASE("counter rng is deterministic and splits are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

  Rng parent(7);
  Rng c1 = parent.split(1);
  Rng c2 = parent.split(2);
  REQUIRE(c1.next_u64() != c2.next_u64());

  // splitting again with the same tag gives the same child stream
  Rng c1b = parent.split(1);
  Rng c1c = parent.split(1);
  for (int i = 0; i < 10; ++i) REQUIRE(c1b.next_u64() == c1c.next_u64());
}

TEST_CASE("rng draws have sane ranges") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const auto k = rng.uniform_int(-3, 3);
    REQUIRE(k >= -3);
    REQUIRE(k <= 3);
  }
  // bernoulli(0) never fires, bernoulli(1) always does
  for (int i = 0; i < 100; ++i) {
    REQUIRE_FALSE(rng.bernoulli(0.0));
    REQUIRE(rng.bernoulli(1.0));
  }
  // gaussian mean/var sanity on a large sample
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    sum += g;
    sq += g * g;
  }
  REQUIRE(std::abs(sum / n) < 0.05);
  REQUIRE(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("disk rasterization matches the inclusive-distance definition") {
  SECTION("radius zero is a single pixel") {
    const auto px = rasterize_disk({5.0, 5.0}, 0.0);
    REQUIRE(pixel_set(px) == std::set<std::pair<int, int>>{{5, 5}});
  }
  SECTION("radius one at an integer center is a plus shape") {
    const auto px = rasterize_disk({5.0, 5.0}, 1.0);
    REQUIRE(pixel_set(px) ==
            std::set<std::pair<int, int>>{{5, 5}, {4, 5}, {6, 5}, {5, 4}, {5, 6}});
  }
  SECTION("radius one at a half-integer center is a 2x2 square") {
    const auto px = rasterize_disk({5.5, 5.5}, 1.0);
    REQUIRE(pixel_set(px) == std::set<std::pair<int, int>>{{5, 5}, {6, 5}, {5, 6}, {6, 6}});
  }
  SECTION("radius three at an integer center has 29 pixels") {
    const auto px = rasterize_disk({10.0, 10.0}, 3.0);
    REQUIRE(px.size() == 29);
    for (const auto& p : px) {
      const double dx = p.x - 10.0, dy = p.y - 10.0;
      REQUIRE(dx * dx + dy * dy <= 9.0 + 1e-12);
    }
  }
}

TEST_CASE("stick rasterization covers an oriented box") {
  SECTION("axis-aligned stick covers exactly length*width pixels") {
    const auto px = rasterize_stick({10.0, 10.0}, 10.0, 2.0, 0.0);
    REQUIRE(px.size() == 20);
  }
  SECTION("rotating by 90 degrees transposes the footprint") {
    // quarter-offset center keeps box edges away from the pixel lattice, so
    // the non-exact cos(90 deg) cannot flip boundary pixels
    const auto h = rasterize_stick({10.25, 10.25}, 10.0, 2.0, 0.0);
    const auto v = rasterize_stick({10.25, 10.25}, 10.0, 2.0, 90.0);
    REQUIRE(h.size() == v.size());
    std::set<std::pair<int, int>> transposed;
    for (const auto& p : h) transposed.insert({p.y, p.x});
    REQUIRE(pixel_set(v) == transposed);
  }
  SECTION("a 45 degree stick keeps its area within 20 percent") {
    const auto px = rasterize_stick({20.0, 20.0}, 10.0, 2.0, 45.0);
    REQUIRE(px.size() >= 16);
    REQUIRE(px.size() <= 24);
  }
  SECTION("width one sticks stay connected lines") {
    const auto px = rasterize_stick({20.0, 20.0}, 8.0, 1.0, 30.0);
    REQUIRE_FALSE(px.empty());
  }
}

TEST_CASE("center crop selects the documented window") {
  SECTION("4x4 to 2x2 keeps rows and columns 1..2") {
    LabelFrame f(4, 4, 0);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) f.at(x, y) = static_cast<Label>(y * 4 + x + 1);
    const auto c = crop_center(f, 2, 2);
    REQUIRE(c.width == 2);
    REQUIRE(c.height == 2);
    REQUIRE(c.at(0, 0) == f.at(1, 1));
    REQUIRE(c.at(1, 0) == f.at(2, 1));
    REQUIRE(c.at(0, 1) == f.at(1, 2));
    REQUIRE(c.at(1, 1) == f.at(2, 2));
  }
  SECTION("550 to 512 starts at offset 19") {
    LabelFrame f(550, 550, 0);
    f.at(19, 19) = 7;
    const auto c = crop_center(f, 512, 512);
    REQUIRE(c.at(0, 0) == 7);
  }
  SECTION("cropping to the same size is the identity") {
    LabelFrame f(6, 5, 0);
    f.at(2, 3) = 9;
    REQUIRE(crop_center(f, 6, 5) == f);
  }
  SECTION("crop commutes with integer translation") {
    LabelFrame f(20, 20, 0);
    f.at(8, 9) = 3;
    f.at(9, 9) = 3;
    LabelFrame g(20, 20, 0);
    g.at(10, 12) = 3;  // f shifted by (+2, +3)
    g.at(11, 12) = 3;
    const auto cf = crop_center(f, 12, 12);
    const auto cg = crop_center(g, 12, 12);
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        if (x + 2 < 12 && y + 3 < 12) REQUIRE(cg.at(x + 2, y + 3) == cf.at(x, y));
      }
  }
}

TEST_CASE("lineage validation enforces the track-graph contract") {
  SECTION("valid tree passes") {
    Lineage lin;
    lin.add({1, 0, 3, 0});
    lin.add({2, 4, 6, 1});
    REQUIRE_NOTHROW(lin.validate());
  }
  SECTION("duplicate ids are rejected") {
    Lineage lin;
    lin.add({1, 0, 3, 0});
    REQUIRE_THROWS(lin.add({1, 2, 4, 0}));
  }
  SECTION("birth after end is rejected") {
    Lineage lin;
    lin.add({1, 5, 3, 0});
    REQUIRE_THROWS(lin.validate());
  }
  SECTION("unknown parent is rejected") {
    Lineage lin;
    lin.add({2, 4, 6, 7});
    REQUIRE_THROWS(lin.validate());
  }
  SECTION("overlapping parent interval is rejected") {
    Lineage lin;
    lin.add({1, 0, 4, 0});
    lin.add({2, 4, 6, 1});
    REQUIRE_THROWS(lin.validate());
  }
}

TEST_CASE("invisible track pruning clips records to what is on screen") {
  LabeledVideo v;
  v.frames.assign(3, LabelFrame(4, 4, 0));
  v.frames[1].at(0, 0) = 2;
  v.frames[2].at(0, 0) = 2;
  v.lineage.add({1, 0, 2, 0});  // never visible
  v.lineage.add({2, 0, 2, 1});  // visible only from frame 1
  prune_invisible_tracks(v);
  REQUIRE(v.lineage.records.size() == 1);
  REQUIRE(v.lineage.records[0].id == 2);
  REQUIRE(v.lineage.records[0].birth == 1);
  REQUIRE(v.lineage.records[0].end == 2);
  REQUIRE(v.lineage.records[0].parent == 0);  // orphaned by the pruned parent
  REQUIRE_NOTHROW(v.lineage.validate());
}
