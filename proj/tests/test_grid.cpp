#include <numeric>

#include "doctest.h"
#include "punchhole/errors.hpp"
#include "punchhole/grid.hpp"
#include "test_support.hpp"

using namespace punchhole;
using punchhole::testing::as_set;

TEST_CASE("partition examples") {
  auto g = partition(64, 64, 16);
  CHECK(g.level == 0);
  CHECK(g.rows == 4);
  CHECK(g.cols == 4);
  CHECK(g.patch_side == 16);

  g = partition(65, 64, 16);
  CHECK(g.rows == 4);
  CHECK(g.cols == 5);
  for (int row = 0; row < 4; ++row) CHECK(g.rect({0, row, 4}).w == 1);

  g = partition(800, 600, 100);
  CHECK(g.rows == 6);
  CHECK(g.cols == 8);
  CHECK(g.patch_count() == 48);
}

TEST_CASE("partition rejects bad arguments") {
  CHECK_THROWS_AS(partition(0, 64, 16), InvalidArgument);
  CHECK_THROWS_AS(partition(64, -1, 16), InvalidArgument);
  CHECK_THROWS_AS(partition(64, 64, 0), InvalidArgument);
  CHECK_THROWS_AS(partition(64, 64, 65), InvalidArgument);
  CHECK_NOTHROW(partition(64, 10, 64));
}

TEST_CASE("refine halves the side") {
  auto g1 = refine(partition(64, 64, 16));
  CHECK(g1.level == 1);
  CHECK(g1.patch_side == 8);
  CHECK(g1.rows == 8);
  CHECK(g1.cols == 8);

  // ceil(64 / 7) = 10
  auto odd = refine(partition(64, 64, 15));
  CHECK(odd.patch_side == 7);
  CHECK(odd.rows == 10);
  CHECK(odd.cols == 10);

  GridLevel g = partition(64, 64, 16);
  while (g.patch_side > 1) g = refine(g);
  CHECK(g.level == 4);
  CHECK_THROWS_AS(refine(g), RefinementExhausted);
}

TEST_CASE("patch_rect examples") {
  const ImageRef square{"a", 64, 64, ""};
  const ImageRef wide{"b", 65, 64, ""};
  CHECK(patch_rect(partition(64, 64, 16), {0, 0, 0}, square) == PixelRect{0, 0, 16, 16});
  CHECK(patch_rect(partition(65, 64, 16), {0, 0, 4}, wide) == PixelRect{64, 0, 1, 16});
  CHECK(patch_rect(partition(64, 64, 16), {0, 3, 3}, square) == PixelRect{48, 48, 16, 16});
  CHECK_THROWS_AS(patch_rect(partition(64, 64, 16), {0, 4, 0}, square), InvalidArgument);
  CHECK_THROWS_AS(patch_rect(partition(64, 64, 16), {1, 0, 0}, square), InvalidArgument);
  CHECK_THROWS_AS(patch_rect(partition(64, 64, 16), {0, 0, 0}, wide), InvalidArgument);
}

TEST_CASE("partition tiles the image for every side up to 32") {
  // Area sums over every size up to 100x100.
  for (int w = 1; w <= 100; ++w) {
    for (int h = 1; h <= 100; ++h) {
      for (int side = 1; side <= std::min(32, std::max(w, h)); ++side) {
        const auto g = partition(w, h, side);
        std::int64_t area = 0;
        for (std::size_t i = 0; i < g.patch_count(); ++i) area += g.rect(g.id_at(i)).area();
        REQUIRE(area == std::int64_t{w} * h);
      }
    }
  }
  // Pixel coverage (no overlaps, no gaps) on a spread of sizes.
  for (int w : {1, 2, 3, 5, 8, 13, 17, 31, 32, 33, 64, 65, 99, 100}) {
    for (int h : {1, 4, 7, 16, 29, 50, 100}) {
      for (int side = 1; side <= std::min(32, std::max(w, h)); ++side) {
        const auto g = partition(w, h, side);
        std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
        for (std::size_t i = 0; i < g.patch_count(); ++i) {
          const auto r = g.rect(g.id_at(i));
          REQUIRE(r.w >= 1);
          REQUIRE(r.h >= 1);
          for (int y = r.y; y < r.y + r.h; ++y)
            for (int x = r.x; x < r.x + r.w; ++x) ++cover[static_cast<std::size_t>(y) * w + x];
        }
        REQUIRE(std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; }));
      }
    }
  }
}

TEST_CASE("children examples") {
  const auto p = partition(64, 64, 16);
  const auto c = refine(p);
  CHECK(as_set(children({0, 0, 0}, p, c)) == std::set<PatchId>{{1, 0, 0}, {1, 0, 1}, {1, 1, 0}, {1, 1, 1}});

  const auto wp = partition(65, 64, 16);
  const auto wc = refine(wp);
  const auto strip = as_set(children({0, 0, 4}, wp, wc));
  CHECK(strip == punchhole::testing::children_by_enumeration(65, 64, 16, {0, 0, 4}, 8));
  CHECK(strip == std::set<PatchId>{{1, 0, 8}, {1, 1, 8}});

  CHECK_THROWS_AS(children({0, 0, 0}, p, p), InvalidArgument);
  CHECK_THROWS_AS(children({0, 0, 0}, p, refine(c)), InvalidArgument);
}

TEST_CASE("children match the pixel-enumeration oracle, odd sides included") {
  for (auto [w, h, side] : {std::tuple{64, 64, 16}, {65, 64, 16}, {64, 64, 15}, {37, 23, 9}, {10, 10, 3}}) {
    const auto p = partition(w, h, side);
    const auto c = refine(p);
    for (std::size_t i = 0; i < p.patch_count(); ++i) {
      const auto id = p.id_at(i);
      REQUIRE(as_set(children(id, p, c)) ==
              punchhole::testing::children_by_enumeration(w, h, side, id, c.patch_side));
    }
  }
}

TEST_CASE("children tile the parent for power-of-two sides") {
  for (auto [w, h, side] : {std::tuple{64, 64, 16}, {65, 64, 16}, {70, 33, 8}, {5, 9, 4}}) {
    const auto p = partition(w, h, side);
    const auto c = refine(p);
    for (std::size_t i = 0; i < p.patch_count(); ++i) {
      const auto parent = p.rect(p.id_at(i));
      std::int64_t area = 0;
      for (const auto& child : children(p.id_at(i), p, c)) {
        const auto r = c.rect(child);
        REQUIRE(overlap_area(r, parent) == r.area());
        area += r.area();
      }
      REQUIRE(area == parent.area());
      REQUIRE(children(p.id_at(i), p, c).size() <= 4);
    }
  }
}

TEST_CASE("coarsen_mask examples") {
  const auto g = partition(64, 64, 16);
  GroundTruthMask empty(64, 64);
  CHECK(coarsen_mask(empty, g).empty());

  GroundTruthMask full(64, 64);
  full.fill({0, 0, 64, 64}, true);
  CHECK(coarsen_mask(full, g).size() == 16);

  GroundTruthMask one(64, 64);
  one.set(17, 3, true);
  const auto expected = punchhole::testing::coarsen_by_pixel_scan(one, 0, 16);
  CHECK(expected == std::set<PatchId>{{0, 0, 1}});
  CHECK(as_set(coarsen_mask(one, g)) == expected);

  CHECK_THROWS_AS(coarsen_mask(GroundTruthMask(63, 64), g), InvalidArgument);
}

TEST_CASE("coarsen_mask agrees with the pixel scan and is monotone") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int w = 1 + static_cast<int>(rng.below(90));
    const int h = 1 + static_cast<int>(rng.below(90));
    const int side = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(20, std::max(w, h)))));
    const auto g = partition(w, h, side);
    auto a = punchhole::testing::random_mask(w, h, rng, 1, 0.01);
    auto b = a;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (rng.unit() < 0.05) b.set(x, y, true);
    const auto ca = as_set(coarsen_mask(a, g));
    const auto cb = as_set(coarsen_mask(b, g));
    REQUIRE(ca == punchhole::testing::coarsen_by_pixel_scan(a, 0, side));
    REQUIRE(std::includes(cb.begin(), cb.end(), ca.begin(), ca.end()));
  }
}

TEST_CASE("rasterize_patches") {
  const auto g = partition(65, 64, 16);
  const ImageRef image{"r", 65, 64, ""};
  auto raster = rasterize_patches({}, g, image);
  CHECK(std::all_of(raster.values.begin(), raster.values.end(), [](double v) { return v == 0.0; }));

  raster = rasterize_patches({{{0, 1, 4}, 1.0}}, g, image);
  const auto r = g.rect({0, 1, 4});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 65; ++x) {
      const bool inside = x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
      REQUIRE(raster.at(x, y) == (inside ? 1.0 : 0.0));
    }

  CHECK_THROWS_AS(rasterize_patches({{{0, 0, 0}, 1.5}}, g, image), InvalidArgument);
  CHECK_THROWS_AS(rasterize_patches({{{0, 0, 0}, -0.1}}, g, image), InvalidArgument);
  CHECK_THROWS_AS(rasterize_patches({{{0, 9, 0}, 0.5}}, g, image), InvalidArgument);
}

TEST_CASE("rasterized coarse mask contains the mask") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int w = 8 + static_cast<int>(rng.below(60));
    const int h = 8 + static_cast<int>(rng.below(60));
    const int side = 1 + static_cast<int>(rng.below(8));
    const auto g = partition(w, h, side);
    const auto mask = punchhole::testing::random_mask(w, h, rng);
    std::map<PatchId, double> scores;
    for (const auto& id : coarsen_mask(mask, g)) scores[id] = 1.0;
    const auto raster = rasterize_patches(scores, g, {"m", w, h, ""});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (mask.at(x, y)) REQUIRE(raster.at(x, y) == 1.0);
  }
}
