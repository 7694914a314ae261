#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <unistd.h>

#include "mixseg/preprocess.hpp"
#include "mixseg/rng.hpp"

using namespace mixseg;

namespace {


LabelMask mask_from(const std::vector<std::vector<int>>& rows) {
  LabelMask mask = LabelMask::filled(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()), 0);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) mask.at(r, c) = static_cast<std::uint8_t>(rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
  }
  return mask;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("mixseg_prep_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("pure white image is all background") {
  auto image = ImageRgb::filled(32, 32, 255, 255, 255);
  auto fg = foreground_mask(image, PrepConfig{});
  CHECK(fg.count() == 0);
}

TEST_CASE("fully saturated image is all foreground") {
  auto image = ImageRgb::filled(32, 32, 255, 0, 0);
  auto fg = foreground_mask(image, PrepConfig{});
  CHECK(fg.count() == 32 * 32);
}

TEST_CASE("saturation follows the max-min over max rule") {
  // One saturated red pixel on a white canvas; opening removes an isolated
  // pixel, so run with radius 0 to test the threshold alone.
  auto image = ImageRgb::filled(16, 16, 255, 255, 255);
  image.at(5, 5)[1] = 0;
  image.at(5, 5)[2] = 0;
  PrepConfig cfg;
  cfg.opening_radius = 0;
  auto fg = foreground_mask(image, cfg);
  CHECK(fg.at(5, 5) == 1);
  CHECK(fg.count() == 1);
}

TEST_CASE("background pockets enclosed by foreground are filled") {
  auto image = ImageRgb::filled(32, 32, 255, 255, 255);
  // Saturated ring around a white pocket.
  for (int r = 8; r < 24; ++r) {
    for (int c = 8; c < 24; ++c) {
      const bool in_ring = (r >= 8 && r < 24 && c >= 8 && c < 24) && !(r >= 13 && r < 19 && c >= 13 && c < 19);
      if (in_ring) {
        image.at(r, c)[1] = 40;
        image.at(r, c)[2] = 60;
      }
    }
  }
  auto fg = foreground_mask(image, PrepConfig{});
  // The pocket interior is reported as tissue.
  CHECK(fg.at(15, 15) == 1);
  CHECK(fg.at(16, 16) == 1);
  // The far corner background stays background.
  CHECK(fg.at(0, 0) == 0);
}

TEST_CASE("foreground_mask is idempotent through a white/red re-rendering") {
  Rng rng(404);
  auto image = ImageRgb::filled(48, 48, 255, 255, 255);
  for (int blob = 0; blob < 6; ++blob) {
    const int cr = static_cast<int>(rng.next_below(48));
    const int cc = static_cast<int>(rng.next_below(48));
    const int rad = 3 + static_cast<int>(rng.next_below(8));
    for (int r = 0; r < 48; ++r) {
      for (int c = 0; c < 48; ++c) {
        if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= rad * rad) {
          image.at(r, c)[1] = 30;
          image.at(r, c)[2] = 90;
        }
      }
    }
  }
  PrepConfig cfg;
  auto first = foreground_mask(image, cfg);
  auto rendered = ImageRgb::filled(48, 48, 255, 255, 255);
  for (int r = 0; r < 48; ++r) {
    for (int c = 0; c < 48; ++c) {
      if (first.at(r, c)) {
        rendered.at(r, c)[1] = 0;
        rendered.at(r, c)[2] = 0;
      }
    }
  }
  auto second = foreground_mask(rendered, cfg);
  CHECK(first.bits == second.bits);
}

TEST_CASE("foreground_mask rejects an empty image") {
  ImageRgb empty;
  CHECK_THROWS_AS(foreground_mask(empty, PrepConfig{}), DataError);
}

TEST_CASE("invalid prep configurations are rejected") {
  PrepConfig cfg;
  cfg.sat_threshold = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PrepConfig{};
  cfg.dominance_threshold = 0.4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PrepConfig{};
  cfg.patch_side = 8;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("connected components find a solid blob with area and centroid") {
  auto mask = mask_from({{0, 0, 0, 0}, {0, 2, 2, 0}, {0, 2, 2, 0}, {0, 0, 0, 0}});
  auto regions = connected_components(mask);
  REQUIRE(regions.size() == 1);
  CHECK(regions[0].class_label == 2);
  CHECK(regions[0].area() == 4);
  CHECK(regions[0].centroid_row == doctest::Approx(1.5));
  CHECK(regions[0].centroid_col == doctest::Approx(1.5));
}

TEST_CASE("diagonal contact does not join regions under 4-connectivity") {
  auto mask = mask_from({{1, 0}, {0, 1}});
  auto regions = connected_components(mask);
  CHECK(regions.size() == 2);
}

TEST_CASE("touching regions of different classes stay distinct") {
  auto mask = mask_from({{1, 1, 2, 2}});
  auto regions = connected_components(mask);
  REQUIRE(regions.size() == 2);
  CHECK(regions[0].class_label != regions[1].class_label);
}

TEST_CASE("empty mask has no regions") {
  auto mask = LabelMask::filled(8, 8, 0);
  CHECK(connected_components(mask).empty());
}

TEST_CASE("cluster count follows the ceiling formula") {
  CHECK(split_cluster_count(128 * 128, 128) == 2);          // area exactly one patch
  CHECK(split_cluster_count(static_cast<std::int64_t>(2.5 * 128 * 128), 128) == 4);
  CHECK(split_cluster_count(1, 128) == 2);                  // ceil(1 + tiny) = 2
  CHECK(split_cluster_count(3 * 64 * 64, 64) == 4);
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t area = 1 + static_cast<std::int64_t>(rng.next_below(500000));
    const int side = 16 * (1 + static_cast<int>(rng.next_below(8)));
    const int expected = static_cast<int>(std::ceil(1.0 + static_cast<double>(area) / (static_cast<double>(side) * side)));
    CHECK(split_cluster_count(area, side) == expected);
  }
}

TEST_CASE("kmeans_split partitions the region and is deterministic") {
  Rng rng(31);
  Region region;
  region.class_label = 1;
  // A wide rectangle larger than the patch: 20x200 = 4000 px, patch 32.
  for (int r = 0; r < 20; ++r) {
    for (int c = 0; c < 200; ++c) region.pixels.push_back({r + 5, c + 3});
  }
  region.min_row = 5;
  region.max_row = 24;
  region.min_col = 3;
  region.max_col = 202;

  auto clusters = kmeans_split(region, 32, 7);
  CHECK(static_cast<int>(clusters.size()) == split_cluster_count(region.area(), 32));

  std::set<int> seen;
  for (const auto& cluster : clusters) {
    for (int member : cluster.members) seen.insert(member);
  }
  CHECK(seen.size() == region.pixels.size());

  auto again = kmeans_split(region, 32, 7);
  for (std::size_t j = 0; j < clusters.size(); ++j) {
    CHECK(clusters[j].centroid_row == again[j].centroid_row);
    CHECK(clusters[j].centroid_col == again[j].centroid_col);
    CHECK(clusters[j].members == again[j].members);
  }
}

TEST_CASE("centered patch covers the centroid-aligned window") {
  Region region;
  region.class_label = 1;
  for (int r = 60; r < 69; ++r) {
    for (int c = 60; c < 69; ++c) region.pixels.push_back({r, c});
  }
  region.centroid_row = 64.0;
  region.centroid_col = 64.0;
  region.min_row = 60;
  region.max_row = 68;
  region.min_col = 60;
  region.max_col = 68;
  auto coords = centered_patch_coords(region, 256, 256, 128, 0);
  REQUIRE(coords.size() == 1);
  CHECK(coords[0].row == 0);
  CHECK(coords[0].col == 0);
}

TEST_CASE("patches near the border are clamped inside the image") {
  Region region;
  region.class_label = 1;
  region.pixels.push_back({10, 10});
  region.centroid_row = 10.0;
  region.centroid_col = 10.0;
  region.min_row = region.max_row = 10;
  region.min_col = region.max_col = 10;
  auto coords = centered_patch_coords(region, 256, 256, 128, 0);
  REQUIRE(coords.size() == 1);
  CHECK(coords[0].row == 0);
  CHECK(coords[0].col == 0);

  region.pixels[0] = {250, 251};
  region.centroid_row = 250.0;
  region.centroid_col = 251.0;
  region.min_row = region.max_row = 250;
  region.min_col = region.max_col = 251;
  coords = centered_patch_coords(region, 256, 256, 128, 0);
  CHECK(coords[0].row == 128);
  CHECK(coords[0].col == 128);
}

TEST_CASE("oversized regions emit one centered patch per cluster, all inside bounds") {
  Region region;
  region.class_label = 3;
  for (int r = 20; r < 320; ++r) {
    for (int c = 40; c < 340; ++c) {
      if ((r + c) % 2 == 0) region.pixels.push_back({r, c});
    }
  }
  region.min_row = 20;
  region.max_row = 319;
  region.min_col = 40;
  region.max_col = 339;
  auto coords = centered_patch_coords(region, 400, 400, 128, 11);
  CHECK(coords.size() == static_cast<std::size_t>(split_cluster_count(region.area(), 128)));
  for (const auto& corner : coords) {
    CHECK(corner.row >= 0);
    CHECK(corner.col >= 0);
    CHECK(corner.row + 128 <= 400);
    CHECK(corner.col + 128 <= 400);
  }
}

TEST_CASE("images smaller than the patch are a configuration error") {
  Region region;
  region.pixels.push_back({1, 1});
  CHECK_THROWS_AS(centered_patch_coords(region, 64, 64, 128, 0), ConfigError);
}

TEST_CASE("patch filtering keeps at and above the foreground threshold") {
  Bitmap fg;
  fg.height = 16;
  fg.width = 16;
  fg.bits.assign(256, 0);
  CHECK_FALSE(filter_patch({0, 0}, 16, fg, 0.75));

  // Exactly 75%: 192 of 256 pixels.
  for (int i = 0; i < 192; ++i) fg.bits[static_cast<std::size_t>(i)] = 1;
  CHECK(filter_patch({0, 0}, 16, fg, 0.75));

  for (int i = 192; i < 205; ++i) fg.bits[static_cast<std::size_t>(i)] = 1;  // ~80%
  CHECK(filter_patch({0, 0}, 16, fg, 0.75));

  fg.bits[0] = 0;  // just below 75% after removing one from the exact case
  Bitmap below = fg;
  below.bits.assign(256, 0);
  for (int i = 0; i < 191; ++i) below.bits[static_cast<std::size_t>(i)] = 1;
  CHECK_FALSE(filter_patch({0, 0}, 16, below, 0.75));
}

TEST_CASE("tile categories follow dominance then the two-class rule") {
  auto uniform = LabelMask::filled(16, 16, 3);
  CHECK(classify_tile(uniform, 0, 0, 16, 0.9).category == TileCategory::kClassification);
  CHECK(classify_tile(uniform, 0, 0, 16, 0.9).dominant_class == 3);

  // 92% / 8% split of two classes: dominance wins.
  auto near_pure = LabelMask::filled(16, 16, 1);
  for (int i = 0; i < 20; ++i) near_pure.labels[static_cast<std::size_t>(i)] = 2;
  CHECK(classify_tile(near_pure, 0, 0, 16, 0.9).category == TileCategory::kClassification);

  // 60/40 two classes: segmentation patch.
  auto two_class = LabelMask::filled(16, 16, 0);
  for (int i = 0; i < 102; ++i) two_class.labels[static_cast<std::size_t>(i)] = 1;
  CHECK(classify_tile(two_class, 0, 0, 16, 0.9).category == TileCategory::kSegmentation);

  // Three classes at 50/30/20: ignored.
  auto three_class = LabelMask::filled(16, 16, 0);
  for (int i = 0; i < 128; ++i) three_class.labels[static_cast<std::size_t>(i)] = 1;
  for (int i = 128; i < 205; ++i) three_class.labels[static_cast<std::size_t>(i)] = 2;
  CHECK(classify_tile(three_class, 0, 0, 16, 0.9).category == TileCategory::kIgnored);
}

TEST_CASE("extract_tiles accounts for every tile and matches a histogram oracle") {
  Rng rng(515);
  PrepConfig cfg;
  cfg.patch_side = 16;
  for (int trial = 0; trial < 100; ++trial) {
    const int side = 16 * (2 + static_cast<int>(rng.next_below(3)));
    WsiRecord wsi;
    wsi.id = "t" + std::to_string(trial);
    wsi.image = ImageRgb::filled(side, side, 200, 180, 190);
    wsi.mask = LabelMask::filled(side, side, 0);
    // Random rectangles of random classes.
    const int rects = static_cast<int>(rng.next_below(6));
    for (int b = 0; b < rects; ++b) {
      const int r0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(side)));
      const int c0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(side)));
      const int rh = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(side - r0)));
      const int cw = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(side - c0)));
      const int cls = 1 + static_cast<int>(rng.next_below(3));
      for (int r = r0; r < r0 + rh; ++r) {
        for (int c = c0; c < c0 + cw; ++c) wsi.mask.at(r, c) = static_cast<std::uint8_t>(cls);
      }
    }

    auto extraction = extract_tiles(wsi, cfg);
    const int grid = side / cfg.patch_side;
    CHECK(extraction.total_tiles == grid * grid);
    CHECK(static_cast<int>(extraction.pools.cls.size() + extraction.pools.seg.size()) + extraction.ignored ==
          extraction.total_tiles);

    // Brute-force oracle: recount each tile's histogram independently.
    int oracle_cls = 0, oracle_seg = 0, oracle_ignored = 0;
    for (int tr = 0; tr + cfg.patch_side <= side; tr += cfg.patch_side) {
      for (int tc = 0; tc + cfg.patch_side <= side; tc += cfg.patch_side) {
        std::map<int, int> histogram;
        for (int r = tr; r < tr + cfg.patch_side; ++r) {
          for (int c = tc; c < tc + cfg.patch_side; ++c) histogram[wsi.mask.at(r, c)] += 1;
        }
        int max_count = 0;
        for (const auto& [label, count] : histogram) max_count = std::max(max_count, count);
        const double share = static_cast<double>(max_count) / (cfg.patch_side * cfg.patch_side);
        if (share >= cfg.dominance_threshold) {
          ++oracle_cls;
        } else if (histogram.size() == 2) {
          ++oracle_seg;
        } else {
          ++oracle_ignored;
        }
      }
    }
    CHECK(static_cast<int>(extraction.pools.cls.size()) == oracle_cls);
    CHECK(static_cast<int>(extraction.pools.seg.size()) == oracle_seg);
    CHECK(extraction.ignored == oracle_ignored);
  }
}

TEST_CASE("centered extraction emits full-size in-bounds patches") {
  PrepConfig cfg;
  cfg.patch_side = 32;
  WsiRecord wsi;
  wsi.id = "w";
  wsi.image = ImageRgb::filled(128, 128, 200, 120, 160);  // saturated everywhere
  wsi.mask = LabelMask::filled(128, 128, 0);
  for (int r = 10; r < 26; ++r) {
    for (int c = 40; c < 58; ++c) wsi.mask.at(r, c) = 1;
  }
  for (int r = 60; r < 120; ++r) {
    for (int c = 10; c < 110; ++c) wsi.mask.at(r, c) = 2;
  }
  auto samples = extract_centered_patches(wsi, cfg);
  CHECK(samples.size() >= 2);
  for (const auto& sample : samples) {
    CHECK(sample.image.height == 32);
    CHECK(sample.image.width == 32);
    CHECK(sample.mask.height == 32);
    CHECK(sample.origin.row >= 0);
    CHECK(sample.origin.row + 32 <= 128);
  }
}

TEST_CASE("pools round-trip through the directory layout") {
  TempDir tmp;
  PatchPools pools;
  SegSample seg;
  seg.image = ImageRgb::filled(16, 16, 10, 20, 30);
  seg.mask = LabelMask::filled(16, 16, 1);
  seg.mask.at(3, 3) = 2;
  seg.origin = {"wsi0", 16, 32, "tile"};
  pools.seg.push_back(seg);
  ClsSample cls;
  cls.image = ImageRgb::filled(16, 16, 40, 50, 60);
  cls.label = 3;
  cls.origin = {"wsi1", 0, 48, "tile"};
  pools.cls.push_back(cls);

  write_pools(pools, tmp.path);
  CHECK(std::filesystem::exists(tmp.path / "seg" / "wsi0_16_32.ppm"));
  CHECK(std::filesystem::exists(tmp.path / "seg" / "wsi0_16_32_mask.pgm"));
  CHECK(std::filesystem::exists(tmp.path / "cls" / "wsi1_0_48.ppm"));
  CHECK(std::filesystem::exists(tmp.path / "labels.csv"));
  CHECK(std::filesystem::exists(tmp.path / "manifest.jsonl"));

  auto loaded = load_pools(tmp.path);
  REQUIRE(loaded.seg.size() == 1);
  REQUIRE(loaded.cls.size() == 1);
  CHECK(loaded.seg[0].image.pixels == seg.image.pixels);
  CHECK(loaded.seg[0].mask.labels == seg.mask.labels);
  CHECK(loaded.seg[0].origin.wsi_id == "wsi0");
  CHECK(loaded.cls[0].label == 3);
  CHECK(loaded.cls[0].origin.col == 48);
}

TEST_CASE("datasets round-trip through images/ and masks/") {
  TempDir tmp;
  WsiRecord record;
  record.id = "sample00";
  record.image = ImageRgb::filled(24, 24, 1, 2, 3);
  record.mask = LabelMask::filled(24, 24, 2);
  write_dataset({record}, tmp.path);
  auto loaded = load_dataset(tmp.path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].id == "sample00");
  CHECK(loaded[0].image.pixels == record.image.pixels);
  CHECK(loaded[0].mask.labels == record.mask.labels);
}
