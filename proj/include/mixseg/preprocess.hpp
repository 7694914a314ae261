#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixseg/errors.hpp"
#include "mixseg/image.hpp"
#include "mixseg/patch.hpp"

namespace mixseg {

struct PrepConfig {
  int patch_side = 128;
  double sat_threshold = 0.10;       // fraction of the maximum possible saturation
  double fg_min_fraction = 0.75;     // minimum foreground share to keep a patch
  double dominance_threshold = 0.90; // single-class share that makes a tile a classification patch
  int opening_radius = 2;
  std::string magnification_tag = "1.25x";
  std::uint64_t seed = 0;

  void validate() const;
};

// Binary raster; value 1 marks foreground tissue.
struct Bitmap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t at(int row, int col) const { return bits[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t& at(int row, int col) { return bits[static_cast<std::size_t>(row) * width + col]; }
  std::int64_t count() const;
};

struct PixelCoord {
  int row = 0;
  int col = 0;
  bool operator==(const PixelCoord&) const = default;
};

// One labeled connected component (4-connectivity, per class).
struct Region {
  int class_label = 0;
  std::vector<PixelCoord> pixels;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  int min_row = 0, max_row = 0, min_col = 0, max_col = 0;

  std::int64_t area() const { return static_cast<std::int64_t>(pixels.size()); }
};

struct Cluster {
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  std::vector<int> members;  // indices into the region's pixel list
};

// Tissue mask from HSV saturation thresholding, border-connected hole
// filling, and a disk opening.
Bitmap foreground_mask(const ImageRgb& image, const PrepConfig& config);

// Connected components of the nonzero mask classes; two touching regions of
// different classes stay distinct.
std::vector<Region> connected_components(const LabelMask& mask);

// Number of clusters a region is split into.
int split_cluster_count(std::int64_t area, int patch_side);

// K-means over the region's pixel coordinates with seeded farthest-point
// initialization; k follows split_cluster_count.
std::vector<Cluster> kmeans_split(const Region& region, int patch_side, std::uint64_t seed);

// Top-left corners of the centered patches for one region; regions whose
// bounding box exceeds the patch are split first. Corners are clamped so
// every patch lies fully inside the image.
std::vector<PixelCoord> centered_patch_coords(const Region& region, int image_height, int image_width,
                                              int patch_side, std::uint64_t seed);

// Keep a patch iff its foreground share is at least fg_min_fraction.
bool filter_patch(PixelCoord top_left, int patch_side, const Bitmap& foreground, double fg_min_fraction);

enum class TileCategory { kClassification, kSegmentation, kIgnored };

struct TileDecision {
  TileCategory category = TileCategory::kIgnored;
  int dominant_class = 0;
};

// Category of one tile of the mask: dominant class at or above the
// dominance threshold makes a classification patch; otherwise exactly two
// classes make a segmentation patch; everything else is ignored.
TileDecision classify_tile(const LabelMask& mask, int row0, int col0, int side, double dominance_threshold);

struct TileExtraction {
  PatchPools pools;
  int ignored = 0;
  int total_tiles = 0;
};

// Non-overlapping patch-side tiling (partial border tiles dropped) of an
// image/mask pair into classification and segmentation pools.
TileExtraction extract_tiles(const WsiRecord& wsi, const PrepConfig& config);

// Centered ground-truth extraction: one patch per labeled component (or per
// K-means cluster for oversized components), filtered by the foreground
// mask.
std::vector<SegSample> extract_centered_patches(const WsiRecord& wsi, const PrepConfig& config);

// Pool directory layout: seg/<id>_<r>_<c>.ppm with a _mask.pgm twin,
// cls/<id>_<r>_<c>.ppm, labels.csv with (filename,label) rows, and a
// manifest.jsonl carrying provenance.
void write_pools(const PatchPools& pools, const std::filesystem::path& dir);
PatchPools load_pools(const std::filesystem::path& dir);

// Dataset directory layout: images/<id>.ppm plus masks/<id>.pgm.
void write_dataset(const std::vector<WsiRecord>& records, const std::filesystem::path& dir);
std::vector<WsiRecord> load_dataset(const std::filesystem::path& dir);

}  // namespace mixseg
