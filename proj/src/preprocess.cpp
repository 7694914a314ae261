#include "mixseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "mixseg/errors.hpp"
#include "mixseg/rng.hpp"

namespace mixseg {

void PrepConfig::validate() const {
  if (patch_side < 16) throw ConfigError("patch_side must be >= 16, got " + std::to_string(patch_side));
  if (sat_threshold <= 0.0 || sat_threshold >= 1.0) {
    throw ConfigError("sat_threshold must lie in (0,1), got " + std::to_string(sat_threshold));
  }
  if (dominance_threshold <= 0.5 || dominance_threshold > 1.0) {
    throw ConfigError("dominance_threshold must lie in (0.5,1], got " + std::to_string(dominance_threshold));
  }
  if (fg_min_fraction < 0.0 || fg_min_fraction > 1.0) {
    throw ConfigError("fg_min_fraction must lie in [0,1]");
  }
  if (opening_radius < 0) throw ConfigError("opening_radius must be non-negative");
}

std::int64_t Bitmap::count() const {
  std::int64_t n = 0;
  for (std::uint8_t b : bits) n += b;
  return n;
}

namespace {

std::vector<PixelCoord> disk_offsets(int radius) {
  std::vector<PixelCoord> offsets;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy * dy + dx * dx <= radius * radius) offsets.push_back({dy, dx});
    }
  }
  return offsets;
}

// Erosion keeping the raster border permissive: offsets falling outside the
// image are ignored, so a fully-foreground image stays fully foreground.
Bitmap erode(const Bitmap& in, const std::vector<PixelCoord>& se) {
  Bitmap out = in;
  for (int r = 0; r < in.height; ++r) {
    for (int c = 0; c < in.width; ++c) {
      if (!in.at(r, c)) {
        out.at(r, c) = 0;
        continue;
      }
      std::uint8_t keep = 1;
      for (const auto& o : se) {
        const int rr = r + o.row, cc = c + o.col;
        if (rr < 0 || rr >= in.height || cc < 0 || cc >= in.width) continue;
        if (!in.at(rr, cc)) {
          keep = 0;
          break;
        }
      }
      out.at(r, c) = keep;
    }
  }
  return out;
}

Bitmap dilate(const Bitmap& in, const std::vector<PixelCoord>& se) {
  Bitmap out = in;
  std::fill(out.bits.begin(), out.bits.end(), 0);
  for (int r = 0; r < in.height; ++r) {
    for (int c = 0; c < in.width; ++c) {
      if (!in.at(r, c)) continue;
      for (const auto& o : se) {
        const int rr = r + o.row, cc = c + o.col;
        if (rr < 0 || rr >= in.height || cc < 0 || cc >= in.width) continue;
        out.at(rr, cc) = 1;
      }
    }
  }
  return out;
}

// Marks background pixels reachable from the border via 4-connected
// background; everything else is an enclosed hole.
void fill_holes(Bitmap& mask) {
  const int h = mask.height, w = mask.width;
  std::vector<std::uint8_t> reachable(static_cast<std::size_t>(h) * w, 0);
  std::deque<PixelCoord> frontier;
  auto push = [&](int r, int c) {
    const std::size_t i = static_cast<std::size_t>(r) * w + c;
    if (!reachable[i] && !mask.bits[i]) {
      reachable[i] = 1;
      frontier.push_back({r, c});
    }
  };
  for (int c = 0; c < w; ++c) {
    push(0, c);
    push(h - 1, c);
  }
  for (int r = 0; r < h; ++r) {
    push(r, 0);
    push(r, w - 1);
  }
  while (!frontier.empty()) {
    const auto [r, c] = frontier.front();
    frontier.pop_front();
    if (r > 0) push(r - 1, c);
    if (r + 1 < h) push(r + 1, c);
    if (c > 0) push(r, c - 1);
    if (c + 1 < w) push(r, c + 1);
  }
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (!mask.bits[i] && !reachable[i]) mask.bits[i] = 1;
  }
}

}  // namespace

Bitmap foreground_mask(const ImageRgb& image, const PrepConfig& config) {
  config.validate();
  if (image.height <= 0 || image.width <= 0) throw DataError("foreground_mask requires a non-empty image");

  Bitmap mask;
  mask.height = image.height;
  mask.width = image.width;
  mask.bits.resize(static_cast<std::size_t>(image.height) * image.width);

  // HSV saturation: (max - min) / max on [0,1] channels, zero for black.
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const std::uint8_t* px = image.at(r, c);
      const int hi = std::max({px[0], px[1], px[2]});
      const int lo = std::min({px[0], px[1], px[2]});
      const double saturation = hi == 0 ? 0.0 : static_cast<double>(hi - lo) / static_cast<double>(hi);
      mask.at(r, c) = saturation >= config.sat_threshold ? 1 : 0;
    }
  }

  fill_holes(mask);

  if (config.opening_radius > 0) {
    const auto se = disk_offsets(config.opening_radius);
    mask = dilate(erode(mask, se), se);
  }
  return mask;
}

std::vector<Region> connected_components(const LabelMask& mask) {
  const int h = mask.height, w = mask.width;
  std::vector<std::int32_t> component(static_cast<std::size_t>(h) * w, -1);
  std::vector<Region> regions;
  std::deque<PixelCoord> frontier;

  for (int r0 = 0; r0 < h; ++r0) {
    for (int c0 = 0; c0 < w; ++c0) {
      const std::uint8_t label = mask.at(r0, c0);
      if (label == 0 || component[static_cast<std::size_t>(r0) * w + c0] >= 0) continue;
      const auto id = static_cast<std::int32_t>(regions.size());
      Region region;
      region.class_label = label;
      region.min_row = region.max_row = r0;
      region.min_col = region.max_col = c0;
      component[static_cast<std::size_t>(r0) * w + c0] = id;
      frontier.push_back({r0, c0});
      double sum_r = 0.0, sum_c = 0.0;
      while (!frontier.empty()) {
        const auto [r, c] = frontier.front();
        frontier.pop_front();
        region.pixels.push_back({r, c});
        sum_r += r;
        sum_c += c;
        region.min_row = std::min(region.min_row, r);
        region.max_row = std::max(region.max_row, r);
        region.min_col = std::min(region.min_col, c);
        region.max_col = std::max(region.max_col, c);
        const PixelCoord neighbours[4] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
        for (const auto& n : neighbours) {
          if (n.row < 0 || n.row >= h || n.col < 0 || n.col >= w) continue;
          auto& slot = component[static_cast<std::size_t>(n.row) * w + n.col];
          if (slot >= 0 || mask.at(n.row, n.col) != label) continue;
          slot = id;
          frontier.push_back(n);
        }
      }
      region.centroid_row = sum_r / static_cast<double>(region.pixels.size());
      region.centroid_col = sum_c / static_cast<double>(region.pixels.size());
      regions.push_back(std::move(region));
    }
  }
  return regions;
}

int split_cluster_count(std::int64_t area, int patch_side) {
  const double patch_area = static_cast<double>(patch_side) * patch_side;
  return static_cast<int>(std::ceil(1.0 + static_cast<double>(area) / patch_area));
}

std::vector<Cluster> kmeans_split(const Region& region, int patch_side, std::uint64_t seed) {
  const int k = split_cluster_count(region.area(), patch_side);
  const auto n = static_cast<int>(region.pixels.size());
  const int clusters = std::min(k, n);

  // Farthest-point initialization: seeded first pick, then repeatedly the
  // pixel with the largest distance to its nearest chosen center.
  Rng rng(derive_seed(seed, "kmeans-init"));
  std::vector<double> cr(clusters), cc(clusters);
  std::vector<double> nearest(region.pixels.size(), std::numeric_limits<double>::max());
  int first = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
  cr[0] = region.pixels[static_cast<std::size_t>(first)].row;
  cc[0] = region.pixels[static_cast<std::size_t>(first)].col;
  for (int j = 1; j < clusters; ++j) {
    int far_index = 0;
    double far_dist = -1.0;
    for (std::size_t i = 0; i < region.pixels.size(); ++i) {
      const double dr = region.pixels[i].row - cr[j - 1];
      const double dc = region.pixels[i].col - cc[j - 1];
      nearest[i] = std::min(nearest[i], dr * dr + dc * dc);
      if (nearest[i] > far_dist) {
        far_dist = nearest[i];
        far_index = static_cast<int>(i);
      }
    }
    cr[j] = region.pixels[static_cast<std::size_t>(far_index)].row;
    cc[j] = region.pixels[static_cast<std::size_t>(far_index)].col;
  }

  std::vector<int> assignment(region.pixels.size(), 0);
  constexpr int kMaxIterations = 100;
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < region.pixels.size(); ++i) {
      int best = 0;
      double best_dist = std::numeric_limits<double>::max();
      for (int j = 0; j < clusters; ++j) {
        const double dr = region.pixels[i].row - cr[j];
        const double dc = region.pixels[i].col - cc[j];
        const double d = dr * dr + dc * dc;
        if (d < best_dist) {
          best_dist = d;
          best = j;
        }
      }
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    std::vector<double> sum_r(clusters, 0.0), sum_c(clusters, 0.0);
    std::vector<std::int64_t> counts(clusters, 0);
    for (std::size_t i = 0; i < region.pixels.size(); ++i) {
      sum_r[static_cast<std::size_t>(assignment[i])] += region.pixels[i].row;
      sum_c[static_cast<std::size_t>(assignment[i])] += region.pixels[i].col;
      counts[static_cast<std::size_t>(assignment[i])] += 1;
    }
    for (int j = 0; j < clusters; ++j) {
      if (counts[static_cast<std::size_t>(j)] == 0) {
        // Re-seed an empty cluster on the pixel farthest from its center.
        std::size_t far_index = 0;
        double far_dist = -1.0;
        for (std::size_t i = 0; i < region.pixels.size(); ++i) {
          const int a = assignment[i];
          const double dr = region.pixels[i].row - cr[static_cast<std::size_t>(a)];
          const double dc = region.pixels[i].col - cc[static_cast<std::size_t>(a)];
          const double d = dr * dr + dc * dc;
          if (d > far_dist) {
            far_dist = d;
            far_index = i;
          }
        }
        cr[static_cast<std::size_t>(j)] = region.pixels[far_index].row;
        cc[static_cast<std::size_t>(j)] = region.pixels[far_index].col;
        continue;
      }
      cr[static_cast<std::size_t>(j)] = sum_r[static_cast<std::size_t>(j)] / static_cast<double>(counts[static_cast<std::size_t>(j)]);
      cc[static_cast<std::size_t>(j)] = sum_c[static_cast<std::size_t>(j)] / static_cast<double>(counts[static_cast<std::size_t>(j)]);
    }
  }

  std::vector<Cluster> out(static_cast<std::size_t>(clusters));
  for (int j = 0; j < clusters; ++j) {
    out[static_cast<std::size_t>(j)].centroid_row = cr[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(j)].centroid_col = cc[static_cast<std::size_t>(j)];
  }
  for (std::size_t i = 0; i < region.pixels.size(); ++i) {
    out[static_cast<std::size_t>(assignment[i])].members.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

PixelCoord clamp_top_left(double centroid_row, double centroid_col, int image_height, int image_width,
                          int patch_side) {
  int r = static_cast<int>(std::floor(centroid_row + 0.5)) - patch_side / 2;
  int c = static_cast<int>(std::floor(centroid_col + 0.5)) - patch_side / 2;
  r = std::clamp(r, 0, image_height - patch_side);
  c = std::clamp(c, 0, image_width - patch_side);
  return {r, c};
}

}  // namespace

std::vector<PixelCoord> centered_patch_coords(const Region& region, int image_height, int image_width,
                                              int patch_side, std::uint64_t seed) {
  if (region.pixels.empty()) throw DataError("centered_patch_coords requires a non-empty region");
  if (image_height < patch_side || image_width < patch_side) {
    throw ConfigError("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " is smaller than the patch side " + std::to_string(patch_side));
  }
  const bool fits = (region.max_row - region.min_row + 1) <= patch_side &&
                    (region.max_col - region.min_col + 1) <= patch_side;
  std::vector<PixelCoord> coords;
  if (fits) {
    coords.push_back(clamp_top_left(region.centroid_row, region.centroid_col, image_height, image_width, patch_side));
    return coords;
  }
  for (const auto& cluster : kmeans_split(region, patch_side, seed)) {
    coords.push_back(clamp_top_left(cluster.centroid_row, cluster.centroid_col, image_height, image_width, patch_side));
  }
  return coords;
}

bool filter_patch(PixelCoord top_left, int patch_side, const Bitmap& foreground, double fg_min_fraction) {
  std::int64_t fg = 0;
  for (int r = top_left.row; r < top_left.row + patch_side; ++r) {
    for (int c = top_left.col; c < top_left.col + patch_side; ++c) {
      fg += foreground.at(r, c);
    }
  }
  const double fraction = static_cast<double>(fg) / (static_cast<double>(patch_side) * patch_side);
  return fraction >= fg_min_fraction;
}

TileDecision classify_tile(const LabelMask& mask, int row0, int col0, int side, double dominance_threshold) {
  std::map<int, std::int64_t> histogram;
  for (int r = row0; r < row0 + side; ++r) {
    for (int c = col0; c < col0 + side; ++c) {
      histogram[mask.at(r, c)] += 1;
    }
  }
  int dominant = 0;
  std::int64_t dominant_count = -1;
  for (const auto& [label, count] : histogram) {
    if (count > dominant_count) {
      dominant = label;
      dominant_count = count;
    }
  }
  TileDecision decision;
  decision.dominant_class = dominant;
  const double share = static_cast<double>(dominant_count) / (static_cast<double>(side) * side);
  if (share >= dominance_threshold) {
    decision.category = TileCategory::kClassification;
  } else if (histogram.size() == 2) {
    decision.category = TileCategory::kSegmentation;
  } else {
    decision.category = TileCategory::kIgnored;
  }
  return decision;
}

TileExtraction extract_tiles(const WsiRecord& wsi, const PrepConfig& config) {
  config.validate();
  if (wsi.image.height != wsi.mask.height || wsi.image.width != wsi.mask.width) {
    throw DataError("image and mask dimensions disagree for " + wsi.id);
  }
  const int side = config.patch_side;
  TileExtraction out;
  for (int r = 0; r + side <= wsi.image.height; r += side) {
    for (int c = 0; c + side <= wsi.image.width; c += side) {
      ++out.total_tiles;
      const TileDecision decision = classify_tile(wsi.mask, r, c, side, config.dominance_threshold);
      Provenance origin{wsi.id, r, c, "tile"};
      switch (decision.category) {
        case TileCategory::kClassification:
          out.pools.cls.push_back({crop(wsi.image, r, c, side), decision.dominant_class, origin});
          break;
        case TileCategory::kSegmentation:
          out.pools.seg.push_back({crop(wsi.image, r, c, side), crop(wsi.mask, r, c, side), origin});
          break;
        case TileCategory::kIgnored:
          ++out.ignored;
          break;
      }
    }
  }
  return out;
}

std::vector<SegSample> extract_centered_patches(const WsiRecord& wsi, const PrepConfig& config) {
  config.validate();
  if (wsi.image.height != wsi.mask.height || wsi.image.width != wsi.mask.width) {
    throw DataError("image and mask dimensions disagree for " + wsi.id);
  }
  const Bitmap foreground = foreground_mask(wsi.image, config);
  std::vector<SegSample> samples;
  std::set<std::pair<int, int>> used;
  const auto regions = connected_components(wsi.mask);
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto region_seed = derive_seed(config.seed, wsi.id, static_cast<int>(i));
    for (const auto& corner :
         centered_patch_coords(regions[i], wsi.image.height, wsi.image.width, config.patch_side, region_seed)) {
      if (!used.insert({corner.row, corner.col}).second) continue;
      if (!filter_patch(corner, config.patch_side, foreground, config.fg_min_fraction)) continue;
      samples.push_back({crop(wsi.image, corner.row, corner.col, config.patch_side),
                         crop(wsi.mask, corner.row, corner.col, config.patch_side),
                         {wsi.id, corner.row, corner.col, "centered"}});
    }
  }
  return samples;
}

namespace {

std::string patch_stem(const Provenance& origin) {
  return origin.wsi_id + "_" + std::to_string(origin.row) + "_" + std::to_string(origin.col);
}

}  // namespace

void write_pools(const PatchPools& pools, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "seg");
  std::filesystem::create_directories(dir / "cls");
  std::ofstream manifest(dir / "manifest.jsonl");
  std::ofstream labels(dir / "labels.csv");
  if (!manifest || !labels) throw IoError("cannot write pool metadata under " + dir.string());
  labels << "filename,label\n";

  for (const auto& sample : pools.seg) {
    const std::string stem = patch_stem(sample.origin);
    write_ppm(dir / "seg" / (stem + ".ppm"), sample.image);
    write_pgm(dir / "seg" / (stem + "_mask.pgm"), sample.mask);
    nlohmann::json line = {{"kind", "seg"},
                           {"file", "seg/" + stem + ".ppm"},
                           {"mask", "seg/" + stem + "_mask.pgm"},
                           {"wsi", sample.origin.wsi_id},
                           {"row", sample.origin.row},
                           {"col", sample.origin.col},
                           {"category", sample.origin.category}};
    manifest << line.dump() << "\n";
  }
  for (const auto& sample : pools.cls) {
    const std::string stem = patch_stem(sample.origin);
    write_ppm(dir / "cls" / (stem + ".ppm"), sample.image);
    labels << stem << ".ppm," << sample.label << "\n";
    nlohmann::json line = {{"kind", "cls"},          {"file", "cls/" + stem + ".ppm"},
                           {"label", sample.label},  {"wsi", sample.origin.wsi_id},
                           {"row", sample.origin.row}, {"col", sample.origin.col},
                           {"category", sample.origin.category}};
    manifest << line.dump() << "\n";
  }
  if (!manifest || !labels) throw IoError("write failure under " + dir.string());
}

PatchPools load_pools(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.jsonl";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open " + manifest_path.string());
  PatchPools pools;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    nlohmann::json entry;
    try {
      entry = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("malformed manifest line in " + manifest_path.string() + ": " + e.what());
    }
    Provenance origin{entry.at("wsi").get<std::string>(), entry.at("row").get<int>(), entry.at("col").get<int>(),
                      entry.at("category").get<std::string>()};
    if (entry.at("kind") == "seg") {
      pools.seg.push_back({read_ppm(dir / entry.at("file").get<std::string>()),
                           read_pgm(dir / entry.at("mask").get<std::string>()), origin});
    } else {
      pools.cls.push_back({read_ppm(dir / entry.at("file").get<std::string>()), entry.at("label").get<int>(),
                           origin});
    }
  }
  return pools;
}

void write_dataset(const std::vector<WsiRecord>& records, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  for (const auto& record : records) {
    write_ppm(dir / "images" / (record.id + ".ppm"), record.image);
    write_pgm(dir / "masks" / (record.id + ".pgm"), record.mask);
  }
}

std::vector<WsiRecord> load_dataset(const std::filesystem::path& dir) {
  const auto image_dir = dir / "images";
  if (!std::filesystem::is_directory(image_dir)) throw IoError("missing images/ directory under " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(image_dir)) {
    if (entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .ppm images under " + image_dir.string());
  std::vector<WsiRecord> records;
  for (const auto& file : files) {
    WsiRecord record;
    record.id = file.stem().string();
    record.image = read_ppm(file);
    record.mask = read_pgm(dir / "masks" / (record.id + ".pgm"));
    if (record.mask.height != record.image.height || record.mask.width != record.image.width) {
      throw DataError("image and mask dimensions disagree for " + record.id);
    }
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace mixseg
