#pragma once

#include <string>
#include <vector>

#include "mixseg/image.hpp"

namespace mixseg {

// Where a patch was cut from; written to the pool manifest.
struct Provenance {
  std::string wsi_id;
  int row = 0;
  int col = 0;
  std::string category;  // "tile", "centered", ...
};

// Patch with pixel-level supervision.
struct SegSample {
  ImageRgb image;
  LabelMask mask;
  Provenance origin;
};

// Patch with a single image-level label.
struct ClsSample {
  ImageRgb image;
  int label = 0;
  Provenance origin;
};

struct PatchPools {
  std::vector<SegSample> seg;
  std::vector<ClsSample> cls;
};

// A raster image paired with its ground-truth mask.
struct WsiRecord {
  std::string id;
  ImageRgb image;
  LabelMask mask;
};

}  // namespace mixseg
