#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixseg/errors.hpp"
#include "mixseg/patch.hpp"

namespace mixseg {

// Synthetic dataset: a textured background plus irregular class-specific
// textured blobs, with exact ground-truth masks. Classes share overlapping
// color ranges and differ mainly in local texture, so single patches carry a
// learnable but non-trivial signal.
struct SynthConfig {
  int num_wsis = 8;
  int side = 256;
  int num_classes = 4;  // class 0 is background
  int blob_count_min = 5;
  int blob_count_max = 8;
  double blob_radius_min_frac = 0.16;  // of the image side
  double blob_radius_max_frac = 0.34;
  double boundary_wiggle = 0.14;   // outline harmonic amplitude (0 = round blobs)
  double texture_amp = 40.0;       // class pattern contrast, in 8-bit counts
  double stripe_amp_jitter = 0.15;  // per-blob contrast spread (fraction of texture_amp)
  double stripe_period_jitter = 0.04;  // per-blob stripe period spread
  double noise_amp = 10.0;         // uniform per-pixel noise
  double color_jitter = 12.0;       // per-blob base color shift
  std::uint64_t seed = 0;

  void validate() const;
};

std::vector<WsiRecord> synth_dataset(const SynthConfig& config);

// Training-data composition modes. S/S+C/S+C* vary the segmentation share s;
// the *2 modes are the classifier-head settings driven by the share c.
enum class Mode { kS, kSC, kSCStar, kS2C2, kS2C2Star, kS2StarC2 };

std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);
std::string mode_file_tag(Mode mode);  // filename-safe ('*' becomes "star")
bool is_head_mode(Mode mode);

// Percentage-to-count conversion, round half up.
int percent_count(double percent, int pool_size);

// Explicit per-percentage counts overriding percent_count, for reproducing
// externally fixed subset sizes.
struct SplitOverride {
  double percent = 0.0;
  int seg_count = 0;
  int cls_count = 0;
};

// The published subset sizes for a 615-segmentation / 400-classification
// pool across the standard percentage grid.
const std::vector<SplitOverride>& pool_615_400_reference_counts();

struct SplitSchedule {
  Mode mode = Mode::kS;
  double percent = 0.0;
  int repeat = 0;
  std::uint64_t seed = 0;
  int seg_count = 0;
  int cls_count = 0;
  std::vector<int> seg_indices;  // sorted indices into the segmentation pool
  std::vector<int> cls_indices;  // sorted indices into the classification pool
};

// Computes subset sizes for one (mode, percent, repeat) cell and samples the
// member indices. The seed must not encode the mode: for a fixed
// (percent, repeat) every mode then shares the same segmentation subset.
// cls_eligible, when non-negative, restricts classification sampling to the
// first cls_eligible indices (the training half in head experiments) while
// percentages stay relative to cls_pool_size.
SplitSchedule split_schedule(int seg_pool_size, int cls_pool_size, Mode mode, double percent, int repeat,
                             std::uint64_t seed, const std::vector<SplitOverride>& overrides = {},
                             int cls_eligible = -1);

void write_schedule_csv(const std::filesystem::path& path, const std::vector<SplitSchedule>& schedules);

}  // namespace mixseg
