#include "mixseg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "mixseg/rng.hpp"

namespace mixseg {

void SynthConfig::validate() const {
  if (num_wsis < 1) throw ConfigError("num_wsis must be positive");
  if (side < 32) throw ConfigError("side must be at least 32 pixels");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (blob_count_min < 1 || blob_count_max < blob_count_min) throw ConfigError("invalid blob count range");
  if (blob_radius_min_frac <= 0.0 || blob_radius_max_frac < blob_radius_min_frac || blob_radius_max_frac > 0.5) {
    throw ConfigError("blob radius fractions must satisfy 0 < min <= max <= 0.5");
  }
}

namespace {

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)); }

struct Blob {
  double center_row, center_col;
  double radius;
  double wiggle;
  double phase1, phase2;
  double stripe_angle;   // per-blob orientation: carries no class information
  double stripe_phase;
  double stripe_period;
  double stripe_amp;
  double jitter_r, jitter_g, jitter_b;
  int class_label;
};

// Irregular blob outline: base radius modulated by two low harmonics.
bool inside_blob(const Blob& blob, int row, int col) {
  const double dr = row - blob.center_row;
  const double dc = col - blob.center_col;
  const double dist = std::sqrt(dr * dr + dc * dc);
  if (dist > (1.0 + 1.6 * blob.wiggle) * blob.radius) return false;
  const double theta = std::atan2(dr, dc);
  const double boundary = blob.radius * (1.0 + blob.wiggle * std::sin(3.0 * theta + blob.phase1) +
                                         0.5 * blob.wiggle * std::sin(5.0 * theta + blob.phase2));
  return dist <= boundary;
}

// Foreground classes share one stripe family on one palette and differ only
// in stripe period; each blob draws its own stripe orientation, phase,
// contrast and a small period jitter. A class is therefore identified by a
// scale statistic that single patches expose only partially, while color
// alone says nothing.
double class_stripe_period(int label) { return 4.0 * std::pow(1.85, label - 1); }

double stripe_offset(const Blob& blob, int row, int col) {
  const double u = row * std::sin(blob.stripe_angle) + col * std::cos(blob.stripe_angle) + blob.stripe_phase;
  const double cycle = u / blob.stripe_period - std::floor(u / blob.stripe_period);
  return cycle < 0.5 ? blob.stripe_amp : -blob.stripe_amp;
}

}  // namespace

std::vector<WsiRecord> synth_dataset(const SynthConfig& config) {
  config.validate();
  std::vector<WsiRecord> records;
  records.reserve(static_cast<std::size_t>(config.num_wsis));

  for (int w = 0; w < config.num_wsis; ++w) {
    Rng rng(derive_seed(config.seed, "wsi", w));
    WsiRecord record;
    record.id = "wsi" + std::to_string(w);
    record.image = ImageRgb::filled(config.side, config.side, 0, 0, 0);
    record.mask = LabelMask::filled(config.side, config.side, 0);

    const int blob_count = rng.next_int(config.blob_count_min, config.blob_count_max);
    std::vector<Blob> blobs;
    for (int b = 0; b < blob_count; ++b) {
      Blob blob;
      blob.center_row = rng.uniform(0.12, 0.88) * config.side;
      blob.center_col = rng.uniform(0.12, 0.88) * config.side;
      blob.radius = rng.uniform(config.blob_radius_min_frac, config.blob_radius_max_frac) * config.side;
      blob.wiggle = config.boundary_wiggle;
      blob.phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
      blob.phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
      blob.stripe_angle = static_cast<double>(rng.next_below(2)) * std::numbers::pi / 2.0;
      blob.stripe_phase = rng.uniform(0.0, 32.0);
      blob.stripe_amp = config.texture_amp *
                        rng.uniform(1.0 - config.stripe_amp_jitter, 1.0 + config.stripe_amp_jitter);
      blob.jitter_r = rng.uniform(-config.color_jitter, config.color_jitter);
      blob.jitter_g = rng.uniform(-config.color_jitter, config.color_jitter);
      blob.jitter_b = rng.uniform(-config.color_jitter, config.color_jitter);
      // Cycle through the foreground classes so every class appears.
      blob.class_label = 1 + (b % (config.num_classes - 1));
      blob.stripe_period = class_stripe_period(blob.class_label) *
                           rng.uniform(1.0 - config.stripe_period_jitter, 1.0 + config.stripe_period_jitter);
      blobs.push_back(blob);
    }

    // Slow illumination drift across the slide.
    const double phase_r = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double phase_c = rng.uniform(0.0, 2.0 * std::numbers::pi);

    for (int row = 0; row < config.side; ++row) {
      for (int col = 0; col < config.side; ++col) {
        const Blob* owner = nullptr;
        for (const auto& blob : blobs) {  // later blobs overwrite earlier ones
          if (inside_blob(blob, row, col)) owner = &blob;
        }
        record.mask.at(row, col) = static_cast<std::uint8_t>(owner ? owner->class_label : 0);

        double r, g, b;
        if (!owner) {
          r = 233, g = 210, b = 222;
          // Background speckle.
          const double speck = rng.next_double() < 0.06 ? -18.0 : 0.0;
          r += speck;
          g += speck;
          b += speck;
        } else {
          // One shared foreground palette: only the stripe scale separates
          // the classes.
          r = 176;
          g = 130;
          b = 172;
          const double s = stripe_offset(*owner, row, col);
          r += 0.5 * s;
          g += s;
          b += 0.7 * s;
          r += owner->jitter_r;
          g += owner->jitter_g;
          b += owner->jitter_b;
        }
        const double drift = 6.0 * std::sin(2.0 * std::numbers::pi * row / config.side + phase_r) +
                             6.0 * std::sin(2.0 * std::numbers::pi * col / config.side + phase_c);
        const double noise = rng.uniform(-config.noise_amp, config.noise_amp);
        std::uint8_t* px = record.image.at(row, col);
        px[0] = clamp_u8(r + drift + noise);
        px[1] = clamp_u8(g + drift + rng.uniform(-config.noise_amp, config.noise_amp));
        px[2] = clamp_u8(b + drift + rng.uniform(-config.noise_amp, config.noise_amp));
      }
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::kS: return "S";
    case Mode::kSC: return "S+C";
    case Mode::kSCStar: return "S+C*";
    case Mode::kS2C2: return "S2+C2";
    case Mode::kS2C2Star: return "S2+C2*";
    case Mode::kS2StarC2: return "S2*+C2";
  }
  throw ConfigError("unknown mode");
}

Mode parse_mode(const std::string& name) {
  if (name == "S") return Mode::kS;
  if (name == "S+C") return Mode::kSC;
  if (name == "S+C*") return Mode::kSCStar;
  if (name == "S2+C2") return Mode::kS2C2;
  if (name == "S2+C2*") return Mode::kS2C2Star;
  if (name == "S2*+C2") return Mode::kS2StarC2;
  throw ConfigError("unknown mode '" + name + "' (expected S, S+C, S+C*, S2+C2, S2+C2* or S2*+C2)");
}

std::string mode_file_tag(Mode mode) {
  std::string tag = mode_name(mode);
  std::string out;
  for (char c : tag) {
    if (c == '*') {
      out += "star";
    } else {
      out += c;
    }
  }
  return out;
}

bool is_head_mode(Mode mode) {
  return mode == Mode::kS2C2 || mode == Mode::kS2C2Star || mode == Mode::kS2StarC2;
}

int percent_count(double percent, int pool_size) {
  return static_cast<int>(std::floor(percent / 100.0 * pool_size + 0.5));
}

const std::vector<SplitOverride>& pool_615_400_reference_counts() {
  static const std::vector<SplitOverride> counts = {
      {0.0, 0, 400},   {1.0, 6, 396},   {2.5, 15, 390},  {5.0, 30, 380},  {7.5, 46, 370},
      {10.0, 61, 360}, {15.0, 92, 340}, {20.0, 123, 320}, {25.0, 153, 300}, {30.0, 184, 280},
      {40.0, 246, 240}, {50.0, 307, 200}, {75.0, 461, 100}, {100.0, 615, 0}};
  return counts;
}

namespace {

std::vector<int> sample_indices(int pool_size, int count, std::uint64_t seed) {
  std::vector<int> all(static_cast<std::size_t>(pool_size));
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed);
  rng.shuffle(all);
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

const SplitOverride* find_override(const std::vector<SplitOverride>& overrides, double percent) {
  for (const auto& o : overrides) {
    if (std::llround(o.percent * 10.0) == std::llround(percent * 10.0)) return &o;
  }
  return nullptr;
}

}  // namespace

SplitSchedule split_schedule(int seg_pool_size, int cls_pool_size, Mode mode, double percent, int repeat,
                             std::uint64_t seed, const std::vector<SplitOverride>& overrides, int cls_eligible) {
  if (seg_pool_size < 0 || cls_pool_size < 0) throw ConfigError("pool sizes must be non-negative");
  if (percent < 0.0 || percent > 100.0) {
    throw ConfigError("percent must lie in [0,100], got " + std::to_string(percent));
  }
  if (is_head_mode(mode) && percent > 50.0) {
    throw ConfigError("head-experiment percentages are capped at 50, got " + std::to_string(percent));
  }
  if (cls_eligible < 0) cls_eligible = cls_pool_size;
  if (cls_eligible > cls_pool_size) throw ConfigError("cls_eligible exceeds the classification pool");

  SplitSchedule schedule;
  schedule.mode = mode;
  schedule.percent = percent;
  schedule.repeat = repeat;
  schedule.seed = seed;

  const SplitOverride* ov = is_head_mode(mode) ? nullptr : find_override(overrides, percent);
  switch (mode) {
    case Mode::kS:
      schedule.seg_count = ov ? ov->seg_count : percent_count(percent, seg_pool_size);
      schedule.cls_count = 0;
      break;
    case Mode::kSC:
      schedule.seg_count = ov ? ov->seg_count : percent_count(percent, seg_pool_size);
      schedule.cls_count = ov ? ov->cls_count : percent_count(100.0 - percent, cls_pool_size);
      break;
    case Mode::kSCStar:
      schedule.seg_count = ov ? ov->seg_count : percent_count(percent, seg_pool_size);
      schedule.cls_count = cls_eligible;
      break;
    case Mode::kS2C2:
      schedule.seg_count = percent_count(100.0 - 2.0 * percent, seg_pool_size);
      schedule.cls_count = percent_count(percent, cls_pool_size);
      break;
    case Mode::kS2C2Star:
      schedule.seg_count = percent_count(100.0 - 2.0 * percent, seg_pool_size);
      schedule.cls_count = percent_count(50.0, cls_pool_size);
      break;
    case Mode::kS2StarC2:
      schedule.seg_count = seg_pool_size;
      schedule.cls_count = percent_count(percent, cls_pool_size);
      break;
  }

  if (schedule.seg_count > seg_pool_size) {
    throw ConfigError("schedule requests " + std::to_string(schedule.seg_count) + " segmentation patches from a pool of " +
                      std::to_string(seg_pool_size));
  }
  if (schedule.cls_count > cls_eligible) {
    throw ConfigError("schedule requests " + std::to_string(schedule.cls_count) +
                      " classification patches but only " + std::to_string(cls_eligible) + " are eligible");
  }

  schedule.seg_indices = sample_indices(seg_pool_size, schedule.seg_count, derive_seed(seed, "seg-subset"));
  schedule.cls_indices = sample_indices(cls_eligible, schedule.cls_count, derive_seed(seed, "cls-subset"));
  return schedule;
}

void write_schedule_csv(const std::filesystem::path& path, const std::vector<SplitSchedule>& schedules) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "mode,percent,repeat,seed,seg_count,cls_count\n";
  char buf[160];
  for (const auto& s : schedules) {
    std::snprintf(buf, sizeof(buf), "%s,%.10g,%d,%llu,%d,%d\n", mode_name(s.mode).c_str(), s.percent, s.repeat,
                  static_cast<unsigned long long>(s.seed), s.seg_count, s.cls_count);
    out << buf;
  }
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace mixseg
