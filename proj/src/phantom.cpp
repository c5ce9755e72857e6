#include "osteo/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "osteo/augment.hpp"
#include "osteo/segment.hpp"

namespace osteo::phantom {

namespace fs = std::filesystem;

// Thickness in px at the reference bone caliber (16 px full width); bones of
// other calibers scale it proportionally, so the class signal is the
// thickness-to-width ratio rather than an absolute pixel count.
double default_thickness(double t_score) {
  return std::clamp(2.2 + 0.85 * (t_score + 2.5), 0.8, 4.6);
}

namespace {
constexpr double kReferenceWidth = 16.0;
// Total bright band (cortex + inner echo) as a fraction of full bone width;
// shared by both classes so bright mass, edge count and erosion response do
// not separate them.
constexpr double kBandRatio = 0.66;
}  // namespace

void PhantomSpec::validate() const {
  if (n_subjects < 1) throw PhantomError("n_subjects must be >= 1");
  if (image_size < 96) throw PhantomError("image too small to place 7 bones (min 96)");
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
    throw PhantomError("positive_fraction must lie in (0,1)");
  if (noise_level < 0.0 || noise_level > 1.0)
    throw PhantomError("noise_level must lie in [0,1]");
  if (!cortical_thickness_map) throw PhantomError("cortical_thickness_map unset");
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

constexpr double kSevereMean = -3.2;
constexpr double kHealthyMean = -0.5;
constexpr double kSigma = 0.6;

double severe_weight(double positive_fraction) {
  double p1 = normal_cdf((-2.5 - kSevereMean) / kSigma);
  double p0 = normal_cdf((-2.5 - kHealthyMean) / kSigma);
  double w = (positive_fraction - p0) / (p1 - p0);
  return std::clamp(w, 0.0, 1.0);
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic per-cell uniform in [0,1) for the coarse speckle lattice.
double cell_noise(uint64_t bone_seed, long cx, long cy) {
  uint64_t h = splitmix64(bone_seed ^ splitmix64(static_cast<uint64_t>(cx) * 0x100000001b3ULL ^
                                                 static_cast<uint64_t>(cy)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Distance from point to the segment (x1,y1)-(x2,y2).
double segment_distance(double px, double py, double x1, double y1, double x2, double y2) {
  double dx = x2 - x1, dy = y2 - y1;
  double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? std::clamp(((px - x1) * dx + (py - y1) * dy) / len2, 0.0, 1.0) : 0.0;
  double cx = x1 + t * dx, cy = y1 + t * dy;
  return std::hypot(px - cx, py - cy);
}

}  // namespace

double sample_tscore(const PhantomSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> severe(kSevereMean, kSigma);
  std::normal_distribution<double> healthy(kHealthyMean, kSigma);
  double t = u(rng) < severe_weight(spec.positive_fraction) ? severe(rng) : healthy(rng);
  return std::clamp(t, -6.0, 3.0);
}

SubjectPhantom render_subject(const PhantomSpec& spec, int subject_index) {
  spec.validate();
  auto rng = augment::make_rng(spec.seed, static_cast<uint64_t>(subject_index), 0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  SubjectPhantom subj;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%04d", subject_index);
  subj.subject_id = buf;
  subj.t_score = sample_tscore(spec, rng);

  const double s = spec.image_size;
  const double scale = s / 160.0;
  // Thickness-to-width ratio set by the T-score; the absolute shell width in
  // pixels varies widely through per-subject stature and per-bone caliber, so
  // only the ratio carries the label.
  const double thickness_ratio = spec.cortical_thickness_map(subj.t_score) / kReferenceWidth;
  // Wide stature range: absolute band widths in pixels span a large range
  // within each class, so fixed-receptive-field statistics are poor label
  // cues while the thickness-to-caliber ratio stays fully informative.
  const double stature = 0.65 + 0.55 * u(rng);
  // Shared pose tilt applied to every bone: orientation is a nuisance the
  // rotation augmentation trains invariance to, and a common tilt keeps
  // neighboring bones parallel so they cannot collide.
  const double pose_deg = (u(rng) - 0.5) * 36.0;
  // Smooth illumination field over the image; it varies within each bone, so
  // local gain behaves like a per-view brightness jitter under cropping.
  double g1 = (u(rng) - 0.5) * 0.7, g2 = (u(rng) - 0.5) * 0.7;
  double g3 = (u(rng) - 0.5) * 0.6, g4 = (u(rng) - 0.5) * 0.6;
  auto illum = [&](double x, double y) {
    double X = x / s - 0.5, Y = y / s - 0.5;
    return std::clamp(1.0 + g1 * X + g2 * Y + g3 * (X * X - 1.0 / 12.0) +
                          g4 * (X * Y),
                      0.70, 1.30);
  };

  std::vector<BoneGeometry> bones;
  for (int i = 0; i < 5; ++i) {
    BoneGeometry b;
    b.name = "metacarpal" + std::to_string(i + 1);
    b.cx = (0.1 + 0.8 * (i + 0.5) / 5.0) * s + (u(rng) - 0.5) * 2.0 * scale;
    b.cy = 0.30 * s + (u(rng) - 0.5) * 6.0 * scale;
    b.angle_deg = pose_deg + (u(rng) - 0.5) * 6.0;
    b.half_length = stature * (0.10 + 0.06 * u(rng)) * s;
    b.half_width = stature * (0.034 + 0.018 * u(rng)) * s;
    bones.push_back(b);
  }
  const char* forearm[2] = {"ulna", "radius"};
  for (int i = 0; i < 2; ++i) {
    BoneGeometry b;
    b.name = forearm[i];
    b.cx = (i == 0 ? 0.30 : 0.70) * s + (u(rng) - 0.5) * 6.0 * scale;
    b.cy = 0.70 * s + (u(rng) - 0.5) * 6.0 * scale;
    b.angle_deg = pose_deg + (u(rng) - 0.5) * 16.0;
    b.half_length = stature * (0.09 + 0.04 * u(rng)) * s;
    b.half_width = stature * (0.048 + 0.027 * u(rng)) * s;
    bones.push_back(b);
  }

  subj.image = GrayImage(spec.image_size, spec.image_size, 0.f);
  for (const auto& b : bones) {
    double rad = b.angle_deg * M_PI / 180.0;
    double ax = std::sin(rad), ay = -std::cos(rad);  // unit axis, near-vertical
    double x1 = b.cx - ax * b.half_length, y1 = b.cy - ay * b.half_length;
    double x2 = b.cx + ax * b.half_length, y2 = b.cy + ay * b.half_length;
    double reach = b.half_width + 1.0;
    if (std::min({x1, x2}) < reach || std::min({y1, y2}) < reach ||
        std::max({x1, x2}) >= s - reach || std::max({y1, y2}) >= s - reach)
      throw PhantomError("bone " + b.name + " does not fit inside the image");

    // Brightness drifts along the bone axis so intensity is not a stable cue
    // across crops of the same bone; the drift amplitude keeps the speckled
    // core ceiling below the 0.6 * max rule threshold and the shell above it.
    const double shell_intensity = 0.88 + 0.02 * u(rng);
    const double core_intensity = 0.33 + 0.02 * u(rng);
    const double noise_b = spec.noise_level * (0.6 + 0.8 * u(rng));
    const double drift_amp = 0.12 * u(rng);
    const double drift_sign = u(rng) < 0.5 ? -1.0 : 1.0;
    // Speckle correlation length scales with the bone caliber so texture
    // grain cannot serve as an absolute pixel-scale reference.
    const double speckle_cell = std::max(1.0, (0.08 + 0.10 * u(rng)) * b.half_width);
    const uint64_t speckle_seed = rng();

    BinaryMask mask(spec.image_size, spec.image_size);
    int x_lo = std::max(0, static_cast<int>(std::floor(std::min(x1, x2) - reach)));
    int x_hi = std::min(spec.image_size - 1, static_cast<int>(std::ceil(std::max(x1, x2) + reach)));
    int y_lo = std::max(0, static_cast<int>(std::floor(std::min(y1, y2) - reach)));
    int y_hi = std::min(spec.image_size - 1, static_cast<int>(std::ceil(std::max(y1, y2) + reach)));
    // Cortical shell plus a detached concentric echo band. The two bright
    // bands together always span kBandRatio of the half-width, so total
    // bright mass, boundary count and erosion loss are class-independent;
    // only the split between outer shell and inner echo follows the T-score.
    // The core gap between them keeps the echo out of the boundary-connected
    // component the thickness rule measures.
    const double band_total = (kBandRatio + 0.12 * (2.0 * u(rng) - 1.0)) * b.half_width;
    const double th_eff =
        std::clamp(thickness_ratio * 2.0 * b.half_width, 0.6, band_total - 0.2);
    // Random gap width so the locally visible shell-to-gap ratio is not a
    // reliable stand-in for the shell-to-caliber ratio.
    const double gap_w = std::max(1.2, (0.10 + 0.22 * u(rng)) * b.half_width);
    const double echo_out = b.half_width - th_eff - gap_w;
    const double echo_in = std::max(0.0, echo_out - (band_total - th_eff));
    // Band edges soften over a caliber-proportional width, so edge sharpness
    // (like speckle grain) carries no absolute pixel-scale information.
    // Capped below half the gap so the echo stays disconnected from the shell
    // at the rule's brightness cut.
    const double w_soft =
        std::max(0.5, std::min((0.10 + 0.10 * u(rng)) * b.half_width, 0.45 * gap_w));
    auto soft = [&](double d, double edge) {
      return std::clamp((edge - d) / w_soft + 0.5, 0.0, 1.0);
    };
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        double d = segment_distance(x + 0.5, y + 0.5, x1, y1, x2, y2);
        if (d > b.half_width) continue;
        mask.at(y, x) = 1;
        double axial = ((x + 0.5 - b.cx) * ax + (y + 0.5 - b.cy) * ay) / b.half_length;
        double drift = 1.0 + drift_sign * drift_amp * std::clamp(axial, -1.0, 1.0);
        double bright_w = std::clamp(1.0 - soft(d, b.half_width - th_eff) +
                                         soft(d, echo_out) - soft(d, echo_in),
                                     0.0, 1.0);
        double n = cell_noise(speckle_seed, static_cast<long>(x / speckle_cell),
                              static_cast<long>(y / speckle_cell));
        double core_v = core_intensity * (1.0 + noise_b * (2.0 * n - 1.0));
        double v =
            (shell_intensity * bright_w + core_v * (1.0 - bright_w)) * drift * illum(x + 0.5, y + 0.5);
        // Mild fade toward the outer boundary keeps its rim pixels bright for
        // the rule while softening the silhouette edge.
        v *= 0.8 + 0.2 * soft(d, b.half_width - 0.5 * w_soft);
        v = std::clamp(v, 0.02, 1.0);
        subj.image.at(y, x) = static_cast<float>(v);
      }
    }

    // Dark trabecular pores over the remaining core, with a class-independent
    // area budget and a caliber-proportional radius.
    const double pore_target = (0.04 + 0.04 * u(rng)) *
                               (4.0 * b.half_length * b.half_width + M_PI * b.half_width * b.half_width);
    const double pore_r = std::clamp((0.14 + 0.10 * u(rng)) * b.half_width, 0.8, 5.0);
    const double max_off = b.half_width - th_eff - 1.5;
    if (max_off > 0.3 && pore_target >= 1.0) {
      long painted = 0;
      int attempts = 0;
      int max_attempts = static_cast<int>(pore_target) * 10 + 100;
      while (painted < static_cast<long>(pore_target) && attempts++ < max_attempts) {
        double axial = (2.0 * u(rng) - 1.0) * b.half_length;
        double off = (2.0 * u(rng) - 1.0) * max_off;
        double dcx = b.cx + ax * axial - ay * off;
        double dcy = b.cy + ay * axial + ax * off;
        for (int y = static_cast<int>(std::floor(dcy - pore_r));
             y <= static_cast<int>(std::ceil(dcy + pore_r)); ++y) {
          for (int x = static_cast<int>(std::floor(dcx - pore_r));
               x <= static_cast<int>(std::ceil(dcx + pore_r)); ++x) {
            if (y < 0 || x < 0 || y >= spec.image_size || x >= spec.image_size) continue;
            if (std::hypot(x + 0.5 - dcx, y + 0.5 - dcy) > pore_r) continue;
            double d = segment_distance(x + 0.5, y + 0.5, x1, y1, x2, y2);
            if (d > b.half_width - th_eff - 1.0) continue;
            float cur = subj.image.at(y, x);
            // Skips shell and echo pixels so pores never thin the bright bands.
            if (cur >= 0.6f * static_cast<float>(shell_intensity)) continue;
            if (cur != 0.02f) {
              subj.image.at(y, x) = 0.02f;
              ++painted;
            }
          }
        }
      }
    }
    subj.bone_names.push_back(b.name);
    subj.masks.push_back(std::move(mask));
  }
  return subj;
}

std::vector<corpus::SegmentRecord> generate_phantom(const PhantomSpec& spec,
                                                    const std::string& out_dir) {
  spec.validate();
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");
  fs::create_directories(fs::path(out_dir) / "prompts");

  std::vector<corpus::SegmentRecord> records;
  for (int i = 0; i < spec.n_subjects; ++i) {
    SubjectPhantom subj = render_subject(spec, i);
    std::string image_path = (fs::path(out_dir) / "images" / (subj.subject_id + ".png")).string();
    save_png(subj.image, image_path);

    std::vector<segment::BonePrompt> prompts;
    for (size_t b = 0; b < subj.bone_names.size(); ++b) {
      std::string mask_path =
          (fs::path(out_dir) / "masks" / (subj.subject_id + "_" + subj.bone_names[b] + ".png"))
              .string();
      save_mask_png(subj.masks[b], mask_path);

      corpus::SegmentRecord rec;
      rec.subject_id = subj.subject_id;
      rec.bone_name = subj.bone_names[b];
      rec.image_path = image_path;
      rec.mask_path = mask_path;
      rec.t_score = subj.t_score;
      rec.label = corpus::label_from_tscore(subj.t_score);
      records.push_back(std::move(rec));

      // Positive prompt at the mask centroid snapped inside the component;
      // negative prompt near the image corner.
      long sx = 0, sy = 0, n = 0;
      for (int y = 0; y < subj.masks[b].height; ++y)
        for (int x = 0; x < subj.masks[b].width; ++x)
          if (subj.masks[b].at(y, x)) {
            sx += x;
            sy += y;
            ++n;
          }
      int px = static_cast<int>(sx / n), py = static_cast<int>(sy / n);
      segment::BonePrompt bp;
      bp.bone = subj.bone_names[b];
      bp.prompts.positives = {{px, py}};
      bp.prompts.negatives = {{2, 2}};
      prompts.push_back(std::move(bp));
    }
    segment::save_prompts(
        prompts, (fs::path(out_dir) / "prompts" / (subj.subject_id + ".jsonl")).string());
  }
  corpus::save_manifest(records, (fs::path(out_dir) / "manifest.csv").string());
  return records;
}

namespace {

// Full caliber of a capsule-shaped mask from its area A and perimeter P:
// A = P*w/2 - (pi/4)*w^2, solved for the smaller root.
double mask_caliber(const BinaryMask& mask) {
  long area = 0, perimeter = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      ++area;
      if (x == 0 || y == 0 || x == mask.width - 1 || y == mask.height - 1 ||
          !mask.at(y, x - 1) || !mask.at(y, x + 1) || !mask.at(y - 1, x) || !mask.at(y + 1, x))
        ++perimeter;
    }
  if (area == 0 || perimeter == 0) throw PhantomError("degenerate mask");
  double p = static_cast<double>(perimeter), a = static_cast<double>(area);
  double disc = p * p / 4.0 - M_PI * a;
  if (disc < 0.0) disc = 0.0;
  return (p / 2.0 - std::sqrt(disc)) / (M_PI / 2.0);
}

}  // namespace

double estimate_shell_thickness(const GrayImage& image, const BinaryMask& mask) {
  long area = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) ++area;
  if (area == 0) throw PhantomError("empty mask");

  // Brightness cut relative to the local in-mask maximum over a window of
  // one bone caliber, so smooth illumination gradients do not shift the
  // shell/core separation. Two-pass sliding max.
  int R = std::max(3, static_cast<int>(std::lround(mask_caliber(mask))));
  std::vector<float> rowmax(static_cast<size_t>(mask.width) * mask.height, 0.f);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      float m = 0.f;
      for (int k = std::max(0, x - R); k <= std::min(mask.width - 1, x + R); ++k)
        if (mask.at(y, k)) m = std::max(m, image.at(y, k));
      rowmax[static_cast<size_t>(y) * mask.width + x] = m;
    }
  std::vector<float> localmax(rowmax.size(), 0.f);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      float m = 0.f;
      for (int k = std::max(0, y - R); k <= std::min(mask.height - 1, y + R); ++k)
        m = std::max(m, rowmax[static_cast<size_t>(k) * mask.width + x]);
      localmax[static_cast<size_t>(y) * mask.width + x] = m;
    }

  // The shell is the bright component 4-connected to the mask boundary;
  // bright interior speckle/dots are deliberately excluded.
  auto bright = [&](int y, int x) {
    return mask.at(y, x) &&
           image.at(y, x) >= 0.6f * localmax[static_cast<size_t>(y) * mask.width + x];
  };
  std::vector<uint8_t> in_shell(static_cast<size_t>(mask.width) * mask.height, 0);
  std::vector<std::pair<int, int>> stack;
  long perimeter = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      bool boundary = x == 0 || y == 0 || x == mask.width - 1 || y == mask.height - 1 ||
                      !mask.at(y, x - 1) || !mask.at(y, x + 1) || !mask.at(y - 1, x) ||
                      !mask.at(y + 1, x);
      if (!boundary) continue;
      ++perimeter;
      if (bright(y, x) && !in_shell[static_cast<size_t>(y) * mask.width + x]) {
        in_shell[static_cast<size_t>(y) * mask.width + x] = 1;
        stack.emplace_back(y, x);
      }
    }
  if (perimeter == 0) throw PhantomError("degenerate mask");
  long shell_area = static_cast<long>(stack.size());
  while (!stack.empty()) {
    auto [y, x] = stack.back();
    stack.pop_back();
    const int dy[4] = {0, 0, -1, 1}, dx[4] = {-1, 1, 0, 0};
    for (int k = 0; k < 4; ++k) {
      int ny = y + dy[k], nx = x + dx[k];
      if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) continue;
      size_t idx = static_cast<size_t>(ny) * mask.width + nx;
      if (in_shell[idx] || !bright(ny, nx)) continue;
      in_shell[idx] = 1;
      ++shell_area;
      stack.emplace_back(ny, nx);
    }
  }
  return static_cast<double>(shell_area) / perimeter;
}

corpus::Label rule_classify(const SubjectPhantom& subject) {
  double sum = 0.0;
  for (size_t b = 0; b < subject.masks.size(); ++b)
    sum += estimate_shell_thickness(subject.image, subject.masks[b]) /
           mask_caliber(subject.masks[b]);
  double mean = sum / subject.masks.size();
  // Cutoff calibrated to the thickness map's ratio at the T-score boundary
  // (2.2 px at the 16 px reference caliber); scale-free by construction.
  return mean < 0.139 ? corpus::Label::osteoporosis : corpus::Label::normal;
}

}  // namespace osteo::phantom
