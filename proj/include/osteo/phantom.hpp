#pragma once

#include <array>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "osteo/corpus.hpp"
#include "osteo/image.hpp"

namespace osteo::phantom {

class PhantomError : public std::runtime_error {
 public:
  explicit PhantomError(const std::string& msg) : std::runtime_error(msg) {}
};

// Maps a T-score to a cortical shell thickness in pixels at the reference
// bone caliber (16 px full width); render_subject scales it with each bone's
// caliber. Thinner cortex at lower (more severe) T-scores is what makes the
// label learnable.
double default_thickness(double t_score);

struct PhantomSpec {
  int n_subjects = 200;
  int image_size = 160;
  double positive_fraction = 0.29;
  std::function<double(double)> cortical_thickness_map = default_thickness;
  double noise_level = 0.25;
  uint64_t seed = 0;

  void validate() const;
};

struct BoneGeometry {
  std::string name;
  double cx, cy;          // capsule center
  double angle_deg;       // tilt from vertical
  double half_length;
  double half_width;
};

struct SubjectPhantom {
  std::string subject_id;
  double t_score = 0.0;
  GrayImage image;
  std::vector<std::string> bone_names;
  std::vector<BinaryMask> masks;  // one per bone, same order as bone_names
};

// Draws a T-score from the bimodal mixture (components at -3.2 and -0.5,
// sigma 0.6) whose weight is solved so P(t < -2.5) = positive_fraction.
double sample_tscore(const PhantomSpec& spec, std::mt19937_64& rng);

// Renders one subject: 7 capsule bones (2 forearm + 5 metacarpals), each a
// bright cortical shell plus a detached concentric echo band around a dimmer
// speckled core. The shell-to-caliber ratio follows the T-score while the
// combined band mass does not, so the label is a scale-invariant ratio, not
// an absolute pixel statistic. Deterministic given (spec.seed, subject index).
SubjectPhantom render_subject(const PhantomSpec& spec, int subject_index);

// Writes images/, masks/, prompts.jsonl and manifest.csv under out_dir and
// returns the segment records (without split assignment).
std::vector<corpus::SegmentRecord> generate_phantom(const PhantomSpec& spec,
                                                    const std::string& out_dir);

// Deterministic shell-thickness estimate from the ground-truth mask: mean
// bright-pixel fraction scaled by area/perimeter. Used to verify the task is
// well-posed without any model.
double estimate_shell_thickness(const GrayImage& image, const BinaryMask& mask);

// Rule-based classifier backing the well-posedness check: positive when the
// mean thickness-to-caliber ratio across a subject's bones falls below the
// cutoff.
corpus::Label rule_classify(const SubjectPhantom& subject);

}  // namespace osteo::phantom
