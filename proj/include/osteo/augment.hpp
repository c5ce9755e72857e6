#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "osteo/image.hpp"

namespace osteo::augment {

class AugmentError : public std::runtime_error {
 public:
  explicit AugmentError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AugmentConfig {
  int global_size = 224;
  int local_size = 96;
  int n_local = 4;  // V
  double rotation_range = 20.0;  // degrees, symmetric
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  std::pair<double, double> global_scale_range = {0.14, 1.0};
  std::pair<double, double> local_scale_range = {0.05, 0.14};
  double nonzero_threshold = 0.10;
  int max_attempts = 100;
  bool extended = false;

  void validate() const;
};

struct MultiCropViews {
  std::vector<GrayImage> globals;  // exactly 2
  std::vector<GrayImage> locals;   // exactly V
  std::vector<bool> global_fallback;
  std::vector<bool> local_fallback;
  std::string source_id;
  uint64_t rng_seed = 0;
};

using Rng = std::mt19937_64;

// Derives an independent RNG stream for one (seed, sample, epoch) triple.
Rng make_rng(uint64_t seed, uint64_t sample_id, uint64_t epoch);

GrayImage random_rotate(const GrayImage& image, double range_deg, Rng& rng);
GrayImage random_flip(const GrayImage& image, double hflip_prob, double vflip_prob, Rng& rng);

// Random resized crop: sub-rectangle with area fraction in scale_range and
// aspect ratio in [3/4, 4/3], bilinearly resized to out_size x out_size.
GrayImage sample_crop(const GrayImage& image, int out_size,
                      std::pair<double, double> scale_range, Rng& rng);

struct RejectionResult {
  GrayImage view;
  bool fallback = false;
  double fraction = 0.0;
  int attempts = 0;
};

// Redraws sample_crop until the non-zero fraction reaches `threshold`; after
// max_attempts the best attempt so far is returned with fallback=true.
RejectionResult rejection_crop(const GrayImage& image, int out_size,
                               std::pair<double, double> scale_range, double threshold,
                               int max_attempts, Rng& rng);

// Original multi-crop: 2 global + V local views, each rotate -> flip -> crop,
// no content guarantee.
MultiCropViews multi_crop(const GrayImage& image, const AugmentConfig& config, Rng& rng);

// Extended multi-crop: every view drawn through rejection_crop with the
// configured non-zero threshold.
MultiCropViews extended_multi_crop(const GrayImage& image, const AugmentConfig& config,
                                   Rng& rng);

// Dispatch on config.extended.
MultiCropViews make_views(const GrayImage& image, const AugmentConfig& config, Rng& rng);

}  // namespace osteo::augment
