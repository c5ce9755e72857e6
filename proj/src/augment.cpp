#include "osteo/augment.hpp"

#include <algorithm>
#include <cmath>

#include "osteo/segment.hpp"

namespace osteo::augment {

void AugmentConfig::validate() const {
  if (global_size < 1 || local_size < 1) throw AugmentError("view sizes must be positive");
  if (n_local < 0) throw AugmentError("n_local must be >= 0");
  if (!(nonzero_threshold >= 0.0 && nonzero_threshold < 1.0))
    throw AugmentError("nonzero_threshold must lie in [0,1)");
  if (max_attempts < 1) throw AugmentError("max_attempts must be >= 1");
  auto check_range = [](std::pair<double, double> r, const char* name) {
    if (!(r.first > 0.0 && r.first <= r.second && r.second <= 1.0))
      throw AugmentError(std::string(name) + " scale range must satisfy 0 < min <= max <= 1");
  };
  check_range(global_scale_range, "global");
  check_range(local_scale_range, "local");
}

Rng make_rng(uint64_t seed, uint64_t sample_id, uint64_t epoch) {
  // splitmix64-style mixing so nearby (seed, sample, epoch) triples give
  // uncorrelated streams.
  auto mix = [](uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  uint64_t s = mix(seed);
  s = mix(s ^ mix(sample_id + 0x51ed27f4a3c1dULL));
  s = mix(s ^ mix(epoch + 0xabcdef1234567ULL));
  return Rng(s);
}

GrayImage random_rotate(const GrayImage& image, double range_deg, Rng& rng) {
  std::uniform_real_distribution<double> dist(-range_deg, range_deg);
  double angle = dist(rng);
  return rotate_about_center(image, angle);
}

GrayImage random_flip(const GrayImage& image, double hflip_prob, double vflip_prob, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  bool h = u(rng) < hflip_prob;
  bool v = u(rng) < vflip_prob;
  GrayImage out = image;
  if (h) out = flip_horizontal(out);
  if (v) out = flip_vertical(out);
  return out;
}

GrayImage sample_crop(const GrayImage& image, int out_size,
                      std::pair<double, double> scale_range, Rng& rng) {
  if (image.width < 2 || image.height < 2)
    throw AugmentError("sample_crop: image smaller than 2x2");
  const double area = static_cast<double>(image.width) * image.height;
  std::uniform_real_distribution<double> scale_dist(scale_range.first, scale_range.second);
  std::uniform_real_distribution<double> logratio_dist(std::log(3.0 / 4.0),
                                                       std::log(4.0 / 3.0));
  for (int attempt = 0; attempt < 10; ++attempt) {
    double target = scale_dist(rng) * area;
    double ratio = std::exp(logratio_dist(rng));
    int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w < 1 || h < 1 || w > image.width || h > image.height) continue;
    std::uniform_int_distribution<int> xd(0, image.width - w);
    std::uniform_int_distribution<int> yd(0, image.height - h);
    int x = xd(rng), y = yd(rng);
    return resize_bilinear(crop_rect(image, x, y, w, h), out_size, out_size);
  }
  // Center-crop fallback with the aspect ratio clamped to [3/4, 4/3].
  double in_ratio = static_cast<double>(image.width) / image.height;
  int w, h;
  if (in_ratio < 3.0 / 4.0) {
    w = image.width;
    h = std::min(image.height, static_cast<int>(std::lround(w / (3.0 / 4.0))));
  } else if (in_ratio > 4.0 / 3.0) {
    h = image.height;
    w = std::min(image.width, static_cast<int>(std::lround(h * (4.0 / 3.0))));
  } else {
    w = image.width;
    h = image.height;
  }
  int x = (image.width - w) / 2;
  int y = (image.height - h) / 2;
  return resize_bilinear(crop_rect(image, x, y, w, h), out_size, out_size);
}

RejectionResult rejection_crop(const GrayImage& image, int out_size,
                               std::pair<double, double> scale_range, double threshold,
                               int max_attempts, Rng& rng) {
  RejectionResult best;
  best.fraction = -1.0;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    GrayImage view = sample_crop(image, out_size, scale_range, rng);
    double frac = segment::nonzero_fraction(view);
    if (frac > best.fraction) {
      best.view = std::move(view);
      best.fraction = frac;
      best.attempts = attempt;
    }
    if (best.fraction >= threshold) {
      best.fallback = false;
      best.attempts = attempt;
      return best;
    }
  }
  best.fallback = true;
  best.attempts = max_attempts;
  return best;
}

namespace {

MultiCropViews run_multi_crop(const GrayImage& image, const AugmentConfig& config, Rng& rng,
                              bool extended) {
  config.validate();
  MultiCropViews views;
  auto one_view = [&](int out_size, std::pair<double, double> scale, bool& fallback_out) {
    GrayImage v = random_rotate(image, config.rotation_range, rng);
    v = random_flip(v, config.hflip_prob, config.vflip_prob, rng);
    if (extended) {
      auto r = rejection_crop(v, out_size, scale, config.nonzero_threshold,
                              config.max_attempts, rng);
      fallback_out = r.fallback;
      return r.view;
    }
    fallback_out = false;
    return sample_crop(v, out_size, scale, rng);
  };
  for (int i = 0; i < 2; ++i) {
    bool fb = false;
    views.globals.push_back(one_view(config.global_size, config.global_scale_range, fb));
    views.global_fallback.push_back(fb);
  }
  for (int i = 0; i < config.n_local; ++i) {
    bool fb = false;
    views.locals.push_back(one_view(config.local_size, config.local_scale_range, fb));
    views.local_fallback.push_back(fb);
  }
  return views;
}

}  // namespace

MultiCropViews multi_crop(const GrayImage& image, const AugmentConfig& config, Rng& rng) {
  return run_multi_crop(image, config, rng, false);
}

MultiCropViews extended_multi_crop(const GrayImage& image, const AugmentConfig& config,
                                   Rng& rng) {
  return run_multi_crop(image, config, rng, true);
}

MultiCropViews make_views(const GrayImage& image, const AugmentConfig& config, Rng& rng) {
  return run_multi_crop(image, config, rng, config.extended);
}

}  // namespace osteo::augment
