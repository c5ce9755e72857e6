#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace osteo {

/// Single-channel image with intensities normalized to [0,1].
/// 8-bit sources are divided by 255, 16-bit by 65535 at load time.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // row-major, height*width

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.f)
      : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

  float& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
  bool empty() const { return pixels.empty(); }
  size_t size() const { return pixels.size(); }
};

/// Binary mask paired with a GrayImage of the same dimensions.
/// Zero = background, non-zero = bone.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;  // row-major

  BinaryMask() = default;
  BinaryMask(int w, int h, uint8_t fill = 0)
      : width(w), height(h), bits(static_cast<size_t>(w) * h, fill) {}

  uint8_t& at(int y, int x) { return bits[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x]; }
};

class ImageError : public std::runtime_error {
 public:
  explicit ImageError(const std::string& msg) : std::runtime_error(msg) {}
};

// PNG I/O. Load normalizes 8/16-bit grayscale to [0,1]; multi-channel
// inputs are rejected. Save writes 16-bit grayscale to preserve precision.
GrayImage load_png(const std::string& path);
void save_png(const GrayImage& img, const std::string& path);

BinaryMask load_mask_png(const std::string& path);
void save_mask_png(const BinaryMask& mask, const std::string& path);

// Bilinear resize to out_w x out_h.
GrayImage resize_bilinear(const GrayImage& img, int out_w, int out_h);

// Rotate about the image center by `degrees`, bilinear interpolation,
// out-of-frame regions filled with 0. Dimensions preserved.
GrayImage rotate_about_center(const GrayImage& img, double degrees);

GrayImage flip_horizontal(const GrayImage& img);
GrayImage flip_vertical(const GrayImage& img);

// Copy of the rectangle [x, x+w) x [y, y+h); must lie inside the image.
GrayImage crop_rect(const GrayImage& img, int x, int y, int w, int h);

}  // namespace osteo
