#pragma once

#include <string>
#include <utility>
#include <vector>

#include "osteo/image.hpp"

namespace osteo::segment {

class SegmentError : public std::runtime_error {
 public:
  explicit SegmentError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PointPromptSet {
  std::vector<std::pair<int, int>> positives;  // (x, y)
  std::vector<std::pair<int, int>> negatives;
};

// Elementwise mask multiplication: out = image where mask is set, else 0.
GrayImage apply_mask(const GrayImage& image, const BinaryMask& mask);

// Tight bounding box of strictly-positive pixels, expanded by `padding`
// and clamped to the image bounds. All-zero input is an error.
GrayImage crop_to_bbox(const GrayImage& seg, int padding);

// Fraction of pixels strictly greater than zero.
double nonzero_fraction(const GrayImage& image);

// Fallback segmenter for phantom data: the union of connected components of
// pixels >= threshold that contain at least one positive prompt; any
// component touched by a negative prompt is rejected.
BinaryMask threshold_segmenter(const GrayImage& image, const PointPromptSet& prompts,
                               double threshold);

// One prompt line of the JSON-lines prompt file:
//   {"bone":"metacarpal2","pos":[[x,y],...],"neg":[[x,y],...]}
struct BonePrompt {
  std::string bone;
  PointPromptSet prompts;
};

std::vector<BonePrompt> load_prompts(const std::string& path);
void save_prompts(const std::vector<BonePrompt>& prompts, const std::string& path);

}  // namespace osteo::segment
