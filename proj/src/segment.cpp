#include "osteo/segment.hpp"

#include <algorithm>
#include <fstream>
#include <queue>

#include <json.hpp>

namespace osteo::segment {

GrayImage apply_mask(const GrayImage& image, const BinaryMask& mask) {
  if (image.width != mask.width || image.height != mask.height)
    throw SegmentError("apply_mask: image " + std::to_string(image.width) + "x" +
                       std::to_string(image.height) + " vs mask " +
                       std::to_string(mask.width) + "x" + std::to_string(mask.height));
  GrayImage out = image;
  for (size_t i = 0; i < out.pixels.size(); ++i)
    if (!mask.bits[i]) out.pixels[i] = 0.f;
  return out;
}

GrayImage crop_to_bbox(const GrayImage& seg, int padding) {
  int x0 = seg.width, y0 = seg.height, x1 = -1, y1 = -1;
  for (int y = 0; y < seg.height; ++y)
    for (int x = 0; x < seg.width; ++x)
      if (seg.at(y, x) > 0.f) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) throw SegmentError("crop_to_bbox: segment has no non-zero pixels");
  x0 = std::max(0, x0 - padding);
  y0 = std::max(0, y0 - padding);
  x1 = std::min(seg.width - 1, x1 + padding);
  y1 = std::min(seg.height - 1, y1 + padding);
  return crop_rect(seg, x0, y0, x1 - x0 + 1, y1 - y0 + 1);
}

double nonzero_fraction(const GrayImage& image) {
  if (image.pixels.empty()) return 0.0;
  size_t n = std::count_if(image.pixels.begin(), image.pixels.end(),
                           [](float v) { return v > 0.f; });
  return static_cast<double>(n) / image.pixels.size();
}

namespace {

// 4-connected flood fill over pixels >= threshold, writing `id` into labels.
void flood(const GrayImage& img, double threshold, std::vector<int>& labels, int sx,
           int sy, int id) {
  std::queue<std::pair<int, int>> q;
  q.push({sx, sy});
  labels[(size_t)sy * img.width + sx] = id;
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop();
    const int dx[4] = {1, -1, 0, 0};
    const int dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      int nx = x + dx[k], ny = y + dy[k];
      if (nx < 0 || ny < 0 || nx >= img.width || ny >= img.height) continue;
      size_t idx = (size_t)ny * img.width + nx;
      if (labels[idx] == 0 && img.at(ny, nx) >= threshold) {
        labels[idx] = id;
        q.push({nx, ny});
      }
    }
  }
}

}  // namespace

BinaryMask threshold_segmenter(const GrayImage& image, const PointPromptSet& prompts,
                               double threshold) {
  if (prompts.positives.empty()) throw SegmentError("threshold_segmenter: no positive prompts");
  auto in_bounds = [&](const std::pair<int, int>& p) {
    return p.first >= 0 && p.second >= 0 && p.first < image.width && p.second < image.height;
  };
  for (const auto& p : prompts.positives)
    if (!in_bounds(p)) throw SegmentError("positive prompt out of bounds");
  for (const auto& p : prompts.negatives)
    if (!in_bounds(p)) throw SegmentError("negative prompt out of bounds");

  std::vector<int> labels(image.size(), 0);
  int next_id = 0;
  for (const auto& [px, py] : prompts.positives) {
    if (image.at(py, px) < threshold)
      throw SegmentError("positive prompt (" + std::to_string(px) + "," + std::to_string(py) +
                         ") lies below threshold");
    if (labels[(size_t)py * image.width + px] == 0)
      flood(image, threshold, labels, px, py, ++next_id);
  }
  for (const auto& [nx, ny] : prompts.negatives) {
    int id = labels[(size_t)ny * image.width + nx];
    if (id != 0)
      throw SegmentError("negative prompt lands in a positively-prompted component");
  }
  BinaryMask mask(image.width, image.height);
  for (size_t i = 0; i < labels.size(); ++i) mask.bits[i] = labels[i] > 0 ? 1 : 0;
  return mask;
}

std::vector<BonePrompt> load_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SegmentError("cannot open prompt file: " + path);
  std::vector<BonePrompt> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SegmentError("prompt file line " + std::to_string(line_no) + ": " + e.what());
    }
    BonePrompt bp;
    bp.bone = j.at("bone").get<std::string>();
    for (const auto& p : j.at("pos"))
      bp.prompts.positives.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    if (j.contains("neg"))
      for (const auto& p : j.at("neg"))
        bp.prompts.negatives.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    out.push_back(std::move(bp));
  }
  return out;
}

void save_prompts(const std::vector<BonePrompt>& prompts, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SegmentError("cannot write prompt file: " + path);
  for (const auto& bp : prompts) {
    nlohmann::json j;
    j["bone"] = bp.bone;
    auto pts = nlohmann::json::array();
    for (const auto& [x, y] : bp.prompts.positives) pts.push_back({x, y});
    j["pos"] = pts;
    auto neg = nlohmann::json::array();
    for (const auto& [x, y] : bp.prompts.negatives) neg.push_back({x, y});
    j["neg"] = neg;
    out << j.dump() << '\n';
  }
}

}  // namespace osteo::segment
