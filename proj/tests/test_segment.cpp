#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "osteo/phantom.hpp"
#include "osteo/segment.hpp"
#include "testutil.hpp"

using namespace osteo;

namespace {

phantom::SubjectPhantom small_subject() {
  phantom::PhantomSpec spec;
  spec.n_subjects = 1;
  spec.image_size = 128;
  spec.seed = 7;
  return phantom::render_subject(spec, 0);
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  long inter = 0, uni = 0;
  for (size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    inter += (x && y);
    uni += (x || y);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

std::pair<int, int> mask_centroid(const BinaryMask& m) {
  long sx = 0, sy = 0, n = 0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) { sx += x; sy += y; ++n; }
  return {static_cast<int>(sx / n), static_cast<int>(sy / n)};
}

}  // namespace

TEST_CASE("apply_mask identity and annihilator") {
  GrayImage img(4, 4, 0.5f);
  BinaryMask all(4, 4, 1), none(4, 4, 0);
  auto same = segment::apply_mask(img, all);
  auto zero = segment::apply_mask(img, none);
  for (int i = 0; i < 16; ++i) {
    CHECK(same.pixels[i] == 0.5f);
    CHECK(zero.pixels[i] == 0.0f);
  }
}

TEST_CASE("apply_mask left half") {
  GrayImage img(4, 4, 0.5f);
  BinaryMask m(4, 4, 0);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 2; ++x) m.at(y, x) = 1;
  auto out = segment::apply_mask(img, m);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(out.at(y, x) == (x < 2 ? 0.5f : 0.0f));
}

TEST_CASE("crop_to_bbox tight, padded, clamped") {
  GrayImage img(32, 32, 0.0f);
  img.at(10, 10) = 1.0f;
  auto one = segment::crop_to_bbox(img, 0);
  CHECK(one.width == 1);
  CHECK(one.height == 1);
  CHECK(one.at(0, 0) == 1.0f);

  GrayImage span(32, 32, 0.0f);
  for (int y = 5; y <= 20; ++y)
    for (int x = 3; x <= 9; ++x) span.at(y, x) = 0.7f;
  auto padded = segment::crop_to_bbox(span, 2);
  CHECK(padded.height == 20);  // rows 3..22
  CHECK(padded.width == 11);   // cols 1..11

  auto clamped = segment::crop_to_bbox(span, 100);
  CHECK(clamped.width == 32);
  CHECK(clamped.height == 32);

  GrayImage blank(8, 8, 0.0f);
  CHECK_THROWS_AS(segment::crop_to_bbox(blank, 0), segment::SegmentError);
}

TEST_CASE("nonzero_fraction matches direct counting") {
  GrayImage zero(10, 10, 0.0f);
  CHECK(segment::nonzero_fraction(zero) == 0.0);

  GrayImage half(10, 10, 0.0f);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 10; ++x) half.at(y, x) = 0.3f;
  CHECK(segment::nonzero_fraction(half) == doctest::Approx(0.5));

  // On a real bone segment the value must equal an explicit pixel count.
  auto subj = small_subject();
  auto masked = segment::apply_mask(subj.image, subj.masks[0]);
  auto crop = segment::crop_to_bbox(masked, 8);
  long count = 0;
  for (float p : crop.pixels) count += (p > 0.0f);
  CHECK(segment::nonzero_fraction(crop) ==
        doctest::Approx(static_cast<double>(count) / crop.size()).epsilon(1e-12));
}

TEST_CASE("threshold segmenter recovers a prompted bone") {
  auto subj = small_subject();
  auto [cx, cy] = mask_centroid(subj.masks[2]);
  segment::PointPromptSet prompts;
  prompts.positives = {{cx, cy}};
  auto mask = segment::threshold_segmenter(subj.image, prompts, 0.015);
  CHECK(mask_iou(mask, subj.masks[2]) >= 0.95);
}

TEST_CASE("threshold segmenter rejects background prompts and negative components") {
  auto subj = small_subject();
  segment::PointPromptSet bad;
  bad.positives = {{0, 0}};  // background corner, intensity 0
  CHECK_THROWS_AS(segment::threshold_segmenter(subj.image, bad, 0.015),
                  segment::SegmentError);

  auto [px, py] = mask_centroid(subj.masks[2]);
  auto [nx, ny] = mask_centroid(subj.masks[3]);
  segment::PointPromptSet both;
  both.positives = {{px, py}};
  both.negatives = {{nx, ny}};
  auto mask = segment::threshold_segmenter(subj.image, both, 0.015);
  CHECK(mask_iou(mask, subj.masks[2]) >= 0.95);
  // The negative-prompted bone contributes nothing.
  long overlap = 0;
  for (size_t i = 0; i < mask.bits.size(); ++i)
    overlap += (mask.bits[i] && subj.masks[3].bits[i]);
  CHECK(overlap == 0);
}

TEST_CASE("prompt file round-trip") {
  testutil::TempDir tmp("segment");
  std::vector<segment::BonePrompt> prompts(2);
  prompts[0].bone = "ulna";
  prompts[0].prompts.positives = {{3, 4}, {5, 6}};
  prompts[1].bone = "metacarpal2";
  prompts[1].prompts.positives = {{10, 11}};
  prompts[1].prompts.negatives = {{1, 2}};
  const std::string path = tmp.sub("prompts.jsonl");
  segment::save_prompts(prompts, path);
  auto loaded = segment::load_prompts(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].bone == "ulna");
  CHECK(loaded[0].prompts.positives == prompts[0].prompts.positives);
  CHECK(loaded[1].prompts.negatives == prompts[1].prompts.negatives);
}
