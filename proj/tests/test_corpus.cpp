#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "osteo/corpus.hpp"
#include "testutil.hpp"

using namespace osteo;
using corpus::Label;
using corpus::SegmentRecord;
using corpus::Split;

namespace {

// 7 segments per subject, labels assigned to the first `n_positive` subjects.
std::vector<SegmentRecord> synthetic_segments(int n_subjects, int n_positive) {
  std::vector<SegmentRecord> out;
  for (int s = 0; s < n_subjects; ++s) {
    const bool pos = s < n_positive;
    for (const char* bone : corpus::kBoneNames) {
      SegmentRecord r;
      r.subject_id = "S" + std::to_string(s);
      r.bone_name = bone;
      r.image_path = "img.png";
      r.mask_path = "mask.png";
      r.t_score = pos ? -3.0 : -1.0;
      r.label = corpus::label_from_tscore(r.t_score);
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("label threshold is strict") {
  CHECK(corpus::label_from_tscore(-2.5) == Label::normal);
  CHECK(corpus::label_from_tscore(0.5) == Label::normal);
  CHECK(corpus::label_from_tscore(-2.500001) == Label::osteoporosis);
}

TEST_CASE("bone name validation") {
  CHECK(corpus::is_valid_bone_name("ulna"));
  CHECK(corpus::is_valid_bone_name("metacarpal5"));
  CHECK_FALSE(corpus::is_valid_bone_name("femur"));
}

TEST_CASE("single-class 10 subjects split 8/1/1") {
  auto segs = synthetic_segments(10, 0);
  corpus::stratified_split(segs, {8, 1, 1}, 0);
  std::array<std::set<std::string>, 3> subjects;
  for (const auto& s : segs) subjects[static_cast<int>(s.split)].insert(s.subject_id);
  CHECK(subjects[0].size() == 8);
  CHECK(subjects[1].size() == 1);
  CHECK(subjects[2].size() == 1);
}

TEST_CASE("200-subject split keeps positive fraction near global") {
  auto segs = synthetic_segments(200, 58);  // 29% positive
  corpus::stratified_split(segs, {8, 1, 1}, 0);
  auto summary = corpus::summarize_splits(segs);
  for (int sp = 0; sp < 3; ++sp) {
    CHECK(summary.positive_fraction[sp] >= 0.27);
    CHECK(summary.positive_fraction[sp] <= 0.31);
  }
}

TEST_CASE("split is subject-atomic and leak-free over 50 seeds") {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto segs = synthetic_segments(200, 58);
    corpus::stratified_split(segs, {8, 1, 1}, seed);
    std::map<std::string, Split> seen;
    for (const auto& s : segs) {
      auto it = seen.find(s.subject_id);
      if (it == seen.end()) {
        seen.emplace(s.subject_id, s.split);
      } else {
        CHECK(it->second == s.split);
      }
    }
    auto summary = corpus::summarize_splits(segs);
    for (int sp = 0; sp < 3; ++sp) {
      CHECK(std::abs(summary.positive_fraction[sp] - summary.global_positive_fraction) <=
            0.02 + 1e-12);
    }
  }
}

TEST_CASE("manifest round-trip preserves records") {
  testutil::TempDir tmp("corpus");
  auto segs = synthetic_segments(3, 1);
  corpus::stratified_split(segs, {8, 1, 1}, 1);
  const std::string path = tmp.sub("manifest.csv");
  corpus::save_manifest(segs, path);
  auto loaded = corpus::load_manifest(path);
  REQUIRE(loaded.segments.size() == segs.size());
  for (size_t i = 0; i < segs.size(); ++i) {
    CHECK(loaded.segments[i].subject_id == segs[i].subject_id);
    CHECK(loaded.segments[i].bone_name == segs[i].bone_name);
    CHECK(loaded.segments[i].t_score == doctest::Approx(segs[i].t_score));
    CHECK(loaded.segments[i].label == segs[i].label);
    CHECK(loaded.segments[i].split == segs[i].split);
  }
  CHECK(loaded.subjects.size() == 3);
}

TEST_CASE("manifest with NaN t_score reports the line") {
  testutil::TempDir tmp("corpus");
  const std::string path = tmp.sub("bad.csv");
  std::ofstream f(path);
  f << "subject_id,bone_name,image_path,mask_path,t_score\n";
  f << "S0,ulna,i.png,m.png,-1.0\n";
  f << "S0,radius,i.png,m.png,NaN\n";
  f.close();
  try {
    corpus::load_manifest(path);
    FAIL("expected CorpusError");
  } catch (const corpus::CorpusError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}
