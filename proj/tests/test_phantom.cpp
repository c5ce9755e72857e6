#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "osteo/corpus.hpp"
#include "osteo/phantom.hpp"
#include "testutil.hpp"

using namespace osteo;

namespace {

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("spec validation rejects out-of-range fields") {
  phantom::PhantomSpec spec;
  spec.positive_fraction = 1.5;
  CHECK_THROWS_AS(spec.validate(), phantom::PhantomError);
  spec.positive_fraction = 0.29;
  spec.image_size = 8;  // cannot hold 7 bones
  CHECK_THROWS_AS(spec.validate(), phantom::PhantomError);
}

TEST_CASE("thickness map is monotone in the T-score") {
  CHECK(phantom::default_thickness(-4.0) < phantom::default_thickness(1.0));
  double prev = phantom::default_thickness(-5.0);
  for (double t = -4.5; t <= 2.0; t += 0.5) {
    double cur = phantom::default_thickness(t);
    CHECK(cur >= prev);
    prev = cur;
  }
}

TEST_CASE("positive count lands near the configured fraction") {
  phantom::PhantomSpec spec;
  spec.n_subjects = 200;
  spec.image_size = 96;
  spec.seed = 3;
  int positives = 0;
  for (int i = 0; i < spec.n_subjects; ++i) {
    auto subj = phantom::render_subject(spec, i);
    positives += (corpus::label_from_tscore(subj.t_score) == corpus::Label::osteoporosis);
  }
  CHECK(positives >= 50);  // 58 +/- 8
  CHECK(positives <= 66);
}

TEST_CASE("subjects carry 7 bones with disjoint in-bounds masks") {
  phantom::PhantomSpec spec;
  spec.n_subjects = 3;
  spec.image_size = 128;
  spec.seed = 11;
  for (int i = 0; i < 3; ++i) {
    auto subj = phantom::render_subject(spec, i);
    REQUIRE(subj.masks.size() == 7);
    REQUIRE(subj.bone_names.size() == 7);
    std::vector<int> owner(static_cast<size_t>(128) * 128, -1);
    long overlap = 0, total = 0;
    for (size_t b = 0; b < subj.masks.size(); ++b) {
      CHECK(corpus::is_valid_bone_name(subj.bone_names[b]));
      long area = 0;
      for (size_t p = 0; p < subj.masks[b].bits.size(); ++p) {
        if (!subj.masks[b].bits[p]) continue;
        ++area;
        ++total;
        if (owner[p] != -1) ++overlap;  // adjacent bones may touch slightly
        owner[p] = static_cast<int>(b);
      }
      CHECK(area > 0);
    }
    CHECK(overlap < total / 100);
    for (float px : subj.image.pixels) {
      CHECK(px >= 0.0f);
      CHECK(px <= 1.0f);
    }
  }
}

TEST_CASE("lower T-score means thinner measured cortex") {
  phantom::PhantomSpec spec;
  spec.n_subjects = 40;
  spec.image_size = 128;
  spec.noise_level = 0.0;
  spec.seed = 5;
  double sum_pos = 0.0, sum_neg = 0.0;
  int n_pos = 0, n_neg = 0;
  for (int i = 0; i < spec.n_subjects; ++i) {
    auto subj = phantom::render_subject(spec, i);
    double mean_th = 0.0;
    for (size_t b = 0; b < subj.masks.size(); ++b)
      mean_th += phantom::estimate_shell_thickness(subj.image, subj.masks[b]);
    mean_th /= subj.masks.size();
    if (subj.t_score < -2.5) {
      sum_pos += mean_th;
      ++n_pos;
    } else {
      sum_neg += mean_th;
      ++n_neg;
    }
  }
  REQUIRE(n_pos > 0);
  REQUIRE(n_neg > 0);
  CHECK(sum_pos / n_pos < sum_neg / n_neg);
}

TEST_CASE("rule classifier reads the label from the image alone") {
  phantom::PhantomSpec spec;
  spec.n_subjects = 120;
  spec.image_size = 160;
  spec.seed = 0;
  int correct = 0;
  for (int i = 0; i < spec.n_subjects; ++i) {
    auto subj = phantom::render_subject(spec, i);
    correct += (phantom::rule_classify(subj) == corpus::label_from_tscore(subj.t_score));
  }
  CHECK(static_cast<double>(correct) / spec.n_subjects >= 0.95);
}

TEST_CASE("generation is byte-identical for a fixed seed") {
  testutil::TempDir a("phantom-a"), b("phantom-b");
  phantom::PhantomSpec spec;
  spec.n_subjects = 4;
  spec.image_size = 96;
  spec.seed = 21;
  auto ra = phantom::generate_phantom(spec, a.str());
  auto rb = phantom::generate_phantom(spec, b.str());
  REQUIRE(ra.size() == rb.size());
  REQUIRE(ra.size() == 4 * 7);
  for (const auto& rec : ra) {
    auto rel = std::filesystem::relative(rec.image_path, a.path);
    CHECK(read_bytes(rec.image_path) == read_bytes((b.path / rel).string()));
  }
}

TEST_CASE("generated manifest loads back with consistent labels") {
  testutil::TempDir tmp("phantom-m");
  phantom::PhantomSpec spec;
  spec.n_subjects = 5;
  spec.image_size = 96;
  spec.seed = 2;
  phantom::generate_phantom(spec, tmp.str());
  auto manifest = corpus::load_manifest(tmp.sub("manifest.csv"));
  CHECK(manifest.segments.size() == 5 * 7);
  for (const auto& s : manifest.segments)
    CHECK(s.label == corpus::label_from_tscore(s.t_score));
}
