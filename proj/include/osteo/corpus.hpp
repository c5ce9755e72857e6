#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace osteo::corpus {

enum class Label { normal = 0, osteoporosis = 1 };
enum class Split { train = 0, val = 1, test = 2 };

constexpr std::array<const char*, 7> kBoneNames = {
    "ulna",        "radius",      "metacarpal1", "metacarpal2",
    "metacarpal3", "metacarpal4", "metacarpal5"};

bool is_valid_bone_name(const std::string& name);

const char* to_string(Label l);
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct SubjectRecord {
  std::string subject_id;
  double t_score = 0.0;
  std::string image_path;
};

struct SegmentRecord {
  std::string subject_id;
  std::string bone_name;
  std::string image_path;
  std::string mask_path;
  double t_score = 0.0;
  Label label = Label::normal;
  Split split = Split::train;
};

struct SplitSummary {
  // counts[split][label]
  std::array<std::array<int, 2>, 3> counts{};
  std::array<double, 3> positive_fraction{};
  double global_positive_fraction = 0.0;
  int total = 0;
};

class CorpusError : public std::runtime_error {
 public:
  explicit CorpusError(const std::string& msg) : std::runtime_error(msg) {}
};

// Osteoporosis iff t_score strictly below -2.5; exactly -2.5 is normal.
Label label_from_tscore(double t_score);

struct Manifest {
  std::vector<SubjectRecord> subjects;
  std::vector<SegmentRecord> segments;
};

// Parses a manifest CSV with header
//   subject_id,bone_name,image_path,mask_path,t_score
// Optional trailing label,split columns (as written by save_manifest) are
// accepted and re-derived/preserved. Errors carry the offending line number.
Manifest load_manifest(const std::string& path);

// Writes the full CSV including label and split columns.
void save_manifest(const std::vector<SegmentRecord>& segments, const std::string& path);

// Assigns splits subject-atomically with label stratification: subjects are
// grouped by label, shuffled by `seed`, and allocated to splits by largest
// remainder against the ratio targets. All segments of a subject share its
// split. Ratios default to 8:1:1.
void stratified_split(std::vector<SegmentRecord>& segments,
                      const std::array<int, 3>& ratios, uint64_t seed);

SplitSummary summarize_splits(const std::vector<SegmentRecord>& segments);

}  // namespace osteo::corpus
