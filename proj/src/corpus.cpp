#include "osteo/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace osteo::corpus {

bool is_valid_bone_name(const std::string& name) {
  return std::any_of(kBoneNames.begin(), kBoneNames.end(),
                     [&](const char* b) { return name == b; });
}

const char* to_string(Label l) {
  return l == Label::osteoporosis ? "osteoporosis" : "normal";
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw CorpusError("unknown split name: " + s);
}

Label label_from_tscore(double t_score) {
  if (!std::isfinite(t_score)) throw CorpusError("non-finite t_score");
  return t_score < -2.5 ? Label::osteoporosis : Label::normal;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open manifest: " + path);

  std::string line;
  if (!std::getline(in, line)) throw CorpusError("empty manifest: " + path);
  auto header = split_csv_line(strip(line));
  const std::vector<std::string> required = {"subject_id", "bone_name", "image_path",
                                             "mask_path", "t_score"};
  std::map<std::string, int> col;
  for (size_t i = 0; i < header.size(); ++i) col[strip(header[i])] = static_cast<int>(i);
  for (const auto& c : required)
    if (!col.count(c)) throw CorpusError("manifest missing column '" + c + "': " + path);
  bool has_split = col.count("split") > 0;

  Manifest m;
  std::map<std::string, double> subject_tscore;
  std::set<std::pair<std::string, std::string>> seen_bone;  // (subject, bone+path)
  std::vector<std::string> errors;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = strip(line);
    if (s.empty()) continue;
    auto f = split_csv_line(s);
    if (f.size() < header.size()) {
      errors.push_back("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(f.size()));
      continue;
    }
    SegmentRecord rec;
    rec.subject_id = strip(f[col["subject_id"]]);
    rec.bone_name = strip(f[col["bone_name"]]);
    rec.image_path = strip(f[col["image_path"]]);
    rec.mask_path = strip(f[col["mask_path"]]);
    std::string ts = strip(f[col["t_score"]]);
    if (rec.subject_id.empty()) {
      errors.push_back("line " + std::to_string(line_no) + ": empty subject_id");
      continue;
    }
    if (!is_valid_bone_name(rec.bone_name)) {
      errors.push_back("line " + std::to_string(line_no) + ": unknown bone_name '" +
                       rec.bone_name + "'");
      continue;
    }
    try {
      size_t pos = 0;
      rec.t_score = std::stod(ts, &pos);
      if (pos != ts.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      errors.push_back("line " + std::to_string(line_no) + ": bad t_score '" + ts +
                       "' for subject " + rec.subject_id);
      continue;
    }
    if (!std::isfinite(rec.t_score)) {
      errors.push_back("line " + std::to_string(line_no) + ": non-finite t_score for subject " +
                       rec.subject_id);
      continue;
    }
    // A subject may contribute the same bone from distinct radiographs
    // (both hands); the same (subject, bone, image) triple is a duplicate.
    auto key = std::make_pair(rec.subject_id, rec.bone_name + "|" + rec.image_path);
    if (!seen_bone.insert(key).second) {
      errors.push_back("line " + std::to_string(line_no) + ": duplicate (subject, bone, image) " +
                       rec.subject_id + "/" + rec.bone_name);
      continue;
    }
    auto it = subject_tscore.find(rec.subject_id);
    if (it != subject_tscore.end() && it->second != rec.t_score) {
      errors.push_back("line " + std::to_string(line_no) + ": conflicting t_score for subject " +
                       rec.subject_id);
      continue;
    }
    rec.label = label_from_tscore(rec.t_score);
    if (has_split && static_cast<size_t>(col["split"]) < f.size()) {
      std::string sp = strip(f[col["split"]]);
      if (!sp.empty()) rec.split = split_from_string(sp);
    }
    if (it == subject_tscore.end()) {
      subject_tscore[rec.subject_id] = rec.t_score;
      m.subjects.push_back({rec.subject_id, rec.t_score, rec.image_path});
    }
    m.segments.push_back(std::move(rec));
  }
  if (!errors.empty()) {
    std::string msg = "manifest errors in " + path + ":";
    for (const auto& e : errors) msg += "\n  " + e;
    throw CorpusError(msg);
  }
  return m;
}

void save_manifest(const std::vector<SegmentRecord>& segments, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write manifest: " + path);
  out << "subject_id,bone_name,image_path,mask_path,t_score,label,split\n";
  for (const auto& r : segments) {
    out << r.subject_id << ',' << r.bone_name << ',' << r.image_path << ',' << r.mask_path
        << ',' << r.t_score << ',' << to_string(r.label) << ',' << to_string(r.split) << '\n';
  }
}

void stratified_split(std::vector<SegmentRecord>& segments,
                      const std::array<int, 3>& ratios, uint64_t seed) {
  if (segments.empty()) throw CorpusError("no segments to split");
  for (int r : ratios)
    if (r <= 0) throw CorpusError("split ratios must be positive");

  // Group subjects, carrying the subject label.
  std::map<std::string, Label> subjects;
  for (const auto& s : segments) subjects[s.subject_id] = s.label;
  if (subjects.size() < 3) throw CorpusError("need at least 3 subjects for a 3-way split");

  std::vector<std::string> pos, neg;
  for (const auto& [id, lab] : subjects)
    (lab == Label::osteoporosis ? pos : neg).push_back(id);

  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  const double ratio_sum = ratios[0] + ratios[1] + ratios[2];
  std::map<std::string, Split> assignment;
  auto allocate = [&](const std::vector<std::string>& ids) {
    const int n = static_cast<int>(ids.size());
    std::array<int, 3> take{};
    std::array<double, 3> frac{};
    int assigned = 0;
    for (int k = 0; k < 3; ++k) {
      double target = n * ratios[k] / ratio_sum;
      take[k] = static_cast<int>(std::floor(target));
      frac[k] = target - take[k];
      assigned += take[k];
    }
    // Largest remainder; ties resolved toward the smaller split so val/test
    // are not starved on tiny groups.
    std::array<int, 3> order = {2, 1, 0};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return frac[a] > frac[b]; });
    for (int k = 0; assigned < n; ++assigned, k = (k + 1) % 3) take[order[k]]++;
    int idx = 0;
    for (int k = 0; k < 3; ++k)
      for (int i = 0; i < take[k]; ++i) assignment[ids[idx++]] = static_cast<Split>(k);
  };
  allocate(pos);
  allocate(neg);

  for (auto& s : segments) s.split = assignment.at(s.subject_id);
}

SplitSummary summarize_splits(const std::vector<SegmentRecord>& segments) {
  SplitSummary sum;
  int global_pos = 0;
  for (const auto& s : segments) {
    sum.counts[static_cast<int>(s.split)][static_cast<int>(s.label)]++;
    if (s.label == Label::osteoporosis) ++global_pos;
    ++sum.total;
  }
  for (int k = 0; k < 3; ++k) {
    int n = sum.counts[k][0] + sum.counts[k][1];
    sum.positive_fraction[k] = n > 0 ? static_cast<double>(sum.counts[k][1]) / n : 0.0;
  }
  sum.global_positive_fraction =
      sum.total > 0 ? static_cast<double>(global_pos) / sum.total : 0.0;
  return sum;
}

}  // namespace osteo::corpus
