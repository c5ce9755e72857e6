#include "osteo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace osteo::eval {

namespace fs = std::filesystem;

double roc_auc(const PredictionSet& preds) {
  if (preds.empty()) throw EvalError("empty prediction set");
  std::set<std::string> ids;
  long n_pos = 0, n_neg = 0;
  for (const auto& p : preds) {
    if (!(p.score >= 0.0 && p.score <= 1.0) || !std::isfinite(p.score))
      throw EvalError("score outside [0,1] for segment " + p.segment_id);
    if (!ids.insert(p.segment_id).second)
      throw EvalError("duplicate segment id " + p.segment_id);
    (p.label ? n_pos : n_neg)++;
  }
  if (n_pos == 0 || n_neg == 0) throw EvalError("roc_auc needs both classes present");

  // Rank-sum with midranks for ties: AUC = (R_pos - n_pos(n_pos+1)/2) / (n_pos*n_neg).
  std::vector<const Prediction*> sorted;
  sorted.reserve(preds.size());
  for (const auto& p : preds) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(),
            [](const Prediction* a, const Prediction* b) { return a->score < b->score; });
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j < sorted.size() && sorted[j]->score == sorted[i]->score) ++j;
    double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (sorted[k]->label) rank_sum_pos += midrank;
    i = j;
  }
  return (rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
         (static_cast<double>(n_pos) * n_neg);
}

ClassificationScores f1_accuracy(const PredictionSet& preds, double threshold) {
  if (preds.empty()) throw EvalError("empty prediction set");
  ClassificationScores s;
  for (const auto& p : preds) {
    bool pred_pos = p.score >= threshold;
    if (pred_pos && p.label) s.tp++;
    else if (pred_pos && !p.label) s.fp++;
    else if (!pred_pos && p.label) s.fn++;
    else s.tn++;
  }
  s.accuracy = static_cast<double>(s.tp + s.tn) / preds.size();
  if (s.tp == 0) {
    s.f1 = 0.0;  // no true positives (covers the no-positive-prediction case)
  } else {
    double precision = static_cast<double>(s.tp) / (s.tp + s.fp);
    double recall = static_cast<double>(s.tp) / (s.tp + s.fn);
    s.f1 = 2.0 * precision * recall / (precision + recall);
  }
  return s;
}

void append_metrics_csv(const MetricCurve& curve, const std::string& path) {
  bool need_header = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw EvalError("cannot write metrics csv: " + path);
  if (need_header) out << "run_id,epoch,split,metric,value\n";
  out.precision(12);
  for (const auto& p : curve.points)
    out << curve.run_id << ',' << p.epoch << ',' << p.split << ',' << p.metric << ','
        << p.value << '\n';
}

MetricCurve load_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot read metrics csv: " + path);
  MetricCurve curve;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string run_id, epoch, split, metric, value;
    std::getline(ss, run_id, ',');
    std::getline(ss, epoch, ',');
    std::getline(ss, split, ',');
    std::getline(ss, metric, ',');
    std::getline(ss, value, ',');
    curve.run_id = run_id;
    curve.points.push_back({std::stoi(epoch), split, metric, std::stod(value)});
  }
  return curve;
}

namespace {

struct Series {
  std::vector<double> x, y;
};

// Minimal SVG line chart: one panel per metric with train/val/test series.
void write_svg_plot(const std::string& path, const std::string& title,
                    const std::map<std::string, Series>& series) {
  const int w = 640, h = 420, ml = 60, mr = 20, mt = 40, mb = 40;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [name, s] : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto sy = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

  std::ofstream out(path);
  if (!out) throw EvalError("cannot write plot: " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
      << "</text>\n";
  out << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", ymin);
  out << "<text x='8' y='" << h - mb << "' font-size='11'>" << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.3g", ymax);
  out << "<text x='8' y='" << mt + 4 << "' font-size='11'>" << buf << "</text>\n";
  out << "<text x='" << w - mr << "' y='" << h - 8 << "' text-anchor='end' font-size='11'>epoch "
      << static_cast<long>(xmax) << "</text>\n";

  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  int ci = 0, legend_y = mt + 8;
  for (const auto& [name, s] : series) {
    const char* color = colors[ci++ % 4];
    out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (size_t i = 0; i < s.x.size(); ++i) out << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
    out << "'/>\n";
    out << "<text x='" << w - mr - 80 << "' y='" << legend_y << "' font-size='12' fill='"
        << color << "'>" << name << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
}

}  // namespace

void write_curves(const std::vector<MetricCurve>& curves, const std::string& out_dir) {
  if (curves.empty()) throw EvalError("no curves to write");
  fs::create_directories(out_dir);
  for (const auto& curve : curves) {
    if (curve.points.empty()) throw EvalError("empty curve for run " + curve.run_id);
    std::string csv_path = (fs::path(out_dir) / (curve.run_id + "_metrics.csv")).string();
    std::ofstream trunc(csv_path, std::ios::trunc);
    trunc.close();
    append_metrics_csv(curve, csv_path);

    // (metric -> split -> series)
    std::map<std::string, std::map<std::string, Series>> panels;
    for (const auto& p : curve.points) {
      panels[p.metric][p.split].x.push_back(p.epoch);
      panels[p.metric][p.split].y.push_back(p.value);
    }
    fs::path plot_dir = fs::path(out_dir) / "plots" / curve.run_id;
    fs::create_directories(plot_dir);
    for (const auto& [metric, splits] : panels)
      write_svg_plot((plot_dir / (metric + ".svg")).string(), curve.run_id + " " + metric,
                     splits);
  }
}

void write_report_csv(const std::vector<EvalReport>& reports, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write report: " + path);
  out << "run_id,auc,f1,accuracy,n_test,n_positive\n";
  out.precision(6);
  for (const auto& r : reports)
    out << r.run_id << ',' << r.auc << ',' << r.f1 << ',' << r.accuracy << ',' << r.n_test
        << ',' << r.n_positive << '\n';
}

void write_report_json(const std::vector<EvalReport>& reports, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports)
    j.push_back({{"run_id", r.run_id},
                 {"auc", r.auc},
                 {"f1", r.f1},
                 {"accuracy", r.accuracy},
                 {"n_test", r.n_test},
                 {"n_positive", r.n_positive}});
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write report: " + path);
  out << j.dump(2) << '\n';
}

void save_predictions_csv(const PredictionSet& preds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write predictions: " + path);
  out << "segment_id,label,score\n";
  out.precision(12);
  for (const auto& p : preds) out << p.segment_id << ',' << p.label << ',' << p.score << '\n';
}

PredictionSet load_predictions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot read predictions: " + path);
  PredictionSet preds;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, label, score;
    std::getline(ss, id, ',');
    std::getline(ss, label, ',');
    std::getline(ss, score, ',');
    preds.push_back({id, std::stoi(label), std::stod(score)});
  }
  return preds;
}

}  // namespace osteo::eval
