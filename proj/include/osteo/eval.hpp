#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace osteo::eval {

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Prediction {
  std::string segment_id;
  int label = 0;       // 1 = osteoporosis
  double score = 0.0;  // positive-class probability in [0,1]
};
using PredictionSet = std::vector<Prediction>;

// Area under the ROC curve via the Mann-Whitney rank statistic; ties between
// a positive and a negative score count 1/2. Requires both classes present.
double roc_auc(const PredictionSet& preds);

struct ClassificationScores {
  double f1 = 0.0;
  double accuracy = 0.0;
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

// Positive-class binary F1 (0 when there are no positive predictions) and
// plain accuracy at `threshold`: predicted positive iff score >= threshold.
ClassificationScores f1_accuracy(const PredictionSet& preds, double threshold = 0.5);

struct CurvePoint {
  int epoch = 0;
  std::string split;   // train / val / test
  std::string metric;  // loss / auc / f1 / accuracy / ...
  double value = 0.0;
};

struct MetricCurve {
  std::string run_id;
  std::vector<CurvePoint> points;
};

// Appends rows `run_id,epoch,split,metric,value` (header written when the
// file is new or empty).
void append_metrics_csv(const MetricCurve& curve, const std::string& path);

MetricCurve load_metrics_csv(const std::string& path);

// One CSV per run plus one SVG line plot per metric (train/val series
// against epoch) under out_dir/plots/<run_id>/.
void write_curves(const std::vector<MetricCurve>& curves, const std::string& out_dir);

struct EvalReport {
  std::string run_id;
  double auc = 0.0, f1 = 0.0, accuracy = 0.0;
  int n_test = 0, n_positive = 0;
};

void write_report_csv(const std::vector<EvalReport>& reports, const std::string& path);
void write_report_json(const std::vector<EvalReport>& reports, const std::string& path);

void save_predictions_csv(const PredictionSet& preds, const std::string& path);
PredictionSet load_predictions_csv(const std::string& path);

}  // namespace osteo::eval
