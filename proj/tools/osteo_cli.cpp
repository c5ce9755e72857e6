// Command-line entry point wiring the pipeline modules into reproducible runs.
//
// Exit codes: 0 success, 1 internal error, 2 invalid config/input,
// 3 missing input file, 4 numeric abort (non-finite loss), 5 refused to
// overwrite existing outputs (pass --force).

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <opencv2/core.hpp>

#include "osteo/augment.hpp"
#include "osteo/corpus.hpp"
#include "osteo/eval.hpp"
#include "osteo/nn.hpp"
#include "osteo/phantom.hpp"
#include "osteo/segment.hpp"
#include "osteo/train.hpp"

namespace fs = std::filesystem;
using namespace osteo;

namespace {

constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kConfigError = 2;
constexpr int kMissingInput = 3;
constexpr int kNumericAbort = 4;
constexpr int kRefuseOverwrite = 5;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string run_id;
  train::TrainConfig train;
  train::ProbeConfig probe;
  augment::AugmentConfig aug;
  nn::EncoderConfig encoder;
  struct {
    int n_subjects = 200;
    int image_size = 160;
    double positive_fraction = 0.29;
    double noise_level = 0.25;
    uint64_t seed = 0;
  } phantom;
};

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
  std::istringstream ss(v);
  T out;
  ss >> out;
  if (ss.fail() || !ss.eof()) throw ConfigError("invalid value for " + key + ": " + v);
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": " + v);
}

// Applies one `section.key = value` assignment; unknown keys are rejected.
void set_value(RunConfig& c, const std::string& section, const std::string& key,
               const std::string& v) {
  const std::string full = section.empty() ? key : section + "." + key;
  auto d = [&] { return parse_num<double>(v, full); };
  auto i = [&] { return parse_num<int>(v, full); };
  auto u = [&] { return parse_num<uint64_t>(v, full); };

  if (section.empty() || section == "run") {
    if (key == "run_id") { c.run_id = v; return; }
  } else if (section == "train") {
    auto& t = c.train;
    if (key == "batch_size") { t.batch_size = i(); return; }
    if (key == "epochs") { t.epochs = i(); return; }
    if (key == "stop_after_epochs") { t.stop_after_epochs = i(); return; }
    if (key == "base_lr") { t.base_lr = d(); return; }
    if (key == "final_lr") { t.final_lr = d(); return; }
    if (key == "lars_trust_coeff") { t.lars_trust_coeff = d(); return; }
    if (key == "weight_decay") { t.weight_decay = d(); return; }
    if (key == "momentum") { t.momentum = d(); return; }
    if (key == "seed") { t.seed = u(); return; }
    if (key == "objective") { t.objective = train::objective_from_string(v); return; }
    if (key == "augmentation") { t.augmentation = train::augmentation_from_string(v); return; }
    if (key == "simclr_temperature") { t.simclr_temperature = d(); return; }
    if (key == "supcon_temperature") { t.supcon_temperature = d(); return; }
    if (key == "swav_temperature") { t.swav_temperature = d(); return; }
    if (key == "swav_epsilon") { t.swav_epsilon = d(); return; }
    if (key == "swav_sinkhorn_iters") { t.swav_sinkhorn_iters = i(); return; }
    if (key == "swav_prototypes") { t.swav_prototypes = i(); return; }
    if (key == "vicreg_lambda_v") { t.vicreg.lambda_v = d(); return; }
    if (key == "vicreg_mu_i") { t.vicreg.mu_i = d(); return; }
    if (key == "vicreg_nu_c") { t.vicreg.nu_c = d(); return; }
  } else if (section == "probe") {
    auto& p = c.probe;
    if (key == "epochs") { p.epochs = i(); return; }
    if (key == "lr") { p.lr = d(); return; }
    if (key == "final_lr") { p.final_lr = d(); return; }
    if (key == "momentum") { p.momentum = d(); return; }
    if (key == "batch_size") { p.batch_size = i(); return; }
    if (key == "seed") { p.seed = u(); return; }
  } else if (section == "augment") {
    auto& a = c.aug;
    if (key == "global_size") { a.global_size = i(); return; }
    if (key == "local_size") { a.local_size = i(); return; }
    if (key == "n_local") { a.n_local = i(); return; }
    if (key == "rotation_range") { a.rotation_range = d(); return; }
    if (key == "hflip_prob") { a.hflip_prob = d(); return; }
    if (key == "vflip_prob") { a.vflip_prob = d(); return; }
    if (key == "global_scale_min") { a.global_scale_range.first = d(); return; }
    if (key == "global_scale_max") { a.global_scale_range.second = d(); return; }
    if (key == "local_scale_min") { a.local_scale_range.first = d(); return; }
    if (key == "local_scale_max") { a.local_scale_range.second = d(); return; }
    if (key == "nonzero_threshold") { a.nonzero_threshold = d(); return; }
    if (key == "max_attempts") { a.max_attempts = i(); return; }
    if (key == "extended") { a.extended = parse_bool(v, full); return; }
  } else if (section == "encoder") {
    auto& e = c.encoder;
    if (key == "architecture") { e.architecture = nn::arch_from_string(v); return; }
    if (key == "embedding_dim") { e.embedding_dim = i(); return; }
    if (key == "projection_dim") { e.projection_dim = i(); return; }
  } else if (section == "phantom") {
    auto& p = c.phantom;
    if (key == "n_subjects") { p.n_subjects = i(); return; }
    if (key == "image_size") { p.image_size = i(); return; }
    if (key == "positive_fraction") { p.positive_fraction = d(); return; }
    if (key == "noise_level") { p.noise_level = d(); return; }
    if (key == "seed") { p.seed = u(); return; }
  } else {
    throw ConfigError("unknown config section: " + section);
  }
  throw ConfigError("unknown config key: " + full);
}

void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    std::string s = line.substr(first, last - first + 1);
    if (s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[' && s.back() == ']') {
      section = s.substr(1, s.size() - 2);
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string t) {
      auto a = t.find_first_not_of(" \t");
      auto b = t.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : t.substr(a, b - a + 1);
    };
    set_value(c, section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "[run]\nrun_id = " << c.run_id << "\n\n";
  const auto& t = c.train;
  out << "[train]\n"
      << "batch_size = " << t.batch_size << "\nepochs = " << t.epochs
      << "\nstop_after_epochs = " << t.stop_after_epochs
      << "\nbase_lr = " << t.base_lr << "\nfinal_lr = " << t.final_lr
      << "\nlars_trust_coeff = " << t.lars_trust_coeff
      << "\nweight_decay = " << t.weight_decay << "\nmomentum = " << t.momentum
      << "\nseed = " << t.seed << "\nobjective = " << train::to_string(t.objective)
      << "\naugmentation = " << train::to_string(t.augmentation)
      << "\nsimclr_temperature = " << t.simclr_temperature
      << "\nsupcon_temperature = " << t.supcon_temperature
      << "\nswav_temperature = " << t.swav_temperature
      << "\nswav_epsilon = " << t.swav_epsilon
      << "\nswav_sinkhorn_iters = " << t.swav_sinkhorn_iters
      << "\nswav_prototypes = " << t.swav_prototypes
      << "\nvicreg_lambda_v = " << t.vicreg.lambda_v << "\nvicreg_mu_i = " << t.vicreg.mu_i
      << "\nvicreg_nu_c = " << t.vicreg.nu_c << "\n\n";
  const auto& p = c.probe;
  out << "[probe]\nepochs = " << p.epochs << "\nlr = " << p.lr
      << "\nfinal_lr = " << p.final_lr << "\nmomentum = " << p.momentum
      << "\nbatch_size = " << p.batch_size << "\nseed = " << p.seed << "\n\n";
  const auto& a = c.aug;
  out << "[augment]\nglobal_size = " << a.global_size << "\nlocal_size = " << a.local_size
      << "\nn_local = " << a.n_local << "\nrotation_range = " << a.rotation_range
      << "\nhflip_prob = " << a.hflip_prob << "\nvflip_prob = " << a.vflip_prob
      << "\nglobal_scale_min = " << a.global_scale_range.first
      << "\nglobal_scale_max = " << a.global_scale_range.second
      << "\nlocal_scale_min = " << a.local_scale_range.first
      << "\nlocal_scale_max = " << a.local_scale_range.second
      << "\nnonzero_threshold = " << a.nonzero_threshold
      << "\nmax_attempts = " << a.max_attempts
      << "\nextended = " << (a.extended ? "true" : "false") << "\n\n";
  out << "[encoder]\narchitecture = " << nn::to_string(c.encoder.architecture)
      << "\nembedding_dim = " << c.encoder.embedding_dim
      << "\nprojection_dim = " << c.encoder.projection_dim << "\n\n";
  out << "[phantom]\nn_subjects = " << c.phantom.n_subjects
      << "\nimage_size = " << c.phantom.image_size
      << "\npositive_fraction = " << c.phantom.positive_fraction
      << "\nnoise_level = " << c.phantom.noise_level << "\nseed = " << c.phantom.seed << "\n";
  return out.str();
}

void write_resolved_config(const RunConfig& c, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write resolved config: " + path.string());
  out << serialize_config(c);
}

// Shared flag surface: optional config file plus generic section.key=value
// overrides and a few convenience flags. Overrides apply after the file.
struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "INI-style config file");
    app->add_option("--set", sets, "override as section.key=value (repeatable)");
  }
  void resolve(RunConfig& c) const {
    if (!config_file.empty()) load_config_file(c, config_file);
    for (const auto& s : sets) {
      auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value: " + s);
      std::string path = s.substr(0, eq), value = s.substr(eq + 1);
      auto dot = path.find('.');
      std::string section = dot == std::string::npos ? "" : path.substr(0, dot);
      std::string key = dot == std::string::npos ? path : path.substr(dot + 1);
      set_value(c, section, key, value);
    }
  }
};

void apply_thread_cap() {
  if (const char* env = std::getenv("OSTEO_SSL_THREADS")) {
    int cap = std::max(1, std::atoi(env));
    cv::setNumThreads(cap);
    Eigen::setNbThreads(cap);
  }
}

void print_summary(const corpus::SplitSummary& s) {
  const char* names[3] = {"train", "val", "test"};
  std::cout << "split  neg  pos  pos_frac\n";
  for (int i = 0; i < 3; ++i)
    std::cout << names[i] << "  " << s.counts[i][0] << "  " << s.counts[i][1] << "  "
              << s.positive_fraction[i] << "\n";
  std::cout << "total " << s.total << "  global pos_frac " << s.global_positive_fraction
            << "\n";
}

eval::EvalReport make_report(const std::string& run_id, const eval::PredictionSet& preds) {
  eval::EvalReport r;
  r.run_id = run_id;
  r.n_test = static_cast<int>(preds.size());
  for (const auto& p : preds) r.n_positive += p.label;
  bool both = r.n_positive > 0 && r.n_positive < r.n_test;
  r.auc = both ? eval::roc_auc(preds) : std::nan("");
  auto s = eval::f1_accuracy(preds);
  r.f1 = s.f1;
  r.accuracy = s.accuracy;
  return r;
}

void write_run_outputs(const fs::path& out_dir, const RunConfig& c,
                       const std::vector<eval::MetricCurve>& curves,
                       const eval::PredictionSet* preds, const std::string& run_id) {
  fs::create_directories(out_dir);
  write_resolved_config(c, out_dir / (run_id + "_config.ini"));
  if (!curves.empty()) eval::write_curves(curves, out_dir.string());
  if (preds && !preds->empty()) {
    eval::save_predictions_csv(*preds, (out_dir / (run_id + "_predictions.csv")).string());
    auto report = make_report(run_id, *preds);
    eval::write_report_csv({report}, (out_dir / (run_id + "_report.csv")).string());
    eval::write_report_json({report}, (out_dir / (run_id + "_report.json")).string());
    std::cout << run_id << ": auc " << report.auc << "  f1 " << report.f1 << "  accuracy "
              << report.accuracy << "  (n_test " << report.n_test << ", positive "
              << report.n_positive << ")\n";
  }
}

int cmd_phantom(const RunConfig& c, const std::string& out_dir, bool force) {
  phantom::PhantomSpec spec;
  spec.n_subjects = c.phantom.n_subjects;
  spec.image_size = c.phantom.image_size;
  spec.positive_fraction = c.phantom.positive_fraction;
  spec.noise_level = c.phantom.noise_level;
  spec.seed = c.phantom.seed;
  spec.validate();

  fs::path manifest = fs::path(out_dir) / "manifest.csv";
  if (fs::exists(manifest) && !force) {
    std::cerr << "refusing to overwrite " << manifest.string() << " (use --force)\n";
    return kRefuseOverwrite;
  }
  auto records = phantom::generate_phantom(spec, out_dir);
  corpus::stratified_split(records, {8, 1, 1}, spec.seed);
  corpus::save_manifest(records, manifest.string());
  write_resolved_config(c, fs::path(out_dir) / "config.ini");
  print_summary(corpus::summarize_splits(records));
  std::cout << "wrote " << manifest.string() << "\n";
  return kOk;
}

std::string default_run_id(const RunConfig& c, const std::string& stage) {
  return stage + "_" + train::to_string(c.train.objective) + "_" +
         train::to_string(c.train.augmentation) + "_s" + std::to_string(c.train.seed);
}

int cmd_pretrain(RunConfig c, const std::string& manifest, const std::string& out_dir,
                 const std::string& resume, bool force) {
  if (!fs::exists(manifest)) {
    std::cerr << "manifest not found: " << manifest << "\n";
    return kMissingInput;
  }
  if (!resume.empty() && !fs::exists(resume)) {
    std::cerr << "checkpoint not found: " << resume << "\n";
    return kMissingInput;
  }
  if (c.run_id.empty()) c.run_id = default_run_id(c, "pretrain");
  fs::path ckpt = fs::path(out_dir) / (c.run_id + ".ckpt");
  if (fs::exists(ckpt) && !force && resume.empty()) {
    std::cerr << "refusing to overwrite " << ckpt.string() << " (use --force)\n";
    return kRefuseOverwrite;
  }
  std::cout << "objective " << train::to_string(c.train.objective) << ", augmentation "
            << train::to_string(c.train.augmentation) << ", seed " << c.train.seed << "\n";

  auto data = train::load_dataset_from_manifest(manifest);
  auto result = train::pretrain(data, c.train, c.encoder, c.aug, c.run_id, resume);

  train::Checkpoint meta;
  meta.config_hash = train::hash_config_string(serialize_config(c));
  meta.seed = c.train.seed;
  meta.epoch = result.epochs_done;
  meta.encoder_config = c.encoder;
  meta.swav_prototypes = static_cast<int>(result.model->prototypes.value.rows());
  fs::create_directories(out_dir);
  train::save_checkpoint(ckpt.string(), meta, *result.model, result.momentum);
  write_run_outputs(out_dir, c, {result.curve}, nullptr, c.run_id);
  std::cout << "wrote " << ckpt.string() << "\n";
  return kOk;
}

int cmd_probe(RunConfig c, const std::string& manifest, const std::string& checkpoint,
              const std::string& out_dir, bool random_encoder) {
  if (!fs::exists(manifest)) {
    std::cerr << "manifest not found: " << manifest << "\n";
    return kMissingInput;
  }
  std::unique_ptr<train::Model> model;
  std::vector<nn::Mat> momentum;
  if (random_encoder) {
    model = train::make_model(c.encoder, 0, c.train.seed);
  } else {
    if (!fs::exists(checkpoint)) {
      std::cerr << "checkpoint not found: " << checkpoint << "\n";
      return kMissingInput;
    }
    train::load_checkpoint(checkpoint, model, momentum);
  }
  if (c.run_id.empty())
    c.run_id = random_encoder ? "probe_random_s" + std::to_string(c.train.seed)
                              : fs::path(checkpoint).stem().string() + "_probe";
  auto data = train::load_dataset_from_manifest(manifest);
  auto result = train::linear_probe(*model, data, c.probe, c.aug, c.run_id);
  if (result.encoder_hash_before != result.encoder_hash_after) {
    std::cerr << "encoder weights changed during probing\n";
    return kInternal;
  }
  write_run_outputs(out_dir, c, {result.curve}, &result.test_predictions, c.run_id);
  return kOk;
}

int cmd_supervised(RunConfig c, const std::string& manifest, const std::string& out_dir) {
  if (!fs::exists(manifest)) {
    std::cerr << "manifest not found: " << manifest << "\n";
    return kMissingInput;
  }
  if (c.run_id.empty()) c.run_id = default_run_id(c, "supervised");
  auto data = train::load_dataset_from_manifest(manifest);
  auto result = train::train_supervised(data, c.train, c.encoder, c.aug, c.run_id);
  write_run_outputs(out_dir, c, {result.curve}, &result.test_predictions, c.run_id);
  return kOk;
}

struct CellResult {
  bool ok = false;
  double auc = 0.0, f1 = 0.0, accuracy = 0.0;
  std::string error;
};

int cmd_matrix(RunConfig base, const std::string& manifest, const std::string& out_dir,
               int n_seeds) {
  if (!fs::exists(manifest)) {
    std::cerr << "manifest not found: " << manifest << "\n";
    return kMissingInput;
  }
  auto data = train::load_dataset_from_manifest(manifest);
  const train::Objective objectives[] = {train::Objective::supervised, train::Objective::simclr,
                                         train::Objective::supcon, train::Objective::swav,
                                         train::Objective::vicreg};
  const train::Augmentation augs[] = {train::Augmentation::multicrop,
                                      train::Augmentation::ext_multicrop};
  fs::create_directories(fs::path(out_dir) / "cells");
  std::map<std::string, std::vector<CellResult>> cells;  // "<obj>|<aug>" -> per-seed

  for (auto obj : objectives) {
    for (auto au : augs) {
      for (int k = 0; k < n_seeds; ++k) {
        RunConfig c = base;
        c.train.objective = obj;
        c.train.augmentation = au;
        c.train.seed = base.train.seed + static_cast<uint64_t>(k);
        c.probe.seed = c.train.seed;
        c.run_id = default_run_id(c, "cell");
        fs::path cell_dir = fs::path(out_dir) / "cells" / c.run_id;
        fs::path report_path = cell_dir / "report.json";
        std::string key = std::string(train::to_string(obj)) + "|" + train::to_string(au);

        CellResult cr;
        try {
          if (fs::exists(report_path)) {
            auto j = nlohmann::json::parse(std::ifstream(report_path.string()));
            cr.auc = j.at(0).at("auc").get<double>();
            cr.f1 = j.at(0).at("f1").get<double>();
            cr.accuracy = j.at(0).at("accuracy").get<double>();
            cr.ok = true;
            std::cout << c.run_id << ": already complete, skipping\n";
          } else {
            fs::create_directories(cell_dir);
            eval::PredictionSet preds;
            if (obj == train::Objective::supervised) {
              auto r = train::train_supervised(data, c.train, c.encoder, c.aug, c.run_id);
              eval::write_curves({r.curve}, cell_dir.string());
              preds = r.test_predictions;
            } else {
              auto r = train::pretrain(data, c.train, c.encoder, c.aug, c.run_id);
              auto pr =
                  train::linear_probe(*r.model, data, c.probe, c.aug, c.run_id);
              eval::write_curves({r.curve, pr.curve}, cell_dir.string());
              preds = pr.test_predictions;
            }
            auto report = make_report(c.run_id, preds);
            eval::write_report_json({report}, report_path.string());
            eval::save_predictions_csv(preds, (cell_dir / "predictions.csv").string());
            write_resolved_config(c, cell_dir / "config.ini");
            cr.auc = report.auc;
            cr.f1 = report.f1;
            cr.accuracy = report.accuracy;
            cr.ok = true;
            std::cout << c.run_id << ": auc " << cr.auc << " f1 " << cr.f1 << " accuracy "
                      << cr.accuracy << "\n";
          }
        } catch (const std::exception& e) {
          cr.error = e.what();
          std::cerr << c.run_id << " failed: " << e.what() << "\n";
        }
        cells[key].push_back(cr);
      }
    }
  }

  // Table-shaped summary: one row per objective x augmentation with mean and
  // std over seeds, plus the ext - original delta per metric.
  auto stats = [](const std::vector<CellResult>& rs, auto sel) {
    double mean = 0.0, var = 0.0;
    int n = 0;
    for (const auto& r : rs)
      if (r.ok) {
        mean += sel(r);
        ++n;
      }
    if (n == 0) return std::pair<double, double>{std::nan(""), std::nan("")};
    mean /= n;
    for (const auto& r : rs)
      if (r.ok) var += (sel(r) - mean) * (sel(r) - mean);
    return std::pair<double, double>{mean, n > 1 ? std::sqrt(var / (n - 1)) : 0.0};
  };

  std::ofstream csv(fs::path(out_dir) / "summary.csv");
  csv << "objective,augmentation,auc_mean,auc_std,f1_mean,f1_std,accuracy_mean,accuracy_std,"
         "delta_auc,delta_f1,delta_accuracy,n_ok,failures\n";
  std::ostringstream table;
  table << "objective   augmentation    auc            f1             accuracy       dF1\n";
  for (auto obj : objectives) {
    std::map<std::string, std::array<double, 3>> means;
    for (auto au : augs) {
      std::string key = std::string(train::to_string(obj)) + "|" + train::to_string(au);
      const auto& rs = cells[key];
      auto [am, as] = stats(rs, [](const CellResult& r) { return r.auc; });
      auto [fm, fstd] = stats(rs, [](const CellResult& r) { return r.f1; });
      auto [cm, cs] = stats(rs, [](const CellResult& r) { return r.accuracy; });
      means[train::to_string(au)] = {am, fm, cm};
      int n_ok = 0, n_fail = 0;
      for (const auto& r : rs) (r.ok ? n_ok : n_fail)++;
      bool is_ext = au == train::Augmentation::ext_multicrop;
      double da = is_ext ? am - means["multicrop"][0] : std::nan("");
      double df = is_ext ? fm - means["multicrop"][1] : std::nan("");
      double dc = is_ext ? cm - means["multicrop"][2] : std::nan("");
      csv << train::to_string(obj) << ',' << train::to_string(au) << ',' << am << ',' << as
          << ',' << fm << ',' << fstd << ',' << cm << ',' << cs << ',' << da << ',' << df
          << ',' << dc << ',' << n_ok << ',' << n_fail << '\n';
      char line[256];
      std::snprintf(line, sizeof(line), "%-11s %-15s %.3f+/-%.3f  %.3f+/-%.3f  %.3f+/-%.3f",
                    train::to_string(obj), train::to_string(au), am, as, fm, fstd, cm, cs);
      table << line;
      if (is_ext) {
        std::snprintf(line, sizeof(line), "  %+.3f", df);
        table << line;
      }
      table << "\n";
    }
  }
  std::cout << table.str();
  std::ofstream txt(fs::path(out_dir) / "summary.txt");
  txt << table.str();
  std::cout << "wrote " << (fs::path(out_dir) / "summary.csv").string() << "\n";
  return kOk;
}

int cmd_augment_preview(const RunConfig& c, const std::string& image_path,
                        const std::string& mask_path, const std::string& out_dir) {
  GrayImage img;
  try {
    img = load_png(image_path);
    if (!mask_path.empty())
      img = segment::crop_to_bbox(segment::apply_mask(img, load_mask_png(mask_path)), 8);
  } catch (const std::exception& e) {
    std::cerr << "cannot read segment: " << e.what() << "\n";
    return kConfigError;
  }
  fs::create_directories(out_dir);
  nlohmann::json j;
  for (bool extended : {false, true}) {
    augment::AugmentConfig ac = c.aug;
    ac.extended = extended;
    auto rng = augment::make_rng(c.train.seed, 0, 0);
    auto views = augment::make_views(img, ac, rng);
    const char* variant = extended ? "extended" : "original";
    nlohmann::json arr = nlohmann::json::array();
    auto dump = [&](const GrayImage& v, const std::string& name, bool fallback) {
      std::string file = std::string(variant) + "_" + name + ".png";
      save_png(v, (fs::path(out_dir) / file).string());
      arr.push_back({{"view", name},
                     {"file", file},
                     {"size", v.width},
                     {"fraction", segment::nonzero_fraction(v)},
                     {"fallback", fallback}});
    };
    for (int g = 0; g < 2; ++g)
      dump(views.globals[g], "global" + std::to_string(g), views.global_fallback[g]);
    for (int l = 0; l < ac.n_local; ++l)
      dump(views.locals[l], "local" + std::to_string(l), views.local_fallback[l]);
    j[variant] = arr;
  }
  std::ofstream out(fs::path(out_dir) / "preview.json");
  out << j.dump(2) << "\n";
  std::cout << "wrote " << (fs::path(out_dir) / "preview.json").string() << "\n";
  return kOk;
}

int cmd_evaluate(const std::string& predictions_path, const std::string& out_prefix) {
  if (!fs::exists(predictions_path)) {
    std::cerr << "predictions not found: " << predictions_path << "\n";
    return kMissingInput;
  }
  auto preds = eval::load_predictions_csv(predictions_path);
  auto report = make_report(fs::path(predictions_path).stem().string(), preds);
  eval::write_report_csv({report}, out_prefix + ".csv");
  eval::write_report_json({report}, out_prefix + ".json");
  std::cout << "auc " << report.auc << "  f1 " << report.f1 << "  accuracy "
            << report.accuracy << "\n";
  return kOk;
}

int cmd_plot_curves(const std::string& metrics_path, const std::string& out_dir) {
  if (!fs::exists(metrics_path)) {
    std::cerr << "metrics not found: " << metrics_path << "\n";
    return kMissingInput;
  }
  // The CSV may interleave several runs; regroup by run_id.
  std::ifstream in(metrics_path);
  std::string line;
  std::getline(in, line);
  std::map<std::string, eval::MetricCurve> curves;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string run_id, epoch, split, metric, value;
    std::getline(ss, run_id, ',');
    std::getline(ss, epoch, ',');
    std::getline(ss, split, ',');
    std::getline(ss, metric, ',');
    std::getline(ss, value, ',');
    auto& c = curves[run_id];
    c.run_id = run_id;
    c.points.push_back({std::stoi(epoch), split, metric, std::stod(value)});
  }
  std::vector<eval::MetricCurve> list;
  for (auto& [id, c] : curves) list.push_back(std::move(c));
  eval::write_curves(list, out_dir);
  std::cout << "wrote plots under " << (fs::path(out_dir) / "plots").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"osteoporosis screening pipeline: phantom data, SSL pretraining, probing"};
  app.require_subcommand(1);
  apply_thread_cap();

  CommonOpts common;
  std::string out_dir = "out", manifest, checkpoint, resume, image_path, mask_path;
  std::string predictions_path, metrics_path, run_id_flag, objective_flag, augmentation_flag;
  bool force = false, random_encoder = false;
  int n_seeds = 3;
  std::optional<int> epochs_flag, batch_flag;
  std::optional<uint64_t> seed_flag;

  auto add_common = [&](CLI::App* sub, bool with_train_flags) {
    common.attach(sub);
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--run-id", run_id_flag, "run identifier");
    if (with_train_flags) {
      sub->add_option("--objective", objective_flag,
                      "supervised|simclr|supcon|swav|vicreg");
      sub->add_option("--augmentation", augmentation_flag, "multicrop|ext_multicrop");
      sub->add_option("--seed", seed_flag, "training seed");
      sub->add_option("--epochs", epochs_flag, "training epochs");
      sub->add_option("--batch-size", batch_flag, "batch size");
    }
  };

  auto* p_phantom = app.add_subcommand("phantom", "generate a synthetic dataset");
  add_common(p_phantom, false);
  p_phantom->add_option("--seed", seed_flag, "phantom seed");
  p_phantom->add_flag("--force", force, "overwrite existing outputs");

  auto* p_pretrain = app.add_subcommand("pretrain", "pretext-task training");
  add_common(p_pretrain, true);
  p_pretrain->add_option("--manifest", manifest, "dataset manifest CSV")->required();
  p_pretrain->add_option("--resume", resume, "checkpoint to resume from");
  p_pretrain->add_flag("--force", force, "overwrite existing outputs");

  auto* p_probe = app.add_subcommand("probe", "frozen-encoder linear evaluation");
  add_common(p_probe, true);
  p_probe->add_option("--manifest", manifest, "dataset manifest CSV")->required();
  p_probe->add_option("--checkpoint", checkpoint, "pretrained checkpoint");
  p_probe->add_flag("--random-encoder", random_encoder,
                    "probe an untrained encoder (null-signal baseline)");

  auto* p_sup = app.add_subcommand("supervised", "end-to-end supervised baseline");
  add_common(p_sup, true);
  p_sup->add_option("--manifest", manifest, "dataset manifest CSV")->required();

  auto* p_matrix = app.add_subcommand("matrix", "all objectives x augmentations x seeds");
  add_common(p_matrix, true);
  p_matrix->add_option("--manifest", manifest, "dataset manifest CSV")->required();
  p_matrix->add_option("--seeds", n_seeds, "seeds per cell (default 3)");

  auto* p_aug = app.add_subcommand("augment-preview", "write multi-crop views for one segment");
  add_common(p_aug, true);
  p_aug->add_option("--image", image_path, "segment PNG")->required();
  p_aug->add_option("--mask", mask_path, "optional mask PNG (applied + cropped)");

  auto* p_eval = app.add_subcommand("evaluate", "score a predictions CSV");
  p_eval->add_option("--predictions", predictions_path, "predictions CSV")->required();
  p_eval->add_option("--out", out_dir, "output path prefix");

  auto* p_plot = app.add_subcommand("plot-curves", "render SVG plots from a metrics CSV");
  p_plot->add_option("--metrics", metrics_path, "metrics CSV")->required();
  p_plot->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig config;
    common.resolve(config);
    if (!run_id_flag.empty()) config.run_id = run_id_flag;
    if (!objective_flag.empty())
      config.train.objective = train::objective_from_string(objective_flag);
    if (!augmentation_flag.empty())
      config.train.augmentation = train::augmentation_from_string(augmentation_flag);
    if (seed_flag) {
      config.train.seed = *seed_flag;
      config.probe.seed = *seed_flag;
      config.phantom.seed = *seed_flag;
    }
    if (epochs_flag) config.train.epochs = *epochs_flag;
    if (batch_flag) config.train.batch_size = *batch_flag;

    if (p_phantom->parsed()) return cmd_phantom(config, out_dir, force);
    if (p_pretrain->parsed()) return cmd_pretrain(config, manifest, out_dir, resume, force);
    if (p_probe->parsed())
      return cmd_probe(config, manifest, checkpoint, out_dir, random_encoder);
    if (p_sup->parsed()) return cmd_supervised(config, manifest, out_dir);
    if (p_matrix->parsed()) return cmd_matrix(config, manifest, out_dir, n_seeds);
    if (p_aug->parsed()) return cmd_augment_preview(config, image_path, mask_path, out_dir);
    if (p_eval->parsed()) return cmd_evaluate(predictions_path, out_dir == "out" ? "report" : out_dir);
    if (p_plot->parsed()) return cmd_plot_curves(metrics_path, out_dir);
    return kInternal;
  } catch (const train::TrainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return std::string(e.what()).find("non-finite loss") != std::string::npos ? kNumericAbort
                                                                              : kConfigError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}
