#include "osteo/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "osteo/segment.hpp"

namespace osteo::train {

Objective objective_from_string(const std::string& s) {
  if (s == "supervised") return Objective::supervised;
  if (s == "simclr") return Objective::simclr;
  if (s == "supcon") return Objective::supcon;
  if (s == "swav") return Objective::swav;
  if (s == "vicreg") return Objective::vicreg;
  throw TrainError("unknown objective: " + s);
}

Augmentation augmentation_from_string(const std::string& s) {
  if (s == "multicrop") return Augmentation::multicrop;
  if (s == "ext_multicrop") return Augmentation::ext_multicrop;
  throw TrainError("unknown augmentation: " + s);
}

const char* to_string(Objective o) {
  switch (o) {
    case Objective::supervised: return "supervised";
    case Objective::simclr: return "simclr";
    case Objective::supcon: return "supcon";
    case Objective::swav: return "swav";
    default: return "vicreg";
  }
}

const char* to_string(Augmentation a) {
  return a == Augmentation::multicrop ? "multicrop" : "ext_multicrop";
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw TrainError("batch_size must be >= 2");
  if (epochs < 1) throw TrainError("epochs must be >= 1");
  if (stop_after_epochs < 0) throw TrainError("stop_after_epochs must be >= 0");
  if (base_lr <= 0.0 || final_lr <= 0.0) throw TrainError("learning rates must be positive");
  if (swav_prototypes < 2) throw TrainError("swav needs at least 2 prototypes");
}

std::vector<int> Dataset::split_indices(corpus::Split split) const {
  std::vector<int> out;
  for (size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

Dataset load_dataset(const std::vector<corpus::SegmentRecord>& records) {
  Dataset data;
  std::map<std::string, int> id_count;
  for (const auto& rec : records) {
    SegmentSample s;
    s.subject_id = rec.subject_id;
    s.label = rec.label == corpus::Label::osteoporosis ? 1 : 0;
    s.split = rec.split;
    std::string base = rec.subject_id + "/" + rec.bone_name;
    int n = id_count[base]++;
    s.id = n == 0 ? base : base + "/" + std::to_string(n);
    GrayImage img = load_png(rec.image_path);
    BinaryMask mask = load_mask_png(rec.mask_path);
    s.image = segment::crop_to_bbox(segment::apply_mask(img, mask), 8);
    data.samples.push_back(std::move(s));
  }
  return data;
}

Dataset load_dataset_from_manifest(const std::string& manifest_path) {
  return load_dataset(corpus::load_manifest(manifest_path).segments);
}

nn::ParamRefs Model::all_params() {
  nn::ParamRefs out = encoder->params();
  for (auto* p : head->params()) out.push_back(p);
  if (prototypes.value.rows() > 0) out.push_back(&prototypes);
  out.push_back(&classifier_w);
  out.push_back(&classifier_b);
  return out;
}

nn::ParamRefs Model::encoder_params() { return encoder->params(); }

std::unique_ptr<Model> make_model(const nn::EncoderConfig& config, int swav_prototypes,
                                  uint64_t seed) {
  auto model = std::make_unique<Model>();
  model->encoder_config = config;
  auto rng = augment::make_rng(seed, 0xE7C0DE, 0);
  model->encoder = std::make_unique<nn::Encoder>(config, rng);
  model->head = std::make_unique<nn::ProjectionHead>(config.embedding_dim,
                                                     config.projection_dim, rng);
  model->prototypes.name = "swav.prototypes";
  if (swav_prototypes > 0) {
    std::normal_distribution<double> dist(0.0, 1.0);
    nn::Mat c(swav_prototypes, config.projection_dim);
    for (int i = 0; i < c.rows(); ++i) {
      for (int j = 0; j < c.cols(); ++j) c(i, j) = dist(rng);
      c.row(i).normalize();
    }
    model->prototypes.value = c;
    model->prototypes.grad = nn::Mat::Zero(c.rows(), c.cols());
  }
  std::normal_distribution<double> cdist(0.0, 0.01);
  model->classifier_w.name = "classifier.weight";
  model->classifier_w.value = nn::Mat(2, config.embedding_dim);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < config.embedding_dim; ++j) model->classifier_w.value(i, j) = cdist(rng);
  model->classifier_w.grad = nn::Mat::Zero(2, config.embedding_dim);
  model->classifier_b.name = "classifier.bias";
  model->classifier_b.value = nn::Mat::Zero(2, 1);
  model->classifier_b.grad = nn::Mat::Zero(2, 1);
  return model;
}

// ------------------------------------------------------------- checkpoint

namespace {

constexpr uint64_t kMagic = 0x4f5354454f434b31ULL;  // "OSTEOCK1"

void write_u32(std::ofstream& out, uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); }
void write_u64(std::ofstream& out, uint64_t v) { out.write(reinterpret_cast<char*>(&v), 8); }
uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t read_u64(std::ifstream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void write_string(std::ofstream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
  uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

void write_mat(std::ofstream& out, const nn::Mat& m) {
  write_u32(out, static_cast<uint32_t>(m.rows()));
  write_u32(out, static_cast<uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

nn::Mat read_mat(std::ifstream& in) {
  uint32_t r = read_u32(in), c = read_u32(in);
  nn::Mat m(r, c);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& meta, Model& model,
                     const std::vector<nn::Mat>& momentum) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainError("cannot write checkpoint: " + path);
  write_u64(out, kMagic);
  write_u32(out, meta.version);
  write_u64(out, meta.config_hash);
  write_u64(out, meta.seed);
  write_u32(out, static_cast<uint32_t>(meta.epoch));
  write_string(out, nn::to_string(model.encoder_config.architecture));
  write_u32(out, static_cast<uint32_t>(model.encoder_config.embedding_dim));
  write_u32(out, static_cast<uint32_t>(model.encoder_config.projection_dim));
  write_u32(out, static_cast<uint32_t>(meta.swav_prototypes));
  nn::ParamRefs params = model.all_params();
  write_u32(out, static_cast<uint32_t>(params.size()));
  for (const nn::Param* p : params) {
    write_string(out, p->name);
    write_mat(out, p->value);
  }
  write_u32(out, static_cast<uint32_t>(momentum.size()));
  for (const auto& m : momentum) write_mat(out, m);
}

Checkpoint load_checkpoint(const std::string& path, std::unique_ptr<Model>& model,
                           std::vector<nn::Mat>& momentum) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainError("checkpoint not found: " + path);
  if (read_u64(in) != kMagic) throw TrainError("not a checkpoint file: " + path);
  Checkpoint meta;
  meta.version = read_u32(in);
  if (meta.version != 1) throw TrainError("unsupported checkpoint version");
  meta.config_hash = read_u64(in);
  meta.seed = read_u64(in);
  meta.epoch = static_cast<int>(read_u32(in));
  meta.encoder_config.architecture = nn::arch_from_string(read_string(in));
  meta.encoder_config.embedding_dim = static_cast<int>(read_u32(in));
  meta.encoder_config.projection_dim = static_cast<int>(read_u32(in));
  meta.swav_prototypes = static_cast<int>(read_u32(in));

  model = make_model(meta.encoder_config, meta.swav_prototypes, meta.seed);
  nn::ParamRefs params = model->all_params();
  std::map<std::string, nn::Param*> by_name;
  for (nn::Param* p : params) by_name[p->name] = p;
  uint32_t n = read_u32(in);
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = read_string(in);
    nn::Mat value = read_mat(in);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw TrainError("checkpoint param not in model: " + name);
    if (it->second->value.rows() != value.rows() || it->second->value.cols() != value.cols())
      throw TrainError("checkpoint shape mismatch for " + name);
    it->second->value = value;
  }
  momentum.clear();
  uint32_t nm = read_u32(in);
  for (uint32_t i = 0; i < nm; ++i) momentum.push_back(read_mat(in));
  if (!in) throw TrainError("truncated checkpoint: " + path);
  return meta;
}

uint64_t hash_config_string(const std::string& resolved) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : resolved) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// --------------------------------------------------------------- pretrain

namespace {

// Assembles the V+2 views of every batch sample into one FeatureBatch, rows
// grouped sample-major (slot 0..V+1 within each sample).
struct BatchViews {
  nn::FeatureBatch features;
  std::vector<int> view_index;
  std::vector<int> source_index;
  std::vector<int> labels;
  int fallback_views = 0;
};

BatchViews build_views(const Dataset& data, const std::vector<int>& batch_samples,
                       const augment::AugmentConfig& aug, uint64_t seed, int epoch) {
  BatchViews bv;
  for (int idx : batch_samples) {
    const SegmentSample& s = data.samples[idx];
    auto rng = augment::make_rng(seed, static_cast<uint64_t>(idx), static_cast<uint64_t>(epoch));
    augment::MultiCropViews views = augment::make_views(s.image, aug, rng);
    auto push = [&](const GrayImage& img, int slot) {
      bv.features.push_back(nn::to_feature(img.pixels, img.width, img.height));
      bv.view_index.push_back(slot);
      bv.source_index.push_back(idx);
      bv.labels.push_back(s.label);
    };
    for (int g = 0; g < 2; ++g) push(views.globals[g], g);
    for (int l = 0; l < aug.n_local; ++l) push(views.locals[l], 2 + l);
    for (bool f : views.global_fallback) bv.fallback_views += f ? 1 : 0;
    for (bool f : views.local_fallback) bv.fallback_views += f ? 1 : 0;
  }
  return bv;
}

std::vector<std::vector<int>> make_batches(std::vector<int> indices, int batch_size,
                                           augment::Rng& rng) {
  std::shuffle(indices.begin(), indices.end(), rng);
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < indices.size(); i += batch_size) {
    std::vector<int> b(indices.begin() + i,
                       indices.begin() + std::min(indices.size(), i + batch_size));
    if (b.size() >= 2) batches.push_back(std::move(b));
  }
  return batches;
}

std::string batch_ids(const Dataset& data, const std::vector<int>& batch) {
  std::string s;
  for (int idx : batch) {
    if (!s.empty()) s += " ";
    s += data.samples[idx].id;
  }
  return s;
}

}  // namespace

PretrainResult pretrain(const Dataset& data, const TrainConfig& config,
                        const nn::EncoderConfig& enc_config,
                        const augment::AugmentConfig& aug_config, const std::string& run_id,
                        const std::string& resume_checkpoint) {
  config.validate();
  aug_config.validate();
  if (config.objective == Objective::supervised)
    throw TrainError("objective 'supervised' is not a pretext task; use train_supervised");
  std::vector<int> train_idx = data.split_indices(corpus::Split::train);
  if (train_idx.empty()) throw TrainError("train split is empty");

  augment::AugmentConfig aug = aug_config;
  aug.extended = config.augmentation == Augmentation::ext_multicrop;

  PretrainResult result;
  int start_epoch = 0;
  int n_protos = config.objective == Objective::swav ? config.swav_prototypes : 0;
  if (!resume_checkpoint.empty()) {
    Checkpoint meta = load_checkpoint(resume_checkpoint, result.model, result.momentum);
    start_epoch = meta.epoch;
  } else {
    result.model = make_model(enc_config, n_protos, config.seed);
  }
  Model& model = *result.model;

  nn::ParamRefs opt_params = model.encoder->params();
  for (auto* p : model.head->params()) opt_params.push_back(p);
  if (config.objective == Objective::swav) opt_params.push_back(&model.prototypes);

  optim::LarsConfig lc{config.lars_trust_coeff, config.weight_decay, config.momentum};
  optim::LarsOptimizer opt(opt_params, lc);
  if (!result.momentum.empty()) {
    if (result.momentum.size() != opt.momentum_state().size())
      throw TrainError("checkpoint momentum does not match optimizer parameters");
    opt.momentum_state() = result.momentum;
  }

  const int V = aug.n_local;
  // Batch count is a function of the train-set size alone, so the cosine
  // schedule lines up across resumed runs.
  const long steps_per_epoch =
      std::max<long>(1, (static_cast<long>(train_idx.size()) + config.batch_size - 1) /
                            config.batch_size);
  const long total_steps = static_cast<long>(config.epochs) * steps_per_epoch;

  result.curve.run_id = run_id;
  const int end_epoch = config.stop_after_epochs > 0
                            ? std::min(config.stop_after_epochs, config.epochs)
                            : config.epochs;
  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    auto shuffle_rng = augment::make_rng(config.seed, 0x5b0ffe1, static_cast<uint64_t>(epoch));
    auto batches = make_batches(train_idx, config.batch_size, shuffle_rng);
    double epoch_loss = 0.0;
    int fallback_views = 0;
    long step_in_epoch = 0;
    for (const auto& batch : batches) {
      BatchViews bv = build_views(data, batch, aug, config.seed, epoch);
      fallback_views += bv.fallback_views;

      std::any enc_cache, head_cache, norm_cache;
      nn::Mat emb = model.encoder->forward(bv.features, enc_cache, true);
      nn::Mat proj = model.head->forward(emb, head_cache);

      ssl::EmbeddingBatch eb;
      eb.view_index = bv.view_index;
      eb.source_index = bv.source_index;
      const bool normalized = config.objective != Objective::vicreg;
      eb.z = normalized ? nn::l2_normalize_rows(proj, norm_cache) : proj;
      if (config.objective == Objective::supcon) eb.labels = bv.labels;

      ssl::LossReport rep;
      switch (config.objective) {
        case Objective::simclr:
          rep = ssl::simclr_multicrop_loss(eb, V, config.simclr_temperature);
          break;
        case Objective::supcon:
          rep = ssl::supcon_multicrop_loss(eb, V, config.supcon_temperature);
          break;
        case Objective::swav:
          rep = ssl::swav_loss(eb, model.prototypes.value, config.swav_temperature,
                               config.swav_epsilon, config.swav_sinkhorn_iters);
          break;
        default:
          rep = ssl::vicreg_multicrop_loss(eb, V, config.vicreg);
      }
      if (!std::isfinite(rep.total))
        throw TrainError("non-finite loss in run " + run_id + " epoch " +
                         std::to_string(epoch) + ", batch: " + batch_ids(data, batch));

      opt.zero_grad();
      nn::Mat grad_proj =
          normalized ? nn::l2_normalize_rows_backward(rep.grad_z, norm_cache) : rep.grad_z;
      nn::Mat grad_emb = model.head->backward(grad_proj, head_cache);
      model.encoder->backward(grad_emb, enc_cache);
      if (config.objective == Objective::swav) model.prototypes.grad += rep.grad_prototypes;

      double lr = optim::cosine_lr(
          std::min(total_steps, static_cast<long>(epoch) * steps_per_epoch + step_in_epoch),
          total_steps, config.base_lr, config.final_lr);
      opt.step(lr);
      if (config.objective == Objective::swav)
        for (int i = 0; i < model.prototypes.value.rows(); ++i)
          model.prototypes.value.row(i).normalize();

      epoch_loss += rep.total;
      ++step_in_epoch;
    }
    double mean_loss = batches.empty() ? 0.0 : epoch_loss / batches.size();
    result.curve.points.push_back({epoch + 1, "train", "loss", mean_loss});
    result.curve.points.push_back(
        {epoch + 1, "train", "fallback_views", static_cast<double>(fallback_views)});
  }
  result.momentum = opt.momentum_state();
  result.epochs_done = end_epoch;
  return result;
}

// ------------------------------------------------------------ evaluation

nn::Mat eval_embeddings(nn::Encoder& encoder, const Dataset& data,
                        const std::vector<int>& indices, const augment::AugmentConfig& aug) {
  nn::Mat out(static_cast<long>(indices.size()), encoder.config().embedding_dim);
  const size_t chunk = 32;
  for (size_t i = 0; i < indices.size(); i += chunk) {
    nn::FeatureBatch fb;
    size_t end = std::min(indices.size(), i + chunk);
    for (size_t j = i; j < end; ++j) {
      // One fixed global view per segment, independent of the training seed,
      // built with the same rotate/flip/crop family the pretext stage trains
      // invariance to.
      auto rng = augment::make_rng(0xEA17, static_cast<uint64_t>(indices[j]), 0);
      GrayImage r = augment::random_rotate(data.samples[indices[j]].image, aug.rotation_range, rng);
      r = augment::random_flip(r, aug.hflip_prob, aug.vflip_prob, rng);
      GrayImage v = augment::rejection_crop(r, aug.global_size, aug.global_scale_range,
                                            aug.nonzero_threshold, aug.max_attempts, rng)
                        .view;
      fb.push_back(nn::to_feature(v.pixels, v.width, v.height));
    }
    nn::Mat emb = encoder.forward_eval(fb);
    for (size_t j = i; j < end; ++j) out.row(static_cast<long>(j)) = emb.row(static_cast<long>(j - i));
  }
  return out;
}

namespace {

struct SplitData {
  nn::Mat x;  // n x D standardized features
  std::vector<int> y;
  std::vector<std::string> ids;
};

eval::PredictionSet predict(const nn::Mat& w, const nn::Mat& b, const SplitData& d) {
  eval::PredictionSet preds;
  nn::Mat logits = d.x * w.transpose();
  logits.rowwise() += b.col(0).transpose();
  for (long i = 0; i < logits.rows(); ++i) {
    double m = std::max(logits(i, 0), logits(i, 1));
    double e0 = std::exp(logits(i, 0) - m), e1 = std::exp(logits(i, 1) - m);
    preds.push_back({d.ids[i], d.y[i], e1 / (e0 + e1)});
  }
  return preds;
}

bool both_classes(const std::vector<int>& y) {
  bool pos = false, neg = false;
  for (int v : y) (v ? pos : neg) = true;
  return pos && neg;
}

void log_metrics(eval::MetricCurve& curve, int epoch, const std::string& split,
                 const eval::PredictionSet& preds, const std::vector<int>& y) {
  if (both_classes(y)) curve.points.push_back({epoch, split, "auc", eval::roc_auc(preds)});
  auto s = eval::f1_accuracy(preds);
  curve.points.push_back({epoch, split, "f1", s.f1});
  curve.points.push_back({epoch, split, "accuracy", s.accuracy});
}

}  // namespace

ProbeResult linear_probe(Model& model, const Dataset& data, const ProbeConfig& config,
                         const augment::AugmentConfig& aug, const std::string& run_id) {
  auto train_idx = data.split_indices(corpus::Split::train);
  auto val_idx = data.split_indices(corpus::Split::val);
  auto test_idx = data.split_indices(corpus::Split::test);
  if (train_idx.empty() || val_idx.empty()) throw TrainError("probe needs train and val splits");

  ProbeResult result;
  result.curve.run_id = run_id;
  nn::ParamRefs enc_params = model.encoder->params();
  result.encoder_hash_before = nn::hash_params(enc_params);

  auto gather = [&](const std::vector<int>& idx) {
    SplitData d;
    d.x = eval_embeddings(*model.encoder, data, idx, aug);
    for (int i : idx) {
      d.y.push_back(data.samples[i].label);
      d.ids.push_back(data.samples[i].id);
    }
    return d;
  };
  SplitData tr = gather(train_idx), va = gather(val_idx), te = gather(test_idx);

  // Standardize features with train statistics (affine, so probe logits stay
  // affine in the raw embedding).
  const int d = static_cast<int>(tr.x.cols());
  nn::Mat mean = tr.x.colwise().mean();
  nn::Mat centered = tr.x.rowwise() - mean.row(0);
  nn::Mat stddev = (centered.array().square().colwise().mean() + 1e-8).sqrt().matrix();
  auto standardize = [&](nn::Mat& x) {
    nn::Mat c = x.rowwise() - mean.row(0);
    x = (c.array().rowwise() / stddev.row(0).array()).matrix();
  };
  standardize(tr.x);
  standardize(va.x);
  if (te.x.rows() > 0) standardize(te.x);

  nn::Mat w = nn::Mat::Zero(2, d), b = nn::Mat::Zero(2, 1);
  nn::Mat mw = nn::Mat::Zero(2, d), mb = nn::Mat::Zero(2, 1);
  const long n = tr.x.rows();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const long steps_per_epoch = std::max<long>(1, (n + config.batch_size - 1) / config.batch_size);
  const long total_steps = config.epochs * steps_per_epoch;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto rng = augment::make_rng(config.seed, 0x9c0be, static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (long s0 = 0; s0 < n; s0 += config.batch_size) {
      long s1 = std::min(n, s0 + config.batch_size);
      long bs = s1 - s0;
      nn::Mat gw = nn::Mat::Zero(2, d), gb = nn::Mat::Zero(2, 1);
      for (long k = s0; k < s1; ++k) {
        int i = order[k];
        Eigen::Vector2d logits = w * tr.x.row(i).transpose() + b.col(0);
        double m = logits.maxCoeff();
        Eigen::Vector2d e = (logits.array() - m).exp();
        Eigen::Vector2d p = e / e.sum();
        p(tr.y[i]) -= 1.0;
        gw += p * tr.x.row(i) / static_cast<double>(bs);
        gb.col(0) += p / static_cast<double>(bs);
      }
      double lr = optim::cosine_lr(std::min(step, total_steps), total_steps, config.lr,
                                   config.final_lr);
      mw = config.momentum * mw + gw;
      mb = config.momentum * mb + gb;
      w -= lr * mw;
      b -= lr * mb;
      ++step;
    }
    log_metrics(result.curve, epoch + 1, "train", predict(w, b, tr), tr.y);
    log_metrics(result.curve, epoch + 1, "val", predict(w, b, va), va.y);
  }

  result.probe.w = w;
  result.probe.b = b;
  result.probe.feature_mean = mean;
  result.probe.feature_std = stddev;
  if (te.x.rows() > 0) result.test_predictions = predict(w, b, te);
  result.encoder_hash_after = nn::hash_params(enc_params);
  return result;
}

SupervisedResult train_supervised(const Dataset& data, const TrainConfig& config,
                                  const nn::EncoderConfig& enc_config,
                                  const augment::AugmentConfig& aug_config,
                                  const std::string& run_id) {
  config.validate();
  auto train_idx = data.split_indices(corpus::Split::train);
  auto val_idx = data.split_indices(corpus::Split::val);
  auto test_idx = data.split_indices(corpus::Split::test);
  if (train_idx.empty()) throw TrainError("train split is empty");

  SupervisedResult result;
  result.model = make_model(enc_config, 0, config.seed);
  Model& model = *result.model;
  result.curve.run_id = run_id;

  nn::ParamRefs opt_params = model.encoder->params();
  opt_params.push_back(&model.classifier_w);
  opt_params.push_back(&model.classifier_b);
  optim::LarsConfig lc{config.lars_trust_coeff, config.weight_decay, config.momentum};
  optim::LarsOptimizer opt(opt_params, lc);

  const long steps_per_epoch =
      std::max<long>(1, (static_cast<long>(train_idx.size()) + config.batch_size - 1) /
                            config.batch_size);
  const long total_steps = static_cast<long>(config.epochs) * steps_per_epoch;

  // Identical augmentation pipeline to the pretext stage, but only the two
  // global views carry the supervised signal.
  augment::AugmentConfig aug = aug_config;
  aug.n_local = 0;
  aug.extended = config.augmentation == Augmentation::ext_multicrop;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto shuffle_rng = augment::make_rng(config.seed, 0x5b0ffe1, static_cast<uint64_t>(epoch));
    auto batches = make_batches(train_idx, config.batch_size, shuffle_rng);
    double epoch_loss = 0.0;
    long step_in_epoch = 0;
    for (const auto& batch : batches) {
      BatchViews bv = build_views(data, batch, aug, config.seed, epoch);
      std::any enc_cache;
      nn::Mat emb = model.encoder->forward(bv.features, enc_cache, true);
      nn::Mat logits = emb * model.classifier_w.value.transpose();
      logits.rowwise() += model.classifier_b.value.col(0).transpose();

      const long nv = logits.rows();
      nn::Mat glogits(nv, 2);
      double loss = 0.0;
      for (long i = 0; i < nv; ++i) {
        double m = std::max(logits(i, 0), logits(i, 1));
        double e0 = std::exp(logits(i, 0) - m), e1 = std::exp(logits(i, 1) - m);
        double z = e0 + e1;
        int y = bv.labels[i];
        loss -= (logits(i, y) - m - std::log(z)) / nv;
        glogits(i, 0) = (e0 / z - (y == 0 ? 1.0 : 0.0)) / nv;
        glogits(i, 1) = (e1 / z - (y == 1 ? 1.0 : 0.0)) / nv;
      }
      if (!std::isfinite(loss))
        throw TrainError("non-finite loss in run " + run_id + " epoch " +
                         std::to_string(epoch) + ", batch: " + batch_ids(data, batch));

      opt.zero_grad();
      model.classifier_w.grad += glogits.transpose() * emb;
      model.classifier_b.grad.col(0) += glogits.colwise().sum().transpose();
      nn::Mat grad_emb = glogits * model.classifier_w.value;
      model.encoder->backward(grad_emb, enc_cache);
      double lr = optim::cosine_lr(
          std::min(total_steps, static_cast<long>(epoch) * steps_per_epoch + step_in_epoch),
          total_steps, config.base_lr, config.final_lr);
      opt.step(lr);
      epoch_loss += loss;
      ++step_in_epoch;
    }
    result.curve.points.push_back(
        {epoch + 1, "train", "loss", batches.empty() ? 0.0 : epoch_loss / batches.size()});

    auto eval_split = [&](const std::vector<int>& idx, const std::string& name) {
      if (idx.empty()) return;
      nn::Mat x = eval_embeddings(*model.encoder, data, idx, aug);
      SplitData sd;
      sd.x = x;
      for (int i : idx) {
        sd.y.push_back(data.samples[i].label);
        sd.ids.push_back(data.samples[i].id);
      }
      log_metrics(result.curve, epoch + 1, name,
                  predict(model.classifier_w.value, model.classifier_b.value, sd), sd.y);
    };
    eval_split(train_idx, "train");
    eval_split(val_idx, "val");
  }

  if (!test_idx.empty()) {
    nn::Mat x = eval_embeddings(*model.encoder, data, test_idx, aug);
    SplitData sd;
    sd.x = x;
    for (int i : test_idx) {
      sd.y.push_back(data.samples[i].label);
      sd.ids.push_back(data.samples[i].id);
    }
    result.test_predictions = predict(model.classifier_w.value, model.classifier_b.value, sd);
  }
  return result;
}

}  // namespace osteo::train
