#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "osteo/augment.hpp"
#include "osteo/corpus.hpp"
#include "osteo/eval.hpp"
#include "osteo/nn.hpp"
#include "osteo/optim.hpp"
#include "osteo/ssl.hpp"

namespace osteo::train {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Objective { supervised, simclr, supcon, swav, vicreg };
enum class Augmentation { multicrop, ext_multicrop };

Objective objective_from_string(const std::string& s);
Augmentation augmentation_from_string(const std::string& s);
const char* to_string(Objective o);
const char* to_string(Augmentation a);

struct TrainConfig {
  int batch_size = 128;
  int epochs = 100;
  // Pause after this many epochs (0 = run to `epochs`). The cosine schedule
  // still spans `epochs`, so a paused run resumes bit-for-bit.
  int stop_after_epochs = 0;
  double base_lr = 0.3;  // 0.6 * batch/256 for the default batch of 128
  double final_lr = 1e-4;
  double lars_trust_coeff = 0.001;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  uint64_t seed = 0;
  Objective objective = Objective::simclr;
  Augmentation augmentation = Augmentation::ext_multicrop;

  // Objective hyperparameters (cited methods' conventions).
  double simclr_temperature = 0.1;
  double supcon_temperature = 0.07;
  double swav_temperature = 0.1;
  double swav_epsilon = 0.05;
  int swav_sinkhorn_iters = 3;
  int swav_prototypes = 300;
  ssl::VicregWeights vicreg;

  void validate() const;
};

struct ProbeConfig {
  int epochs = 50;
  double lr = 0.1;
  double final_lr = 1e-3;
  double momentum = 0.9;
  int batch_size = 64;
  uint64_t seed = 0;
};

// One preprocessed bone segment: masked, bbox-cropped, in memory.
struct SegmentSample {
  std::string id;  // subject/bone[/n]
  std::string subject_id;
  int label = 0;
  corpus::Split split = corpus::Split::train;
  GrayImage image;
};

struct Dataset {
  std::vector<SegmentSample> samples;
  std::vector<int> split_indices(corpus::Split split) const;
};

// Loads every manifest segment, applies its mask and crops to the padded
// bounding box (padding 8).
Dataset load_dataset(const std::vector<corpus::SegmentRecord>& records);
Dataset load_dataset_from_manifest(const std::string& manifest_path);

// Encoder + projection head (+ SwAV prototypes), the unit a checkpoint holds.
struct Model {
  nn::EncoderConfig encoder_config;
  std::unique_ptr<nn::Encoder> encoder;
  std::unique_ptr<nn::ProjectionHead> head;
  nn::Param prototypes;     // K x projection_dim, unit rows; used by SwAV only
  nn::Param classifier_w;   // 2 x D, used by the supervised baseline
  nn::Param classifier_b;   // 2 x 1

  nn::ParamRefs all_params();
  nn::ParamRefs encoder_params();
};

std::unique_ptr<Model> make_model(const nn::EncoderConfig& config, int swav_prototypes,
                                  uint64_t seed);

struct Checkpoint {
  uint32_t version = 1;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  int epoch = 0;  // epochs completed
  nn::EncoderConfig encoder_config;
  int swav_prototypes = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& meta, Model& model,
                     const std::vector<nn::Mat>& momentum);
Checkpoint load_checkpoint(const std::string& path, std::unique_ptr<Model>& model,
                           std::vector<nn::Mat>& momentum);

struct PretrainResult {
  std::unique_ptr<Model> model;
  std::vector<nn::Mat> momentum;
  eval::MetricCurve curve;
  int epochs_done = 0;
};

// Pretext training: per batch, augment each segment into V+2 views, encode,
// project, apply the configured objective through the multi-crop combiner,
// and update with LARC under cosine annealing. Deterministic given the seed.
// `resume` continues a checkpointed run from its recorded epoch.
PretrainResult pretrain(const Dataset& data, const TrainConfig& config,
                        const nn::EncoderConfig& enc_config,
                        const augment::AugmentConfig& aug_config,
                        const std::string& run_id,
                        const std::string& resume_checkpoint = "");

struct ProbeModel {
  nn::Mat w;  // 2 x D
  nn::Mat b;  // 2 x 1
  nn::Mat feature_mean;  // 1 x D standardization, fitted on train
  nn::Mat feature_std;   // 1 x D
};

struct ProbeResult {
  ProbeModel probe;
  eval::MetricCurve curve;
  eval::PredictionSet test_predictions;
  uint64_t encoder_hash_before = 0;
  uint64_t encoder_hash_after = 0;
};

// Frozen-encoder linear evaluation: each segment contributes one seeded
// global view (content-checked random resized crop, the same view family the
// pretext stage trains invariance to); only the 2-logit linear layer (on
// standardized features) is trained.
ProbeResult linear_probe(Model& model, const Dataset& data, const ProbeConfig& config,
                         const augment::AugmentConfig& aug, const std::string& run_id);

struct SupervisedResult {
  std::unique_ptr<Model> model;
  eval::MetricCurve curve;
  eval::PredictionSet test_predictions;
};

// End-to-end supervised baseline: encoder + linear classifier trained with
// cross-entropy on augmented global views.
SupervisedResult train_supervised(const Dataset& data, const TrainConfig& config,
                                  const nn::EncoderConfig& enc_config,
                                  const augment::AugmentConfig& aug_config,
                                  const std::string& run_id);

// Embeddings for the seeded evaluation view (one global crop per segment,
// deterministic given the sample index).
nn::Mat eval_embeddings(nn::Encoder& encoder, const Dataset& data,
                        const std::vector<int>& indices, const augment::AugmentConfig& aug);

uint64_t hash_config_string(const std::string& resolved);

}  // namespace osteo::train
