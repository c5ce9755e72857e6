#pragma once

#include <Eigen/Dense>
#include <any>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace osteo::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

class NnError : public std::runtime_error {
 public:
  explicit NnError(const std::string& msg) : std::runtime_error(msg) {}
};

// One image's activations, channel-major: data is C x (h*w).
struct FeatureMap {
  Mat data;
  int h = 0;
  int w = 0;
  int channels() const { return static_cast<int>(data.rows()); }
};
using FeatureBatch = std::vector<FeatureMap>;

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;  // false for batch-norm running stats

  void zero_grad() { grad.setZero(); }
};
using ParamRefs = std::vector<Param*>;

// Spatial layers: forward fills an opaque cache consumed by the matching
// backward call. Caches are per-call, so several forwards may be in flight.
class SpatialLayer {
 public:
  virtual ~SpatialLayer() = default;
  virtual FeatureBatch forward(const FeatureBatch& x, std::any& cache, bool train) = 0;
  virtual FeatureBatch backward(const FeatureBatch& grad, const std::any& cache) = 0;
  virtual void collect(ParamRefs& out) {}
};

class Conv2d : public SpatialLayer {
 public:
  Conv2d(const std::string& name, int in_c, int out_c, int k, int stride, int pad, Rng& rng);
  FeatureBatch forward(const FeatureBatch& x, std::any& cache, bool train) override;
  FeatureBatch backward(const FeatureBatch& grad, const std::any& cache) override;
  void collect(ParamRefs& out) override;

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  Param w_;  // out_c x (in_c*k*k)
  Param b_;  // out_c x 1
};

class BatchNorm2d : public SpatialLayer {
 public:
  BatchNorm2d(const std::string& name, int channels);
  FeatureBatch forward(const FeatureBatch& x, std::any& cache, bool train) override;
  FeatureBatch backward(const FeatureBatch& grad, const std::any& cache) override;
  void collect(ParamRefs& out) override;

 private:
  int c_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Param gamma_, beta_;
  Param running_mean_, running_var_;
};

class ReLU : public SpatialLayer {
 public:
  FeatureBatch forward(const FeatureBatch& x, std::any& cache, bool train) override;
  FeatureBatch backward(const FeatureBatch& grad, const std::any& cache) override;
};

class MaxPool2d : public SpatialLayer {
 public:
  MaxPool2d(int k, int stride, int pad) : k_(k), stride_(stride), pad_(pad) {}
  FeatureBatch forward(const FeatureBatch& x, std::any& cache, bool train) override;
  FeatureBatch backward(const FeatureBatch& grad, const std::any& cache) override;

 private:
  int k_, stride_, pad_;
};

class Sequential : public SpatialLayer {
 public:
  void add(std::unique_ptr<SpatialLayer> layer) { layers_.push_back(std::move(layer)); }
  FeatureBatch forward(const FeatureBatch& x, std::any& cache, bool train) override;
  FeatureBatch backward(const FeatureBatch& grad, const std::any& cache) override;
  void collect(ParamRefs& out) override;

 private:
  std::vector<std::unique_ptr<SpatialLayer>> layers_;
};

// ResNet bottleneck: 1x1 -> 3x3 (stride) -> 1x1 with a projection shortcut
// when the shape changes; ReLU after the residual add.
class Bottleneck : public SpatialLayer {
 public:
  Bottleneck(const std::string& name, int in_c, int mid_c, int out_c, int stride, Rng& rng);
  FeatureBatch forward(const FeatureBatch& x, std::any& cache, bool train) override;
  FeatureBatch backward(const FeatureBatch& grad, const std::any& cache) override;
  void collect(ParamRefs& out) override;

 private:
  Sequential main_;
  std::unique_ptr<Sequential> shortcut_;  // null = identity
};

// Dense linear layer on row-major batches (N x in) -> (N x out).
class Linear {
 public:
  Linear(const std::string& name, int in_dim, int out_dim, Rng& rng);
  Mat forward(const Mat& x, std::any& cache) const;
  Mat backward(const Mat& grad, const std::any& cache);
  void collect(ParamRefs& out);

 private:
  Param w_;  // out x in
  Param b_;  // out x 1
};

// Row-wise L2 normalization with backward.
Mat l2_normalize_rows(const Mat& x, std::any& cache);
Mat l2_normalize_rows_backward(const Mat& grad, const std::any& cache);

struct EncoderConfig {
  enum class Arch { small_cnn, resnet50 };
  Arch architecture = Arch::small_cnn;
  int embedding_dim = 128;
  int projection_dim = 64;
};

EncoderConfig::Arch arch_from_string(const std::string& s);
const char* to_string(EncoderConfig::Arch a);

// Convolutional trunk + global average pool + linear map to the embedding.
class Encoder {
 public:
  Encoder(const EncoderConfig& config, Rng& rng);
  // images: one FeatureMap per input, 1 x (h*w). Returns N x D embeddings.
  Mat forward(const FeatureBatch& images, std::any& cache, bool train);
  Mat forward_eval(const FeatureBatch& images);
  void backward(const Mat& grad_embeddings, const std::any& cache);
  ParamRefs params();
  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  Sequential trunk_;
  int trunk_out_channels_ = 0;
  std::unique_ptr<Linear> fc_;
};

// 2-layer projection head: D -> D (ReLU) -> projection_dim.
class ProjectionHead {
 public:
  ProjectionHead(int in_dim, int out_dim, Rng& rng);
  Mat forward(const Mat& x, std::any& cache);
  Mat backward(const Mat& grad, const std::any& cache);
  ParamRefs params();

 private:
  Linear l1_, l2_;
};

// Converts a [0,1] grayscale image into a 1-channel FeatureMap.
FeatureMap to_feature(const std::vector<float>& pixels, int width, int height);

// FNV-1a hash of all parameter bytes; used by the frozen-encoder contract.
uint64_t hash_params(const ParamRefs& params);

}  // namespace osteo::nn
