#include "osteo/nn.hpp"

#include <cmath>

namespace osteo::nn {

namespace {

double he_std(int fan_in) { return std::sqrt(2.0 / fan_in); }

Mat he_init(int rows, int cols, int fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, he_std(fan_in));
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

struct ConvDims {
  int oh, ow;
};

ConvDims conv_out_dims(int h, int w, int k, int stride, int pad) {
  int oh = (h + 2 * pad - k) / stride + 1;
  int ow = (w + 2 * pad - k) / stride + 1;
  if (oh < 1 || ow < 1) throw NnError("conv output would be empty");
  return {oh, ow};
}

// col: (C*k*k) x (oh*ow)
Mat im2col(const FeatureMap& x, int k, int stride, int pad, int oh, int ow) {
  const int c = x.channels();
  Mat col = Mat::Zero(static_cast<long>(c) * k * k, static_cast<long>(oh) * ow);
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (ch * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            col(row, oy * ow + ox) = x.data(ch, iy * x.w + ix);
          }
        }
      }
    }
  }
  return col;
}

void col2im_accumulate(const Mat& col, FeatureMap& x, int k, int stride, int pad, int oh,
                       int ow) {
  const int c = x.channels();
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (ch * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            x.data(ch, iy * x.w + ix) += col(row, oy * ow + ox);
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, int in_c, int out_c, int k, int stride, int pad,
               Rng& rng)
    : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad) {
  w_.name = name + ".weight";
  w_.value = he_init(out_c, in_c * k * k, in_c * k * k, rng);
  w_.grad = Mat::Zero(out_c, in_c * k * k);
  b_.name = name + ".bias";
  b_.value = Mat::Zero(out_c, 1);
  b_.grad = Mat::Zero(out_c, 1);
}

struct ConvCache {
  FeatureBatch input;
};

FeatureBatch Conv2d::forward(const FeatureBatch& x, std::any& cache, bool train) {
  FeatureBatch out;
  out.reserve(x.size());
  for (const auto& img : x) {
    if (img.channels() != in_c_) throw NnError("conv channel mismatch");
    auto [oh, ow] = conv_out_dims(img.h, img.w, k_, stride_, pad_);
    Mat col = im2col(img, k_, stride_, pad_, oh, ow);
    FeatureMap y;
    y.h = oh;
    y.w = ow;
    y.data = w_.value * col;
    y.data.colwise() += b_.value.col(0);
    out.push_back(std::move(y));
  }
  if (train) cache = ConvCache{x};
  return out;
}

FeatureBatch Conv2d::backward(const FeatureBatch& grad, const std::any& cache) {
  const auto& c = std::any_cast<const ConvCache&>(cache);
  FeatureBatch gin;
  gin.reserve(grad.size());
  for (size_t i = 0; i < grad.size(); ++i) {
    const FeatureMap& img = c.input[i];
    const FeatureMap& g = grad[i];
    Mat col = im2col(img, k_, stride_, pad_, g.h, g.w);
    w_.grad += g.data * col.transpose();
    b_.grad.col(0) += g.data.rowwise().sum();
    Mat gcol = w_.value.transpose() * g.data;
    FeatureMap gi;
    gi.h = img.h;
    gi.w = img.w;
    gi.data = Mat::Zero(img.channels(), static_cast<long>(img.h) * img.w);
    col2im_accumulate(gcol, gi, k_, stride_, pad_, g.h, g.w);
    gin.push_back(std::move(gi));
  }
  return gin;
}

void Conv2d::collect(ParamRefs& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(const std::string& name, int channels) : c_(channels) {
  gamma_.name = name + ".gamma";
  gamma_.value = Mat::Ones(channels, 1);
  gamma_.grad = Mat::Zero(channels, 1);
  beta_.name = name + ".beta";
  beta_.value = Mat::Zero(channels, 1);
  beta_.grad = Mat::Zero(channels, 1);
  running_mean_.name = name + ".running_mean";
  running_mean_.value = Mat::Zero(channels, 1);
  running_mean_.grad = Mat::Zero(channels, 1);
  running_mean_.trainable = false;
  running_var_.name = name + ".running_var";
  running_var_.value = Mat::Ones(channels, 1);
  running_var_.grad = Mat::Zero(channels, 1);
  running_var_.trainable = false;
}

struct BnCache {
  FeatureBatch xhat;
  Vec inv_std;
  long count = 0;
};

FeatureBatch BatchNorm2d::forward(const FeatureBatch& x, std::any& cache, bool train) {
  Vec mean(c_), var(c_);
  long count = 0;
  if (train) {
    mean.setZero();
    for (const auto& img : x) {
      mean += img.data.rowwise().sum();
      count += img.data.cols();
    }
    mean /= static_cast<double>(count);
    var.setZero();
    for (const auto& img : x)
      var += (img.data.colwise() - mean).array().square().matrix().rowwise().sum();
    var /= static_cast<double>(count);
    running_mean_.value.col(0) = (1.0 - momentum_) * running_mean_.value.col(0) + momentum_ * mean;
    running_var_.value.col(0) = (1.0 - momentum_) * running_var_.value.col(0) + momentum_ * var;
  } else {
    mean = running_mean_.value.col(0);
    var = running_var_.value.col(0);
  }
  Vec inv_std = (var.array() + eps_).rsqrt();

  FeatureBatch out;
  out.reserve(x.size());
  BnCache bc;
  for (const auto& img : x) {
    FeatureMap xh;
    xh.h = img.h;
    xh.w = img.w;
    xh.data = (img.data.colwise() - mean).array().colwise() * inv_std.array();
    FeatureMap y;
    y.h = img.h;
    y.w = img.w;
    y.data = (xh.data.array().colwise() * gamma_.value.col(0).array()).matrix();
    y.data.colwise() += beta_.value.col(0);
    if (train) bc.xhat.push_back(std::move(xh));
    out.push_back(std::move(y));
  }
  if (train) {
    bc.inv_std = inv_std;
    bc.count = count;
    cache = std::move(bc);
  }
  return out;
}

FeatureBatch BatchNorm2d::backward(const FeatureBatch& grad, const std::any& cache) {
  const auto& bc = std::any_cast<const BnCache&>(cache);
  const double m = static_cast<double>(bc.count);
  Vec sum_g = Vec::Zero(c_), sum_gx = Vec::Zero(c_);
  for (size_t i = 0; i < grad.size(); ++i) {
    sum_g += grad[i].data.rowwise().sum();
    sum_gx += (grad[i].data.array() * bc.xhat[i].data.array()).matrix().rowwise().sum();
  }
  gamma_.grad.col(0) += sum_gx;
  beta_.grad.col(0) += sum_g;

  Vec scale = gamma_.value.col(0).array() * bc.inv_std.array();
  FeatureBatch gin;
  gin.reserve(grad.size());
  for (size_t i = 0; i < grad.size(); ++i) {
    FeatureMap gi;
    gi.h = grad[i].h;
    gi.w = grad[i].w;
    Mat centered = grad[i].data.colwise() - (sum_g / m);
    centered -= (bc.xhat[i].data.array().colwise() * (sum_gx / m).array()).matrix();
    gi.data = (centered.array().colwise() * scale.array()).matrix();
    gin.push_back(std::move(gi));
  }
  return gin;
}

void BatchNorm2d::collect(ParamRefs& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ----------------------------------------------------------------- ReLU

struct ReluCache {
  FeatureBatch out;
};

FeatureBatch ReLU::forward(const FeatureBatch& x, std::any& cache, bool train) {
  FeatureBatch out;
  out.reserve(x.size());
  for (const auto& img : x) {
    FeatureMap y;
    y.h = img.h;
    y.w = img.w;
    y.data = img.data.cwiseMax(0.0);
    out.push_back(std::move(y));
  }
  if (train) cache = ReluCache{out};
  return out;
}

FeatureBatch ReLU::backward(const FeatureBatch& grad, const std::any& cache) {
  const auto& rc = std::any_cast<const ReluCache&>(cache);
  FeatureBatch gin;
  gin.reserve(grad.size());
  for (size_t i = 0; i < grad.size(); ++i) {
    FeatureMap gi;
    gi.h = grad[i].h;
    gi.w = grad[i].w;
    gi.data = (rc.out[i].data.array() > 0.0).cast<double>() * grad[i].data.array();
    gin.push_back(std::move(gi));
  }
  return gin;
}

// -------------------------------------------------------------- MaxPool2d

struct PoolCache {
  std::vector<Eigen::MatrixXi> argmax;  // per image: C x (oh*ow), input index
  std::vector<std::pair<int, int>> in_dims;
};

FeatureBatch MaxPool2d::forward(const FeatureBatch& x, std::any& cache, bool train) {
  FeatureBatch out;
  PoolCache pc;
  for (const auto& img : x) {
    auto [oh, ow] = conv_out_dims(img.h, img.w, k_, stride_, pad_);
    FeatureMap y;
    y.h = oh;
    y.w = ow;
    y.data = Mat::Constant(img.channels(), static_cast<long>(oh) * ow,
                           -std::numeric_limits<double>::infinity());
    Eigen::MatrixXi am = Eigen::MatrixXi::Constant(img.channels(), oh * ow, -1);
    for (int ch = 0; ch < img.channels(); ++ch) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          for (int ky = 0; ky < k_; ++ky) {
            int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= img.h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= img.w) continue;
              double v = img.data(ch, iy * img.w + ix);
              if (v > y.data(ch, oy * ow + ox)) {
                y.data(ch, oy * ow + ox) = v;
                am(ch, oy * ow + ox) = iy * img.w + ix;
              }
            }
          }
        }
      }
    }
    if (train) {
      pc.argmax.push_back(std::move(am));
      pc.in_dims.emplace_back(img.h, img.w);
    }
    out.push_back(std::move(y));
  }
  if (train) cache = std::move(pc);
  return out;
}

FeatureBatch MaxPool2d::backward(const FeatureBatch& grad, const std::any& cache) {
  const auto& pc = std::any_cast<const PoolCache&>(cache);
  FeatureBatch gin;
  for (size_t i = 0; i < grad.size(); ++i) {
    auto [ih, iw] = pc.in_dims[i];
    FeatureMap gi;
    gi.h = ih;
    gi.w = iw;
    gi.data = Mat::Zero(grad[i].channels(), static_cast<long>(ih) * iw);
    for (int ch = 0; ch < grad[i].channels(); ++ch)
      for (long p = 0; p < grad[i].data.cols(); ++p) {
        int src = pc.argmax[i](ch, p);
        if (src >= 0) gi.data(ch, src) += grad[i].data(ch, p);
      }
    gin.push_back(std::move(gi));
  }
  return gin;
}

// ------------------------------------------------------------- Sequential

FeatureBatch Sequential::forward(const FeatureBatch& x, std::any& cache, bool train) {
  std::vector<std::any> caches(layers_.size());
  FeatureBatch cur = x;
  for (size_t i = 0; i < layers_.size(); ++i) cur = layers_[i]->forward(cur, caches[i], train);
  if (train) cache = std::move(caches);
  return cur;
}

FeatureBatch Sequential::backward(const FeatureBatch& grad, const std::any& cache) {
  const auto& caches = std::any_cast<const std::vector<std::any>&>(cache);
  FeatureBatch cur = grad;
  for (size_t i = layers_.size(); i-- > 0;) cur = layers_[i]->backward(cur, caches[i]);
  return cur;
}

void Sequential::collect(ParamRefs& out) {
  for (auto& l : layers_) l->collect(out);
}

// ------------------------------------------------------------- Bottleneck

Bottleneck::Bottleneck(const std::string& name, int in_c, int mid_c, int out_c, int stride,
                       Rng& rng) {
  main_.add(std::make_unique<Conv2d>(name + ".conv1", in_c, mid_c, 1, 1, 0, rng));
  main_.add(std::make_unique<BatchNorm2d>(name + ".bn1", mid_c));
  main_.add(std::make_unique<ReLU>());
  main_.add(std::make_unique<Conv2d>(name + ".conv2", mid_c, mid_c, 3, stride, 1, rng));
  main_.add(std::make_unique<BatchNorm2d>(name + ".bn2", mid_c));
  main_.add(std::make_unique<ReLU>());
  main_.add(std::make_unique<Conv2d>(name + ".conv3", mid_c, out_c, 1, 1, 0, rng));
  main_.add(std::make_unique<BatchNorm2d>(name + ".bn3", out_c));
  if (in_c != out_c || stride != 1) {
    shortcut_ = std::make_unique<Sequential>();
    shortcut_->add(std::make_unique<Conv2d>(name + ".down", in_c, out_c, 1, stride, 0, rng));
    shortcut_->add(std::make_unique<BatchNorm2d>(name + ".down_bn", out_c));
  }
}

struct BottleneckCache {
  std::any main_cache;
  std::any shortcut_cache;
  FeatureBatch sum;  // pre-ReLU residual sum, for the ReLU mask
};

FeatureBatch Bottleneck::forward(const FeatureBatch& x, std::any& cache, bool train) {
  BottleneckCache bc;
  FeatureBatch main_out = main_.forward(x, bc.main_cache, train);
  FeatureBatch short_out =
      shortcut_ ? shortcut_->forward(x, bc.shortcut_cache, train) : x;
  FeatureBatch out;
  out.reserve(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    FeatureMap y;
    y.h = main_out[i].h;
    y.w = main_out[i].w;
    y.data = main_out[i].data + short_out[i].data;
    if (train) {
      FeatureMap s = y;
      bc.sum.push_back(std::move(s));
    }
    y.data = y.data.cwiseMax(0.0);
    out.push_back(std::move(y));
  }
  if (train) cache = std::move(bc);
  return out;
}

FeatureBatch Bottleneck::backward(const FeatureBatch& grad, const std::any& cache) {
  const auto& bc = std::any_cast<const BottleneckCache&>(cache);
  FeatureBatch gsum;
  gsum.reserve(grad.size());
  for (size_t i = 0; i < grad.size(); ++i) {
    FeatureMap g;
    g.h = grad[i].h;
    g.w = grad[i].w;
    g.data = (bc.sum[i].data.array() > 0.0).cast<double>() * grad[i].data.array();
    gsum.push_back(std::move(g));
  }
  FeatureBatch gmain = main_.backward(gsum, bc.main_cache);
  if (shortcut_) {
    FeatureBatch gshort = shortcut_->backward(gsum, bc.shortcut_cache);
    for (size_t i = 0; i < gmain.size(); ++i) gmain[i].data += gshort[i].data;
  } else {
    for (size_t i = 0; i < gmain.size(); ++i) gmain[i].data += gsum[i].data;
  }
  return gmain;
}

void Bottleneck::collect(ParamRefs& out) {
  main_.collect(out);
  if (shortcut_) shortcut_->collect(out);
}

// ----------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, int in_dim, int out_dim, Rng& rng) {
  w_.name = name + ".weight";
  w_.value = he_init(out_dim, in_dim, in_dim, rng);
  w_.grad = Mat::Zero(out_dim, in_dim);
  b_.name = name + ".bias";
  b_.value = Mat::Zero(out_dim, 1);
  b_.grad = Mat::Zero(out_dim, 1);
}

struct LinearCache {
  Mat input;
};

Mat Linear::forward(const Mat& x, std::any& cache) const {
  cache = LinearCache{x};
  Mat y = x * w_.value.transpose();
  y.rowwise() += b_.value.col(0).transpose();
  return y;
}

Mat Linear::backward(const Mat& grad, const std::any& cache) {
  const auto& lc = std::any_cast<const LinearCache&>(cache);
  w_.grad += grad.transpose() * lc.input;
  b_.grad.col(0) += grad.colwise().sum().transpose();
  return grad * w_.value;
}

void Linear::collect(ParamRefs& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

// ---------------------------------------------------------- L2 normalize

struct L2Cache {
  Mat x;
  Vec norms;
};

Mat l2_normalize_rows(const Mat& x, std::any& cache) {
  Vec norms = x.rowwise().norm();
  for (int i = 0; i < norms.size(); ++i)
    if (norms(i) < 1e-12) throw NnError("cannot normalize a zero row");
  Mat y = x.array().colwise() / norms.array();
  cache = L2Cache{x, norms};
  return y;
}

Mat l2_normalize_rows_backward(const Mat& grad, const std::any& cache) {
  const auto& lc = std::any_cast<const L2Cache&>(cache);
  Mat out(grad.rows(), grad.cols());
  for (int i = 0; i < grad.rows(); ++i) {
    double n = lc.norms(i);
    Eigen::RowVectorXd zhat = lc.x.row(i) / n;
    out.row(i) = (grad.row(i) - (grad.row(i).dot(zhat)) * zhat) / n;
  }
  return out;
}

// ---------------------------------------------------------------- Encoder

EncoderConfig::Arch arch_from_string(const std::string& s) {
  if (s == "small_cnn") return EncoderConfig::Arch::small_cnn;
  if (s == "resnet50") return EncoderConfig::Arch::resnet50;
  throw NnError("unknown encoder architecture: " + s);
}

const char* to_string(EncoderConfig::Arch a) {
  return a == EncoderConfig::Arch::small_cnn ? "small_cnn" : "resnet50";
}

Encoder::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  if (config.embedding_dim < 2 || config.projection_dim < 2)
    throw NnError("embedding and projection dims must be >= 2");
  if (config.architecture == EncoderConfig::Arch::small_cnn) {
    // 4 stride-2 conv blocks: 1 -> 8 -> 16 -> 32 -> 64 channels.
    const int chans[5] = {1, 8, 16, 32, 64};
    for (int i = 0; i < 4; ++i) {
      std::string name = "block" + std::to_string(i + 1);
      trunk_.add(std::make_unique<Conv2d>(name + ".conv", chans[i], chans[i + 1], 3, 2, 1, rng));
      trunk_.add(std::make_unique<BatchNorm2d>(name + ".bn", chans[i + 1]));
      trunk_.add(std::make_unique<ReLU>());
    }
    trunk_out_channels_ = 64;
  } else {
    trunk_.add(std::make_unique<Conv2d>("stem.conv", 1, 64, 7, 2, 3, rng));
    trunk_.add(std::make_unique<BatchNorm2d>("stem.bn", 64));
    trunk_.add(std::make_unique<ReLU>());
    trunk_.add(std::make_unique<MaxPool2d>(3, 2, 1));
    const int blocks[4] = {3, 4, 6, 3};
    const int mids[4] = {64, 128, 256, 512};
    int in_c = 64;
    for (int stage = 0; stage < 4; ++stage) {
      int out_c = mids[stage] * 4;
      for (int b = 0; b < blocks[stage]; ++b) {
        int stride = (b == 0 && stage > 0) ? 2 : 1;
        std::string name = "layer" + std::to_string(stage + 1) + "." + std::to_string(b);
        trunk_.add(std::make_unique<Bottleneck>(name, in_c, mids[stage], out_c, stride, rng));
        in_c = out_c;
      }
    }
    trunk_out_channels_ = 2048;
  }
  fc_ = std::make_unique<Linear>("embed", trunk_out_channels_, config.embedding_dim, rng);
}

struct EncoderCache {
  std::any trunk_cache;
  std::any fc_cache;
  std::vector<std::pair<int, int>> spatial;  // per-image trunk output (h, w)
};

Mat Encoder::forward(const FeatureBatch& images, std::any& cache, bool train) {
  EncoderCache ec;
  FeatureBatch feats = trunk_.forward(images, ec.trunk_cache, train);
  Mat pooled(static_cast<long>(feats.size()), trunk_out_channels_);
  for (size_t i = 0; i < feats.size(); ++i) {
    pooled.row(static_cast<long>(i)) = feats[i].data.rowwise().mean().transpose();
    ec.spatial.emplace_back(feats[i].h, feats[i].w);
  }
  Mat emb = fc_->forward(pooled, ec.fc_cache);
  if (train) cache = std::move(ec);
  return emb;
}

Mat Encoder::forward_eval(const FeatureBatch& images) {
  std::any scratch;
  return forward(images, scratch, false);
}

void Encoder::backward(const Mat& grad_embeddings, const std::any& cache) {
  const auto& ec = std::any_cast<const EncoderCache&>(cache);
  Mat gpooled = fc_->backward(grad_embeddings, ec.fc_cache);
  FeatureBatch gfeats;
  for (long i = 0; i < gpooled.rows(); ++i) {
    FeatureMap g;
    auto [h, w] = ec.spatial[i];
    long hw = static_cast<long>(h) * w;
    g.data = (gpooled.row(i).transpose() / static_cast<double>(hw)) *
             Eigen::RowVectorXd::Ones(hw);
    g.h = h;
    g.w = w;
    gfeats.push_back(std::move(g));
  }
  trunk_.backward(gfeats, ec.trunk_cache);
}

ParamRefs Encoder::params() {
  ParamRefs out;
  trunk_.collect(out);
  fc_->collect(out);
  return out;
}

// --------------------------------------------------------- ProjectionHead

ProjectionHead::ProjectionHead(int in_dim, int out_dim, Rng& rng)
    : l1_("proj.fc1", in_dim, in_dim, rng), l2_("proj.fc2", in_dim, out_dim, rng) {}

struct HeadCache {
  std::any c1, c2;
  Mat hidden;  // post-ReLU
};

Mat ProjectionHead::forward(const Mat& x, std::any& cache) {
  HeadCache hc;
  Mat h = l1_.forward(x, hc.c1).cwiseMax(0.0);
  hc.hidden = h;
  Mat out = l2_.forward(h, hc.c2);
  cache = std::move(hc);
  return out;
}

Mat ProjectionHead::backward(const Mat& grad, const std::any& cache) {
  const auto& hc = std::any_cast<const HeadCache&>(cache);
  Mat gh = l2_.backward(grad, hc.c2);
  gh = ((hc.hidden.array() > 0.0).cast<double>() * gh.array()).matrix();
  return l1_.backward(gh, hc.c1);
}

ParamRefs ProjectionHead::params() {
  ParamRefs out;
  l1_.collect(out);
  l2_.collect(out);
  return out;
}

// ------------------------------------------------------------------ misc

FeatureMap to_feature(const std::vector<float>& pixels, int width, int height) {
  FeatureMap fm;
  fm.h = height;
  fm.w = width;
  fm.data = Mat(1, static_cast<long>(width) * height);
  for (size_t i = 0; i < pixels.size(); ++i) fm.data(0, static_cast<long>(i)) = pixels[i];
  return fm;
}

uint64_t hash_params(const ParamRefs& params) {
  uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Param* p : params)
    mix_bytes(p->value.data(), sizeof(double) * p->value.size());
  return h;
}

}  // namespace osteo::nn
