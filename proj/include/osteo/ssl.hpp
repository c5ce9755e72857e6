#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace osteo::ssl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class SslError : public std::runtime_error {
 public:
  explicit SslError(const std::string& msg) : std::runtime_error(msg) {}
};

// A batch of view embeddings, one row per view. Rows must already be
// L2-normalized for the similarity-based objectives (SimCLR, SupCon, SwAV);
// VICReg consumes raw projections.
struct EmbeddingBatch {
  Mat z;                          // N x D
  std::vector<int> view_index;    // slot in [0, V+2), slots 0 and 1 are global
  std::vector<int> source_index;  // segment identifier per row
  std::vector<int> labels;        // optional; empty or -1 = unlabeled

  int rows() const { return static_cast<int>(z.rows()); }
  void validate() const;
};

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> terms;
  Mat grad_z;           // dtotal/dz, same shape as z
  Mat grad_prototypes;  // K x D for SwAV, otherwise empty
  int skipped_anchors = 0;
};

// NT-Xent for one anchor/positive pair against an explicit negative set:
//   -log exp(a.b/tau) / (exp(a.b/tau) + sum_k exp(a.n_k/tau))
// All vectors are assumed unit-norm; similarities are plain dot products.
double pair_loss_ntxent(const Vec& z_a, const Vec& z_b, const Mat& negatives, double temperature);

// Same with gradients w.r.t. anchor, positive, and negatives.
struct NtxentGrad {
  double loss = 0.0;
  Vec grad_a, grad_b;
  Mat grad_negatives;
};
NtxentGrad pair_loss_ntxent_grad(const Vec& z_a, const Vec& z_b, const Mat& negatives,
                                 double temperature);

// Supervised contrastive loss over the whole batch: every row is an anchor,
// positives are other rows sharing its label, denominator runs over all other
// rows. Anchors without positives are skipped (counted in skipped_anchors);
// a batch with no usable anchor is an error.
LossReport supcon_loss(const EmbeddingBatch& batch, double temperature);

// Q = exp(scores/epsilon) iteratively rescaled so columns sum to N/K and rows
// sum to 1; the last operation of each iteration is the row normalization.
// Row maxima are subtracted before exponentiation to avoid overflow.
Mat sinkhorn_knopp(const Mat& scores, double epsilon, int n_iters);

// SwAV swapped prediction over a multi-crop batch. Codes come from the two
// global slots via sinkhorn_knopp and are excluded from the gradient.
LossReport swav_loss(const EmbeddingBatch& batch, const Mat& prototypes, double temperature,
                     double epsilon, int n_iters);

// Evaluation path with externally fixed codes (codes[g] is the S x K code
// matrix for global slot g). Used internally and by finite-difference checks,
// which must hold Q constant while perturbing z or the prototypes.
LossReport swav_loss_with_codes(const EmbeddingBatch& batch, const Mat& prototypes,
                                const std::vector<Mat>& codes, double temperature);

// Computes the per-global-slot code matrices for a batch.
std::vector<Mat> swav_codes(const EmbeddingBatch& batch, const Mat& prototypes,
                            double epsilon, int n_iters);

struct VicregWeights {
  double lambda_v = 25.0;  // invariance
  double mu_i = 25.0;      // variance
  double nu_c = 1.0;       // covariance
};

// Two-branch VICReg on raw (unnormalized) projections:
//   invariance = mean_i ||a_i - b_i||^2
//   variance   = mean_d max(0, 1 - std_d) per branch, summed over branches
//   covariance = sum of squared off-diagonal covariance entries / D per
//                branch, summed over branches
// std/cov use the unbiased (N-1) normalizer. grad_z stacks [grad_a; grad_b].
LossReport vicreg_loss(const Mat& z_a, const Mat& z_b, const VicregWeights& w);

// One combiner term: pair loss between slot v (anchors) and slot i (targets),
// already averaged over sources. Z matrices are S x D, row s = source s.
struct PairTerm {
  double loss = 0.0;
  Mat grad_v;  // dloss/dZv
  Mat grad_i;  // dloss/dZi
};
using SlotPairLoss = std::function<PairTerm(int slot_v, int slot_i, const Mat& Zv, const Mat& Zi)>;

// Generalized multi-crop combiner:
//   L = sum_{i in {0,1}} sum_{v=0}^{V+1} 1[v != i] l(Z_v, Z_i)
// Every source must contribute exactly V+2 views. Term count is 2(V+1).
LossReport multicrop_combine(const SlotPairLoss& pair_loss, const EmbeddingBatch& batch, int V);

// Regroups a batch into per-slot S x D matrices plus per-slot row origins.
struct SlotView {
  std::vector<Mat> slot_z;                     // V+2 matrices, each S x D
  std::vector<std::vector<int>> slot_rows;     // row index in batch.z
  std::vector<int> source_order;               // source id per slot row
  std::vector<int> source_labels;              // label per slot row (-1 if none)
  int n_sources = 0;
};
SlotView group_by_slot(const EmbeddingBatch& batch, int n_slots);

// Batch-level pretext losses used by the trainer: the combiner applied with
// the objective's pair term.
LossReport simclr_multicrop_loss(const EmbeddingBatch& batch, int V, double temperature);
LossReport supcon_multicrop_loss(const EmbeddingBatch& batch, int V, double temperature);
LossReport vicreg_multicrop_loss(const EmbeddingBatch& batch, int V, const VicregWeights& w);

}  // namespace osteo::ssl
