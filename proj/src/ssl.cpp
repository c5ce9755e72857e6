#include "osteo/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace osteo::ssl {

void EmbeddingBatch::validate() const {
  const int n = rows();
  if (n == 0) throw SslError("empty embedding batch");
  if (static_cast<int>(view_index.size()) != n || static_cast<int>(source_index.size()) != n)
    throw SslError("embedding batch index arrays do not match row count");
  if (!labels.empty() && static_cast<int>(labels.size()) != n)
    throw SslError("labels length does not match row count");
  if (!z.allFinite()) throw SslError("embedding batch contains non-finite entries");
}

namespace {

double logsumexp_row(const Eigen::RowVectorXd& row) {
  double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

void check_unit_norm(const Vec& v, const char* what) {
  double n = v.norm();
  if (n < 1e-12) throw SslError(std::string(what) + " has zero norm");
}

}  // namespace

double pair_loss_ntxent(const Vec& z_a, const Vec& z_b, const Mat& negatives,
                        double temperature) {
  return pair_loss_ntxent_grad(z_a, z_b, negatives, temperature).loss;
}

NtxentGrad pair_loss_ntxent_grad(const Vec& z_a, const Vec& z_b, const Mat& negatives,
                                 double temperature) {
  if (temperature <= 0.0) throw SslError("temperature must be positive");
  check_unit_norm(z_a, "anchor");
  check_unit_norm(z_b, "positive");
  const int m = static_cast<int>(negatives.rows());
  Eigen::RowVectorXd logits(m + 1);
  logits(0) = z_a.dot(z_b) / temperature;
  for (int k = 0; k < m; ++k) logits(k + 1) = z_a.dot(negatives.row(k)) / temperature;
  double lse = logsumexp_row(logits);
  Eigen::RowVectorXd p = (logits.array() - lse).exp();

  NtxentGrad out;
  out.loss = lse - logits(0);
  out.grad_a = ((p(0) - 1.0) * z_b.transpose() + p.tail(m) * negatives).transpose() / temperature;
  out.grad_b = (p(0) - 1.0) * z_a / temperature;
  out.grad_negatives = (p.tail(m).transpose() * z_a.transpose()) / temperature;
  return out;
}

LossReport supcon_loss(const EmbeddingBatch& batch, double temperature) {
  batch.validate();
  if (temperature <= 0.0) throw SslError("temperature must be positive");
  if (batch.labels.empty()) throw SslError("supcon_loss requires labels");
  const int n = batch.rows();
  if (std::set<int>(batch.source_index.begin(), batch.source_index.end()).size() < 2)
    throw SslError("supcon_loss needs at least 2 distinct sources");

  Mat sim = batch.z * batch.z.transpose() / temperature;

  // Anchors with at least one same-label row are usable; the rest are
  // skipped and counted.
  std::vector<std::vector<int>> positives(n);
  std::vector<int> anchors;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      if (j != i && batch.labels[j] == batch.labels[i]) positives[i].push_back(j);
    if (!positives[i].empty()) anchors.push_back(i);
  }
  LossReport rep;
  rep.skipped_anchors = n - static_cast<int>(anchors.size());
  if (anchors.empty()) throw SslError("supcon_loss: no anchor has a positive");

  const double inv_a = 1.0 / anchors.size();
  double total = 0.0;
  Mat g = Mat::Zero(n, n);  // dL/dsim
  for (int i : anchors) {
    Eigen::RowVectorXd row(n - 1);
    std::vector<int> cand;
    cand.reserve(n - 1);
    for (int j = 0; j < n; ++j)
      if (j != i) {
        row(static_cast<int>(cand.size())) = sim(i, j);
        cand.push_back(j);
      }
    double lse = logsumexp_row(row);
    Eigen::RowVectorXd p = (row.array() - lse).exp();
    const double inv_p = 1.0 / positives[i].size();
    for (int pj : positives[i]) total += inv_a * inv_p * (lse - sim(i, pj));
    for (size_t c = 0; c < cand.size(); ++c) g(i, cand[c]) += inv_a * p(static_cast<int>(c));
    for (int pj : positives[i]) g(i, pj) -= inv_a * inv_p;
  }
  rep.total = total;
  rep.terms["supcon"] = total;
  rep.grad_z = (g + g.transpose()) * batch.z / temperature;
  return rep;
}

Mat sinkhorn_knopp(const Mat& scores, double epsilon, int n_iters) {
  if (epsilon <= 0.0) throw SslError("sinkhorn epsilon must be positive");
  if (n_iters < 1) throw SslError("sinkhorn needs at least 1 iteration");
  if (!scores.allFinite()) throw SslError("sinkhorn scores must be finite");
  const int n = static_cast<int>(scores.rows());
  const int k = static_cast<int>(scores.cols());
  Mat q(n, k);
  for (int i = 0; i < n; ++i) {
    double m = scores.row(i).maxCoeff();
    q.row(i) = ((scores.row(i).array() - m) / epsilon).exp();
  }
  const double col_target = static_cast<double>(n) / k;
  for (int it = 0; it < n_iters; ++it) {
    Eigen::RowVectorXd col_sums = q.colwise().sum();
    for (int j = 0; j < k; ++j)
      if (col_sums(j) > 0) q.col(j) *= col_target / col_sums(j);
    Vec row_sums = q.rowwise().sum();
    for (int i = 0; i < n; ++i)
      if (row_sums(i) > 0) q.row(i) /= row_sums(i);
  }
  return q;
}

SlotView group_by_slot(const EmbeddingBatch& batch, int n_slots) {
  batch.validate();
  const int n = batch.rows();
  std::vector<int> order;  // sources in first-appearance order
  std::map<int, int> source_pos;
  for (int r = 0; r < n; ++r) {
    int s = batch.source_index[r];
    if (!source_pos.count(s)) {
      source_pos[s] = static_cast<int>(order.size());
      order.push_back(s);
    }
  }
  const int n_src = static_cast<int>(order.size());
  if (n != n_src * n_slots)
    throw SslError("batch must hold exactly " + std::to_string(n_slots) +
                   " views per source (got " + std::to_string(n) + " rows for " +
                   std::to_string(n_src) + " sources)");
  SlotView sv;
  sv.n_sources = n_src;
  sv.source_order = order;
  sv.source_labels.assign(n_src, -1);
  sv.slot_z.assign(n_slots, Mat::Zero(n_src, batch.z.cols()));
  sv.slot_rows.assign(n_slots, std::vector<int>(n_src, -1));
  for (int r = 0; r < n; ++r) {
    int slot = batch.view_index[r];
    if (slot < 0 || slot >= n_slots)
      throw SslError("view_index out of range: " + std::to_string(slot));
    int s = source_pos[batch.source_index[r]];
    if (sv.slot_rows[slot][s] != -1)
      throw SslError("duplicate view for source " + std::to_string(batch.source_index[r]) +
                     " slot " + std::to_string(slot));
    sv.slot_rows[slot][s] = r;
    sv.slot_z[slot].row(s) = batch.z.row(r);
    if (!batch.labels.empty()) sv.source_labels[s] = batch.labels[r];
  }
  for (int slot = 0; slot < n_slots; ++slot)
    for (int s = 0; s < n_src; ++s)
      if (sv.slot_rows[slot][s] == -1)
        throw SslError("source " + std::to_string(order[s]) + " is missing view slot " +
                       std::to_string(slot));
  return sv;
}

LossReport multicrop_combine(const SlotPairLoss& pair_loss, const EmbeddingBatch& batch,
                             int V) {
  const int n_slots = V + 2;
  SlotView sv = group_by_slot(batch, n_slots);
  LossReport rep;
  rep.grad_z = Mat::Zero(batch.z.rows(), batch.z.cols());
  int terms = 0;
  for (int i = 0; i < 2; ++i) {
    for (int v = 0; v < n_slots; ++v) {
      if (v == i) continue;
      PairTerm t = pair_loss(v, i, sv.slot_z[v], sv.slot_z[i]);
      rep.total += t.loss;
      ++terms;
      if (t.grad_v.size() > 0)
        for (int s = 0; s < sv.n_sources; ++s)
          rep.grad_z.row(sv.slot_rows[v][s]) += t.grad_v.row(s);
      if (t.grad_i.size() > 0)
        for (int s = 0; s < sv.n_sources; ++s)
          rep.grad_z.row(sv.slot_rows[i][s]) += t.grad_i.row(s);
    }
  }
  rep.terms["pair_terms"] = terms;
  rep.terms["combined"] = rep.total;
  return rep;
}

std::vector<Mat> swav_codes(const EmbeddingBatch& batch, const Mat& prototypes,
                            double epsilon, int n_iters) {
  if (prototypes.rows() < 2) throw SslError("swav needs at least 2 prototypes");
  int n_slots = *std::max_element(batch.view_index.begin(), batch.view_index.end()) + 1;
  SlotView sv = group_by_slot(batch, n_slots);
  std::vector<Mat> codes;
  for (int g = 0; g < 2; ++g)
    codes.push_back(sinkhorn_knopp(sv.slot_z[g] * prototypes.transpose(), epsilon, n_iters));
  return codes;
}

LossReport swav_loss_with_codes(const EmbeddingBatch& batch, const Mat& prototypes,
                                const std::vector<Mat>& codes, double temperature) {
  if (prototypes.rows() < 2) throw SslError("swav needs at least 2 prototypes");
  if (temperature <= 0.0) throw SslError("temperature must be positive");
  if (codes.size() != 2) throw SslError("swav expects codes for the two global slots");
  int n_slots = *std::max_element(batch.view_index.begin(), batch.view_index.end()) + 1;
  SlotView sv = group_by_slot(batch, n_slots);
  const int S = sv.n_sources;
  const int K = static_cast<int>(prototypes.rows());

  LossReport rep;
  rep.grad_z = Mat::Zero(batch.z.rows(), batch.z.cols());
  rep.grad_prototypes = Mat::Zero(K, prototypes.cols());
  for (int i = 0; i < 2; ++i) {
    const Mat& q = codes[i];
    if (q.rows() != S || q.cols() != K) throw SslError("code matrix shape mismatch");
    for (int v = 0; v < n_slots; ++v) {
      if (v == i) continue;
      Mat logits = sv.slot_z[v] * prototypes.transpose() / temperature;  // S x K
      Mat p(S, K);
      double term = 0.0;
      for (int s = 0; s < S; ++s) {
        double lse = logsumexp_row(logits.row(s));
        p.row(s) = (logits.row(s).array() - lse).exp();
        term += (q.row(s).array() * (lse - logits.row(s).array())).sum();
      }
      term /= S;
      rep.total += term;
      Mat diff = (p - q) / (S * temperature);
      Mat grad_v = diff * prototypes;
      for (int s = 0; s < S; ++s) rep.grad_z.row(sv.slot_rows[v][s]) += grad_v.row(s);
      rep.grad_prototypes += diff.transpose() * sv.slot_z[v];
    }
  }
  rep.terms["swav"] = rep.total;
  return rep;
}

LossReport swav_loss(const EmbeddingBatch& batch, const Mat& prototypes, double temperature,
                     double epsilon, int n_iters) {
  auto codes = swav_codes(batch, prototypes, epsilon, n_iters);
  return swav_loss_with_codes(batch, prototypes, codes, temperature);
}

LossReport vicreg_loss(const Mat& z_a, const Mat& z_b, const VicregWeights& w) {
  if (z_a.rows() != z_b.rows() || z_a.cols() != z_b.cols())
    throw SslError("vicreg branches must have identical shape");
  const int n = static_cast<int>(z_a.rows());
  const int d = static_cast<int>(z_a.cols());
  if (n < 2) throw SslError("vicreg needs at least 2 rows (std undefined)");
  constexpr double kStdEps = 1e-12;

  LossReport rep;
  Mat grad_a = Mat::Zero(n, d), grad_b = Mat::Zero(n, d);

  // Invariance: mean squared distance between paired rows.
  Mat diff = z_a - z_b;
  double inv = diff.squaredNorm() / n;
  grad_a += w.lambda_v * 2.0 / n * diff;
  grad_b -= w.lambda_v * 2.0 / n * diff;

  auto branch_terms = [&](const Mat& z, Mat& grad) {
    Eigen::RowVectorXd mean = z.colwise().mean();
    Mat centered = z.rowwise() - mean;
    // Variance hinge.
    Eigen::RowVectorXd var = centered.array().square().colwise().sum() / (n - 1);
    Eigen::RowVectorXd stdd = (var.array() + kStdEps).sqrt();
    double v_term = 0.0;
    for (int j = 0; j < d; ++j) {
      if (stdd(j) < 1.0) {
        v_term += (1.0 - stdd(j)) / d;
        grad.col(j) -= w.mu_i / (d * (n - 1.0) * stdd(j)) * centered.col(j);
      }
    }
    // Covariance: squared off-diagonal entries of the feature covariance.
    Mat cov = centered.transpose() * centered / (n - 1.0);
    Mat cov_off = cov;
    cov_off.diagonal().setZero();
    double c_term = cov_off.squaredNorm() / d;
    grad += w.nu_c * 4.0 / (d * (n - 1.0)) * centered * cov_off;
    return std::make_pair(v_term, c_term);
  };
  auto [va, ca] = branch_terms(z_a, grad_a);
  auto [vb, cb] = branch_terms(z_b, grad_b);

  rep.terms["invariance"] = inv;
  rep.terms["variance"] = va + vb;
  rep.terms["covariance"] = ca + cb;
  rep.total = w.lambda_v * inv + w.mu_i * (va + vb) + w.nu_c * (ca + cb);
  rep.grad_z = Mat::Zero(2 * n, d);
  rep.grad_z.topRows(n) = grad_a;
  rep.grad_z.bottomRows(n) = grad_b;
  return rep;
}

namespace {

// SimCLR pair term: anchor slot v against target slot i; for anchor s the
// positive is Z_i row s and the negatives are the other rows of Z_i.
PairTerm simclr_pair_term(const Mat& zv, const Mat& zi, double tau) {
  const int s_count = static_cast<int>(zv.rows());
  if (s_count < 2) throw SslError("simclr pair term needs at least 2 sources");
  Mat logits = zv * zi.transpose() / tau;  // S x S
  PairTerm t;
  Mat g = Mat::Zero(s_count, s_count);
  for (int s = 0; s < s_count; ++s) {
    double lse = logsumexp_row(logits.row(s));
    Eigen::RowVectorXd p = (logits.row(s).array() - lse).exp();
    t.loss += (lse - logits(s, s)) / s_count;
    g.row(s) = p / s_count;
    g(s, s) -= 1.0 / s_count;
  }
  t.grad_v = g * zi / tau;
  t.grad_i = g.transpose() * zv / tau;
  return t;
}

// SupCon pair term: anchors in slot v, candidates all rows of slot i,
// positives the candidates sharing the anchor's label.
PairTerm supcon_pair_term(const Mat& zv, const Mat& zi, const std::vector<int>& labels,
                          double tau, int* skipped) {
  const int s_count = static_cast<int>(zv.rows());
  Mat logits = zv * zi.transpose() / tau;
  std::vector<std::vector<int>> pos(s_count);
  std::vector<int> anchors;
  for (int s = 0; s < s_count; ++s) {
    for (int c = 0; c < s_count; ++c)
      if (labels[c] == labels[s]) pos[s].push_back(c);
    if (!pos[s].empty()) anchors.push_back(s);
  }
  if (anchors.empty()) throw SslError("supcon pair term: no anchor has a positive");
  if (skipped) *skipped += s_count - static_cast<int>(anchors.size());
  const double inv_a = 1.0 / anchors.size();
  PairTerm t;
  Mat g = Mat::Zero(s_count, s_count);
  for (int s : anchors) {
    double lse = logsumexp_row(logits.row(s));
    Eigen::RowVectorXd p = (logits.row(s).array() - lse).exp();
    const double inv_p = 1.0 / pos[s].size();
    for (int c : pos[s]) t.loss += inv_a * inv_p * (lse - logits(s, c));
    g.row(s) += inv_a * p;
    for (int c : pos[s]) g(s, c) -= inv_a * inv_p;
  }
  t.grad_v = g * zi / tau;
  t.grad_i = g.transpose() * zv / tau;
  return t;
}

}  // namespace

LossReport simclr_multicrop_loss(const EmbeddingBatch& batch, int V, double temperature) {
  return multicrop_combine(
      [&](int, int, const Mat& zv, const Mat& zi) {
        return simclr_pair_term(zv, zi, temperature);
      },
      batch, V);
}

LossReport supcon_multicrop_loss(const EmbeddingBatch& batch, int V, double temperature) {
  if (batch.labels.empty()) throw SslError("supcon needs labels");
  SlotView sv = group_by_slot(batch, V + 2);
  int skipped = 0;
  LossReport rep = multicrop_combine(
      [&](int, int, const Mat& zv, const Mat& zi) {
        return supcon_pair_term(zv, zi, sv.source_labels, temperature, &skipped);
      },
      batch, V);
  rep.skipped_anchors = skipped;
  return rep;
}

LossReport vicreg_multicrop_loss(const EmbeddingBatch& batch, int V, const VicregWeights& w) {
  SlotView sv = group_by_slot(batch, V + 2);
  const int s_count = sv.n_sources;
  return multicrop_combine(
      [&](int, int, const Mat& zv, const Mat& zi) {
        LossReport r = vicreg_loss(zv, zi, w);
        PairTerm t;
        t.loss = r.total;
        t.grad_v = r.grad_z.topRows(s_count);
        t.grad_i = r.grad_z.bottomRows(s_count);
        return t;
      },
      batch, V);
}

}  // namespace osteo::ssl
