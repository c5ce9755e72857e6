#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "osteo/ssl.hpp"
#include "testutil.hpp"

using namespace osteo;
using ssl::EmbeddingBatch;
using ssl::Mat;
using ssl::Vec;

namespace {

Mat random_rows(int n, int d, uint64_t seed, bool unit = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
    if (unit) m.row(i).normalize();
  }
  return m;
}

// Batch with S sources x (V+2) slots, rows grouped by source.
EmbeddingBatch make_batch(int sources, int V, int d, uint64_t seed,
                          const std::vector<int>& labels = {}) {
  const int slots = V + 2;
  EmbeddingBatch b;
  b.z = random_rows(sources * slots, d, seed);
  for (int s = 0; s < sources; ++s)
    for (int v = 0; v < slots; ++v) {
      b.view_index.push_back(v);
      b.source_index.push_back(s);
      if (!labels.empty()) b.labels.push_back(labels[s]);
    }
  return b;
}

double entropy(const Eigen::RowVectorXd& p) {
  double h = 0.0;
  for (int i = 0; i < p.size(); ++i)
    if (p(i) > 0) h -= p(i) * std::log(p(i));
  return h;
}

}  // namespace

TEST_CASE("ntxent closed forms") {
  const int d = 4;
  Vec e = Vec::Zero(d);
  e(0) = 1.0;
  // All vectors identical, 2 negatives: every similarity 1, loss = ln 3.
  Mat negs(2, d);
  negs.row(0) = e.transpose();
  negs.row(1) = e.transpose();
  CHECK(ssl::pair_loss_ntxent(e, e, negs, 1.0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // Identical positive, orthogonal negatives, tau=1: -ln(e / (e + 2N-2)).
  Mat ortho = Mat::Zero(2, d);
  ortho(0, 1) = 1.0;
  ortho(1, 2) = 1.0;
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(ssl::pair_loss_ntxent(e, e, ortho, 1.0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ntxent matches a brute-force softmax oracle") {
  Mat rows = random_rows(6, 8, 42);
  Vec a = rows.row(0), b = rows.row(1);
  Mat negs = rows.bottomRows(4);
  const double tau = 0.1;
  // Straightforward enumeration.
  double num = std::exp(a.dot(b) / tau);
  double den = num;
  for (int k = 0; k < negs.rows(); ++k) den += std::exp(a.dot(negs.row(k)) / tau);
  CHECK(ssl::pair_loss_ntxent(a, b, negs, tau) ==
        doctest::Approx(-std::log(num / den)).epsilon(1e-10));
}

TEST_CASE("ntxent gradients match finite differences") {
  Mat rows = random_rows(6, 6, 7);
  Vec a = rows.row(0), b = rows.row(1);
  Mat negs = rows.bottomRows(4);
  const double tau = 0.2;
  auto g = ssl::pair_loss_ntxent_grad(a, b, negs, tau);

  Mat am = a.transpose();
  CHECK(testutil::max_grad_rel_error(
            am, [&] { return ssl::pair_loss_ntxent(am.transpose(), b, negs, tau); },
            g.grad_a.transpose()) < 1e-4);
  Mat bm = b.transpose();
  CHECK(testutil::max_grad_rel_error(
            bm, [&] { return ssl::pair_loss_ntxent(a, bm.transpose(), negs, tau); },
            g.grad_b.transpose()) < 1e-4);
  CHECK(testutil::max_grad_rel_error(
            negs, [&] { return ssl::pair_loss_ntxent(a, b, negs, tau); },
            g.grad_negatives) < 1e-4);
}

TEST_CASE("supcon pulls collapsed same-class views below ntxent") {
  // Two sources per class, views already collapsed per class, classes
  // orthogonal. Labels reward the cross-source positives NT-Xent penalizes.
  const int d = 4;
  EmbeddingBatch b = make_batch(4, 0, d, 0, {0, 0, 1, 1});
  for (int r = 0; r < b.rows(); ++r) {
    b.z.row(r).setZero();
    b.z(r, b.labels[r]) = 1.0;
  }
  double sup = ssl::supcon_loss(b, 1.0).total;
  double sim = ssl::simclr_multicrop_loss(b, 0, 1.0).total;
  CHECK(sup < sim);
}

TEST_CASE("supcon skips positive-free anchors and rejects hopeless batches") {
  EmbeddingBatch b;
  b.z = random_rows(3, 4, 3);
  b.view_index = {0, 1, 2};
  b.source_index = {0, 1, 2};
  b.labels = {0, 0, 1};
  auto rep = ssl::supcon_loss(b, 0.5);
  CHECK(rep.skipped_anchors == 1);

  b.labels = {0, 1, 2};  // nobody has a positive
  CHECK_THROWS_AS(ssl::supcon_loss(b, 0.5), ssl::SslError);
}

TEST_CASE("supcon gradient matches finite differences") {
  EmbeddingBatch b;
  b.z = random_rows(8, 6, 11);
  for (int i = 0; i < 8; ++i) {
    b.view_index.push_back(i);
    b.source_index.push_back(i);
    b.labels.push_back(i % 3);
  }
  auto rep = ssl::supcon_loss(b, 0.3);
  CHECK(testutil::max_grad_rel_error(
            b.z, [&] { return ssl::supcon_loss(b, 0.3).total; }, rep.grad_z) < 1e-4);
}

TEST_CASE("sinkhorn uniform scores give exactly uniform assignments") {
  Mat scores = Mat::Constant(8, 4, 0.37);
  Mat q = ssl::sinkhorn_knopp(scores, 0.05, 3);
  for (int i = 0; i < q.rows(); ++i)
    for (int j = 0; j < q.cols(); ++j)
      CHECK(std::abs(q(i, j) - 0.25) < 1e-12);
}

TEST_CASE("sinkhorn marginals hit their targets") {
  for (auto [n, k] : {std::pair{8, 4}, {16, 8}, {32, 4}}) {
    // Row sums are exact for any input because the row normalization is the
    // last operation of each iteration.
    Mat wild = random_rows(n, k, 100 + n, false);
    Mat qw = ssl::sinkhorn_knopp(wild, 0.05, 3);
    for (int i = 0; i < n; ++i) CHECK(std::abs(qw.row(i).sum() - 1.0) < 1e-12);

    // Column sums need convergence; 3 iterations reach 1e-6 on
    // well-conditioned scores (logit spread small against epsilon).
    Mat mild = 0.005 * wild;
    Mat q = ssl::sinkhorn_knopp(mild, 0.05, 3);
    for (int i = 0; i < n; ++i) CHECK(std::abs(q.row(i).sum() - 1.0) < 1e-6);
    for (int j = 0; j < k; ++j)
      CHECK(std::abs(q.col(j).sum() - static_cast<double>(n) / k) < 1e-6);
  }
}

TEST_CASE("sinkhorn matches an independent alternating-normalization oracle") {
  const int n = 8, k = 4;
  Mat scores = random_rows(n, k, 55, false);
  const double eps = 0.05;
  const int iters = 3;

  Mat ref(n, k);
  for (int i = 0; i < n; ++i) {
    double m = scores.row(i).maxCoeff();
    for (int j = 0; j < k; ++j) ref(i, j) = std::exp((scores(i, j) - m) / eps);
  }
  for (int it = 0; it < iters; ++it) {
    for (int j = 0; j < k; ++j) {
      double cs = 0.0;
      for (int i = 0; i < n; ++i) cs += ref(i, j);
      for (int i = 0; i < n; ++i) ref(i, j) *= (static_cast<double>(n) / k) / cs;
    }
    for (int i = 0; i < n; ++i) {
      double rs = 0.0;
      for (int j = 0; j < k; ++j) rs += ref(i, j);
      for (int j = 0; j < k; ++j) ref(i, j) /= rs;
    }
  }
  Mat q = ssl::sinkhorn_knopp(scores, eps, iters);
  CHECK((q - ref).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("swav loss equals code entropy when predictions match codes") {
  const int d = 5, K = 3;
  Mat protos = random_rows(K, d, 21);
  EmbeddingBatch b = make_batch(1, 0, d, 22);
  b.z.row(1) = b.z.row(0);  // both views identical

  Eigen::RowVectorXd logits = b.z.row(0) * protos.transpose() / 0.1;
  double m = logits.maxCoeff();
  Eigen::RowVectorXd p = (logits.array() - m).exp();
  p /= p.sum();
  std::vector<Mat> codes = {p, p};
  auto rep = ssl::swav_loss_with_codes(b, protos, codes, 0.1);
  CHECK(rep.total == doctest::Approx(2.0 * entropy(p)).epsilon(1e-12));
}

TEST_CASE("swav gradients match finite differences with codes held fixed") {
  const int d = 5, K = 3;
  Mat protos = random_rows(K, d, 31);
  EmbeddingBatch b = make_batch(3, 0, d, 32);
  auto codes = ssl::swav_codes(b, protos, 0.05, 3);
  auto rep = ssl::swav_loss_with_codes(b, protos, codes, 0.1);

  CHECK(testutil::max_grad_rel_error(
            b.z, [&] { return ssl::swav_loss_with_codes(b, protos, codes, 0.1).total; },
            rep.grad_z) < 1e-4);
  CHECK(testutil::max_grad_rel_error(
            protos, [&] { return ssl::swav_loss_with_codes(b, protos, codes, 0.1).total; },
            rep.grad_prototypes) < 1e-4);
}

TEST_CASE("swav codes come from the global views only and ignore prototype noise") {
  const int d = 5, K = 4;
  Mat protos = random_rows(K, d, 41);
  EmbeddingBatch b = make_batch(3, 2, d, 42);
  auto codes = ssl::swav_codes(b, protos, 0.05, 3);
  auto l1 = ssl::swav_loss_with_codes(b, protos, codes, 0.1).total;
  Mat protos2 = protos;
  protos2(0, 0) += 0.05;
  auto l2 = ssl::swav_loss_with_codes(b, protos2, codes, 0.1).total;
  CHECK(l1 != l2);  // loss sees the prototypes
  // but the fixed codes were untouched by construction: recomputing from the
  // original batch reproduces them bitwise.
  auto codes2 = ssl::swav_codes(b, protos, 0.05, 3);
  CHECK((codes[0] - codes2[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("vicreg closed-form zeros") {
  Mat z = random_rows(6, 4, 51, false);
  auto same = ssl::vicreg_loss(z, z, ssl::VicregWeights{});
  CHECK(same.terms["invariance"] == doctest::Approx(0.0));

  Mat wide = 3.0 * random_rows(16, 4, 52, false);  // std well above 1
  auto rep = ssl::vicreg_loss(wide, 3.0 * random_rows(16, 4, 53, false), ssl::VicregWeights{});
  CHECK(rep.terms["variance"] == doctest::Approx(0.0));
}

TEST_CASE("vicreg matches brute-force terms and finite differences") {
  const int n = 8, d = 6;
  Mat a = random_rows(n, d, 61, false);
  Mat b = random_rows(n, d, 62, false);
  ssl::VicregWeights w;
  auto rep = ssl::vicreg_loss(a, b, w);

  double inv = (a - b).squaredNorm() / n;
  auto branch = [&](const Mat& z) {
    Eigen::RowVectorXd mean = z.colwise().mean();
    Mat c = z.rowwise() - mean;
    double v = 0.0;
    for (int j = 0; j < d; ++j) {
      double sd = std::sqrt(c.col(j).squaredNorm() / (n - 1));
      v += std::max(0.0, 1.0 - sd) / d;
    }
    Mat cov = c.transpose() * c / (n - 1.0);
    double co = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j) co += cov(i, j) * cov(i, j);
    return std::make_pair(v, co / d);
  };
  auto [va, ca] = branch(a);
  auto [vb, cb] = branch(b);
  CHECK(rep.terms["invariance"] == doctest::Approx(inv).epsilon(1e-10));
  CHECK(rep.terms["variance"] == doctest::Approx(va + vb).epsilon(1e-10));
  CHECK(rep.terms["covariance"] == doctest::Approx(ca + cb).epsilon(1e-10));
  CHECK(rep.total ==
        doctest::Approx(w.lambda_v * inv + w.mu_i * (va + vb) + w.nu_c * (ca + cb))
            .epsilon(1e-10));

  Mat stacked(2 * n, d);
  stacked.topRows(n) = a;
  stacked.bottomRows(n) = b;
  CHECK(testutil::max_grad_rel_error(
            stacked,
            [&] {
              return ssl::vicreg_loss(stacked.topRows(n), stacked.bottomRows(n), w).total;
            },
            rep.grad_z) < 1e-4);
}

TEST_CASE("combiner term counts follow 2(V+1)") {
  auto counting = [](int, int, const Mat& zv, const Mat&) {
    ssl::PairTerm t;
    t.loss = 1.0;
    (void)zv;
    return t;
  };
  for (int V : {0, 1, 4}) {
    EmbeddingBatch b = make_batch(3, V, 4, 70 + V);
    auto rep = ssl::multicrop_combine(counting, b, V);
    CHECK(rep.terms["pair_terms"] == doctest::Approx(2.0 * (V + 1)));
    CHECK(rep.total == doctest::Approx(2.0 * (V + 1)));
  }
}

TEST_CASE("symmetric pair loss at V=0 doubles the single term") {
  auto sq = [](int, int, const Mat& zv, const Mat& zi) {
    ssl::PairTerm t;
    t.loss = (zv - zi).squaredNorm();
    return t;
  };
  EmbeddingBatch b = make_batch(3, 0, 4, 80);
  ssl::SlotView sv = ssl::group_by_slot(b, 2);
  auto rep = ssl::multicrop_combine(sq, b, 0);
  CHECK(rep.total ==
        doctest::Approx(2.0 * (sv.slot_z[0] - sv.slot_z[1]).squaredNorm()).epsilon(1e-12));
}

TEST_CASE("permuting batch rows leaves the combined loss unchanged") {
  EmbeddingBatch b = make_batch(4, 1, 5, 90);
  double base = ssl::simclr_multicrop_loss(b, 1, 0.1).total;

  EmbeddingBatch shuffled;
  std::vector<int> order(b.rows());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(91);
  std::shuffle(order.begin(), order.end(), rng);
  shuffled.z.resize(b.rows(), b.z.cols());
  for (int r = 0; r < b.rows(); ++r) {
    shuffled.z.row(r) = b.z.row(order[r]);
    shuffled.view_index.push_back(b.view_index[order[r]]);
    shuffled.source_index.push_back(b.source_index[order[r]]);
  }
  CHECK(ssl::simclr_multicrop_loss(shuffled, 1, 0.1).total ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("simclr multicrop matches a per-term softmax oracle") {
  const int S = 4, V = 0, d = 8;
  EmbeddingBatch b = make_batch(S, V, d, 95);
  ssl::SlotView sv = ssl::group_by_slot(b, 2);
  const double tau = 0.1;
  double expect = 0.0;
  for (int i = 0; i < 2; ++i) {
    int v = 1 - i;
    for (int s = 0; s < S; ++s) {
      double num = std::exp(sv.slot_z[v].row(s).dot(sv.slot_z[i].row(s)) / tau);
      double den = 0.0;
      for (int c = 0; c < S; ++c)
        den += std::exp(sv.slot_z[v].row(s).dot(sv.slot_z[i].row(c)) / tau);
      expect += -std::log(num / den) / S;
    }
  }
  CHECK(ssl::simclr_multicrop_loss(b, V, tau).total == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("batch losses are bounded below as documented") {
  EmbeddingBatch b = make_batch(4, 2, 6, 99, {0, 1, 0, 1});
  CHECK(ssl::simclr_multicrop_loss(b, 2, 0.1).total >= 0.0);
  CHECK(ssl::supcon_multicrop_loss(b, 2, 0.07).total >= 0.0);
  Mat protos = random_rows(5, 6, 98);
  CHECK(ssl::swav_loss(b, protos, 0.1, 0.05, 3).total >= 0.0);
  Mat a = random_rows(4, 6, 97, false), z2 = random_rows(4, 6, 96, false);
  CHECK(ssl::vicreg_loss(a, z2, ssl::VicregWeights{}).total >= 0.0);
}
