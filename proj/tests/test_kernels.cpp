#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "bcrl/dataset.hpp"
#include "bcrl/kernels.hpp"

using namespace bcrl::kernels;
using bcrl::data::Rng;

namespace {

Mat random_mat(size_t r, size_t c, Rng& rng) {
  Mat m(r, c);
  for (auto& v : m.v) v = rng.normal();
  return m;
}

// Textbook triple loop used as the oracle for all matmul variants.
Mat naive_nt(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.rows);
  for (size_t i = 0; i < a.rows; ++i)
    for (size_t j = 0; j < b.rows; ++j) {
      double s = 0;
      for (size_t k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(j, k);
      c.at(i, j) = s;
    }
  return c;
}

void check_equal(const Mat& x, const Mat& y, double tol) {
  REQUIRE(x.rows == y.rows);
  REQUIRE(x.cols == y.cols);
  for (size_t i = 0; i < x.v.size(); ++i) CHECK(x.v[i] == doctest::Approx(y.v[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("matmul variants agree with the naive oracle and each other") {
  Rng rng(11);
  for (auto [m, k, n] : {std::array<size_t, 3>{3, 4, 5},
                         std::array<size_t, 3>{17, 9, 23},
                         std::array<size_t, 3>{64, 33, 20}}) {
    Mat a = random_mat(m, k, rng);
    Mat bt = random_mat(n, k, rng);  // transposed layout for nt
    Mat b = random_mat(k, n, rng);
    Mat at = random_mat(k, m, rng);

    Mat want = naive_nt(a, bt);
    Mat c1(m, n), c2(m, n);
    matmul_nt_serial(a, bt, c1);
    matmul_nt_omp(a, bt, c2);
    check_equal(c1, want, 1e-12);
    check_equal(c2, want, 1e-12);

    // nn against nt with B's transpose re-laid out.
    Mat b_as_rows(n, k);
    for (size_t i = 0; i < k; ++i)
      for (size_t j = 0; j < n; ++j) b_as_rows.at(j, i) = b.at(i, j);
    Mat want_nn = naive_nt(a, b_as_rows);
    matmul_nn_serial(a, b, c1);
    matmul_nn_omp(a, b, c2);
    check_equal(c1, want_nn, 1e-12);
    check_equal(c2, want_nn, 1e-12);

    // tn: C = A^T B with A stored m x k -> want (k x n).
    Mat bmn = random_mat(m, n, rng);
    Mat want_tn2(k, n);
    for (size_t i = 0; i < k; ++i)
      for (size_t j = 0; j < n; ++j) {
        double s = 0;
        for (size_t l = 0; l < m; ++l) s += a.at(l, i) * bmn.at(l, j);
        want_tn2.at(i, j) = s;
      }
    Mat c3(k, n), c4(k, n);
    matmul_tn_serial(a, bmn, c3);
    matmul_tn_omp(a, bmn, c4);
    check_equal(c3, want_tn2, 1e-12);
    check_equal(c4, want_tn2, 1e-12);
  }
}

TEST_CASE("accumulating variants add onto the destination") {
  Rng rng(5);
  Mat a = random_mat(8, 6, rng);
  Mat b = random_mat(8, 7, rng);
  Mat base = random_mat(6, 7, rng);

  Mat plain(6, 7);
  matmul_tn_serial(a, b, plain);

  Mat acc1 = base, acc2 = base;
  matmul_tn_acc_serial(a, b, acc1);
  matmul_tn_acc_omp(a, b, acc2);
  for (size_t i = 0; i < base.v.size(); ++i) {
    CHECK(acc1.v[i] == doctest::Approx(base.v[i] + plain.v[i]).epsilon(1e-12));
    CHECK(acc2.v[i] == doctest::Approx(base.v[i] + plain.v[i]).epsilon(1e-12));
  }

  Mat x = random_mat(6, 5, rng), y = random_mat(5, 9, rng), base2 = random_mat(6, 9, rng);
  Mat plain2(6, 9);
  matmul_nn_serial(x, y, plain2);
  Mat acc3 = base2, acc4 = base2;
  matmul_nn_acc_serial(x, y, acc3);
  matmul_nn_acc_omp(x, y, acc4);
  for (size_t i = 0; i < base2.v.size(); ++i) {
    CHECK(acc3.v[i] == doctest::Approx(base2.v[i] + plain2.v[i]).epsilon(1e-12));
    CHECK(acc4.v[i] == doctest::Approx(base2.v[i] + plain2.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("pairwise squared distances match a direct computation") {
  Rng rng(3);
  size_t nq = 7, nref = 13, dim = 5;
  std::vector<float> q(nq * dim), r(nref * dim);
  for (auto& v : q) v = float(rng.normal());
  for (auto& v : r) v = float(rng.normal());

  std::vector<float> d1(nq * nref), d2(nq * nref);
  pairwise_sqdist_serial(q.data(), nq, r.data(), nref, dim, d1.data());
  pairwise_sqdist_omp(q.data(), nq, r.data(), nref, dim, d2.data());
  for (size_t i = 0; i < nq; ++i)
    for (size_t j = 0; j < nref; ++j) {
      double want = 0;
      for (size_t k = 0; k < dim; ++k) {
        double diff = double(q[i * dim + k]) - double(r[j * dim + k]);
        want += diff * diff;
      }
      CHECK(d1[i * nref + j] == doctest::Approx(want).epsilon(1e-5));
      CHECK(d2[i * nref + j] == d1[i * nref + j]);
    }
}

TEST_CASE("knn returns ascending distances with index tie-break") {
  Rng rng(9);
  size_t nq = 11, nref = 200, dim = 4, k = 7;
  std::vector<float> q(nq * dim), r(nref * dim);
  for (auto& v : q) v = float(rng.normal());
  for (auto& v : r) v = float(rng.normal());

  std::vector<uint32_t> idx1(nq * k), idx2(nq * k);
  knn_serial(q.data(), nq, r.data(), nref, dim, k, idx1.data());
  knn_omp(q.data(), nq, r.data(), nref, dim, k, idx2.data());
  CHECK(idx1 == idx2);

  std::vector<float> dist(nq * nref);
  pairwise_sqdist_serial(q.data(), nq, r.data(), nref, dim, dist.data());
  for (size_t i = 0; i < nq; ++i) {
    // Oracle: full sort of (distance, index).
    std::vector<std::pair<float, uint32_t>> order;
    for (uint32_t j = 0; j < nref; ++j) order.push_back({dist[i * nref + j], j});
    std::sort(order.begin(), order.end());
    for (size_t j = 0; j < k; ++j) CHECK(idx1[i * k + j] == order[j].second);
  }
}

TEST_CASE("knn tie-break prefers the lower index on exact duplicates") {
  // Three identical reference points; the query sits on top of them.
  std::vector<float> refs = {1.f, 1.f, 5.f, 5.f, 1.f, 1.f, 1.f, 1.f};
  std::vector<float> q = {1.f, 1.f};
  std::vector<uint32_t> idx(3);
  knn_serial(q.data(), 1, refs.data(), 4, 2, 3, idx.data());
  CHECK(idx[0] == 0);
  CHECK(idx[1] == 2);
  CHECK(idx[2] == 3);
}
