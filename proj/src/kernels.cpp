#include "bcrl/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <numeric>

namespace bcrl::kernels {

namespace {

inline void nt_row(const Mat& a, const Mat& b, Mat& c, size_t i) {
  const double* ai = a.row(i);
  double* ci = c.row(i);
  for (size_t j = 0; j < b.rows; ++j) {
    const double* bj = b.row(j);
    double s = 0.0;
    for (size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
    ci[j] = s;
  }
}

inline void nn_row(const Mat& a, const Mat& b, Mat& c, size_t i, bool acc) {
  const double* ai = a.row(i);
  double* ci = c.row(i);
  if (!acc) std::fill(ci, ci + c.cols, 0.0);
  for (size_t k = 0; k < a.cols; ++k) {
    const double aik = ai[k];
    if (aik == 0.0) continue;
    const double* bk = b.row(k);
    for (size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
  }
}

// Output row i of C = A^T * B is a reduction over all rows of A; partition
// over output rows so each element has a single writer.
inline void tn_row(const Mat& a, const Mat& b, Mat& c, size_t i, bool acc) {
  double* ci = c.row(i);
  if (!acc) std::fill(ci, ci + c.cols, 0.0);
  for (size_t m = 0; m < a.rows; ++m) {
    const double ami = a.at(m, i);
    if (ami == 0.0) continue;
    const double* bm = b.row(m);
    for (size_t j = 0; j < b.cols; ++j) ci[j] += ami * bm[j];
  }
}

inline float sqdist(const float* x, const float* y, size_t dim) {
  float s = 0.0f;
  for (size_t k = 0; k < dim; ++k) {
    const float d = x[k] - y[k];
    s += d * d;
  }
  return s;
}

void knn_one(const float* q, const float* refs, size_t nref, size_t dim, size_t k,
             uint32_t* out, std::vector<std::pair<float, uint32_t>>& scratch) {
  scratch.clear();
  scratch.reserve(nref);
  for (size_t r = 0; r < nref; ++r)
    scratch.emplace_back(sqdist(q, refs + r * dim, dim), static_cast<uint32_t>(r));
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<long>(k),
                    scratch.end());
  for (size_t i = 0; i < k; ++i) out[i] = scratch[i].second;
}

}  // namespace

void matmul_nt_serial(const Mat& a, const Mat& b, Mat& c) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  for (size_t i = 0; i < a.rows; ++i) nt_row(a, b, c, i);
}

void matmul_nt_omp(const Mat& a, const Mat& b, Mat& c) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < a.rows; ++i) nt_row(a, b, c, i);
}

void matmul_nn_serial(const Mat& a, const Mat& b, Mat& c) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  for (size_t i = 0; i < a.rows; ++i) nn_row(a, b, c, i, false);
}

void matmul_nn_omp(const Mat& a, const Mat& b, Mat& c) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < a.rows; ++i) nn_row(a, b, c, i, false);
}

void matmul_nn_acc_serial(const Mat& a, const Mat& b, Mat& c) {
  for (size_t i = 0; i < a.rows; ++i) nn_row(a, b, c, i, true);
}

void matmul_nn_acc_omp(const Mat& a, const Mat& b, Mat& c) {
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < a.rows; ++i) nn_row(a, b, c, i, true);
}

void matmul_tn_serial(const Mat& a, const Mat& b, Mat& c) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  for (size_t i = 0; i < a.cols; ++i) tn_row(a, b, c, i, false);
}

void matmul_tn_omp(const Mat& a, const Mat& b, Mat& c) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < a.cols; ++i) tn_row(a, b, c, i, false);
}

void matmul_tn_acc_serial(const Mat& a, const Mat& b, Mat& c) {
  for (size_t i = 0; i < a.cols; ++i) tn_row(a, b, c, i, true);
}

void matmul_tn_acc_omp(const Mat& a, const Mat& b, Mat& c) {
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < a.cols; ++i) tn_row(a, b, c, i, true);
}

void pairwise_sqdist_serial(const float* queries, size_t nq, const float* refs,
                            size_t nref, size_t dim, float* out) {
  for (size_t q = 0; q < nq; ++q)
    for (size_t r = 0; r < nref; ++r)
      out[q * nref + r] = sqdist(queries + q * dim, refs + r * dim, dim);
}

void pairwise_sqdist_omp(const float* queries, size_t nq, const float* refs,
                         size_t nref, size_t dim, float* out) {
#pragma omp parallel for schedule(static)
  for (size_t q = 0; q < nq; ++q)
    for (size_t r = 0; r < nref; ++r)
      out[q * nref + r] = sqdist(queries + q * dim, refs + r * dim, dim);
}

void knn_serial(const float* queries, size_t nq, const float* refs, size_t nref,
                size_t dim, size_t k, uint32_t* out_idx) {
  assert(k <= nref);
  std::vector<std::pair<float, uint32_t>> scratch;
  for (size_t q = 0; q < nq; ++q)
    knn_one(queries + q * dim, refs, nref, dim, k, out_idx + q * k, scratch);
}

void knn_omp(const float* queries, size_t nq, const float* refs, size_t nref,
             size_t dim, size_t k, uint32_t* out_idx) {
  assert(k <= nref);
#pragma omp parallel
  {
    std::vector<std::pair<float, uint32_t>> scratch;
#pragma omp for schedule(static)
    for (size_t q = 0; q < nq; ++q)
      knn_one(queries + q * dim, refs, nref, dim, k, out_idx + q * k, scratch);
  }
}

}  // namespace bcrl::kernels
