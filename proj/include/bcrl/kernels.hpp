#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace bcrl::kernels {

// Row-major dense matrix. Small wrapper, no ownership tricks.
struct Mat {
  size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat() = default;
  Mat(size_t r, size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double* row(size_t i) { return v.data() + i * cols; }
  const double* row(size_t i) const { return v.data() + i * cols; }
  double& at(size_t i, size_t j) { return v[i * cols + j]; }
  double at(size_t i, size_t j) const { return v[i * cols + j]; }
};

// C(m x n) = A(m x k) * B(n x k)^T.  "nt" = A normal, B transposed.
void matmul_nt_serial(const Mat& a, const Mat& b, Mat& c);
void matmul_nt_omp(const Mat& a, const Mat& b, Mat& c);

// C(m x n) = A(m x k) * B(k x n).
void matmul_nn_serial(const Mat& a, const Mat& b, Mat& c);
void matmul_nn_omp(const Mat& a, const Mat& b, Mat& c);

// C(k x n) = A(m x k)^T * B(m x n).
void matmul_tn_serial(const Mat& a, const Mat& b, Mat& c);
void matmul_tn_omp(const Mat& a, const Mat& b, Mat& c);

// Accumulating variants used in backward passes: C += op(A, B).
void matmul_tn_acc_serial(const Mat& a, const Mat& b, Mat& c);
void matmul_tn_acc_omp(const Mat& a, const Mat& b, Mat& c);
void matmul_nn_acc_serial(const Mat& a, const Mat& b, Mat& c);
void matmul_nn_acc_omp(const Mat& a, const Mat& b, Mat& c);

// Squared Euclidean distances from each query row to each reference row.
// out[q * nref + r].  Rows are float32 (dataset storage precision).
void pairwise_sqdist_serial(const float* queries, size_t nq, const float* refs,
                            size_t nref, size_t dim, float* out);
void pairwise_sqdist_omp(const float* queries, size_t nq, const float* refs,
                         size_t nref, size_t dim, float* out);

// Indices of the k nearest reference rows per query, ascending by distance,
// ties broken by index.  Exact scan, no approximation.
void knn_serial(const float* queries, size_t nq, const float* refs, size_t nref,
                size_t dim, size_t k, uint32_t* out_idx);
void knn_omp(const float* queries, size_t nq, const float* refs, size_t nref,
             size_t dim, size_t k, uint32_t* out_idx);

}  // namespace bcrl::kernels
