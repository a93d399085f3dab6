#include "enaet/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace enaet::kern {

namespace {

// 4x32 register tile: 4 rows of C accumulated across the full k loop while
// streaming 32-wide slices of B. Remainders fall back to plain loops.
template <typename T>
void gemm_ab_tile(int N, int K, const T* __restrict A, const T* __restrict B,
                  T* __restrict C, bool accumulate, int m0, int n0) {
  constexpr int MR = 4, NW = 32;
  T acc[MR][NW];
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NW; ++j) acc[i][j] = T(0);
  for (int k = 0; k < K; ++k) {
    const T* __restrict b = B + static_cast<std::size_t>(k) * N + n0;
    for (int i = 0; i < MR; ++i) {
      const T a = A[static_cast<std::size_t>(m0 + i) * K + k];
      for (int j = 0; j < NW; ++j) acc[i][j] += a * b[j];
    }
  }
  for (int i = 0; i < MR; ++i) {
    T* c = C + static_cast<std::size_t>(m0 + i) * N + n0;
    if (accumulate)
      for (int j = 0; j < NW; ++j) c[j] += acc[i][j];
    else
      for (int j = 0; j < NW; ++j) c[j] = acc[i][j];
  }
}

template <typename T>
void gemm_ab_edge(int N, int K, const T* A, const T* B, T* C, bool accumulate, int mlo,
                  int mhi, int nlo, int nhi) {
  for (int m = mlo; m < mhi; ++m)
    for (int n = nlo; n < nhi; ++n) {
      T s = 0;
      for (int k = 0; k < K; ++k)
        s += A[static_cast<std::size_t>(m) * K + k] * B[static_cast<std::size_t>(k) * N + n];
      T* c = C + static_cast<std::size_t>(m) * N + n;
      *c = accumulate ? *c + s : s;
    }
}

}  // namespace

template <typename T>
void gemm_ab(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  constexpr int MR = 4, NW = 32;
  const int mt = M / MR, nt = N / NW;
#pragma omp parallel for collapse(2) schedule(static)
  for (int mi = 0; mi < mt; ++mi)
    for (int ni = 0; ni < nt; ++ni) gemm_ab_tile(N, K, A, B, C, accumulate, mi * MR, ni * NW);
  if (nt * NW < N) gemm_ab_edge(N, K, A, B, C, accumulate, 0, mt * MR, nt * NW, N);
  if (mt * MR < M) gemm_ab_edge(N, K, A, B, C, accumulate, mt * MR, M, 0, N);
}

namespace {

template <typename T>
void gemm_abt_tile(int N, int K, const T* __restrict A, const T* __restrict B,
                   T* __restrict C, bool accumulate, int m0, int n0) {
  constexpr int MR = 4, NR = 4;
  T acc[MR][NR];
  for (int i = 0; i < MR; ++i) {
    const T* __restrict a = A + static_cast<std::size_t>(m0 + i) * K;
    for (int j = 0; j < NR; ++j) {
      const T* __restrict b = B + static_cast<std::size_t>(n0 + j) * K;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (int k = 0; k < K; ++k) s += a[k] * b[k];
      acc[i][j] = s;
    }
  }
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) {
      T* c = C + static_cast<std::size_t>(m0 + i) * N + n0 + j;
      *c = accumulate ? *c + acc[i][j] : acc[i][j];
    }
}

template <typename T>
void gemm_abt_edge(int N, int K, const T* A, const T* B, T* C, bool accumulate, int mlo,
                   int mhi, int nlo, int nhi) {
  for (int m = mlo; m < mhi; ++m)
    for (int n = nlo; n < nhi; ++n) {
      const T* a = A + static_cast<std::size_t>(m) * K;
      const T* b = B + static_cast<std::size_t>(n) * K;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (int k = 0; k < K; ++k) s += a[k] * b[k];
      T* c = C + static_cast<std::size_t>(m) * N + n;
      *c = accumulate ? *c + s : s;
    }
}

}  // namespace

template <typename T>
void gemm_abt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  constexpr int MR = 4, NR = 4;
  const int mt = M / MR, nt = N / NR;
#pragma omp parallel for collapse(2) schedule(static)
  for (int mi = 0; mi < mt; ++mi)
    for (int ni = 0; ni < nt; ++ni) gemm_abt_tile(N, K, A, B, C, accumulate, mi * MR, ni * NR);
  if (nt * NR < N) gemm_abt_edge(N, K, A, B, C, accumulate, 0, mt * MR, nt * NR, N);
  if (mt * MR < M) gemm_abt_edge(N, K, A, B, C, accumulate, mt * MR, M, 0, N);
}

template <typename T>
void transpose(int rows, int cols, const T* src, T* dst) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

namespace ref {

template <typename T>
void gemm_ab(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) {
      T s = 0;
      for (int k = 0; k < K; ++k)
        s += A[static_cast<std::size_t>(m) * K + k] * B[static_cast<std::size_t>(k) * N + n];
      T* c = C + static_cast<std::size_t>(m) * N + n;
      *c = accumulate ? *c + s : s;
    }
}

template <typename T>
void gemm_abt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) {
      T s = 0;
      for (int k = 0; k < K; ++k)
        s += A[static_cast<std::size_t>(m) * K + k] * B[static_cast<std::size_t>(n) * K + k];
      T* c = C + static_cast<std::size_t>(m) * N + n;
      *c = accumulate ? *c + s : s;
    }
}

template void gemm_ab<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_ab<double>(int, int, int, const double*, const double*, double*, bool);
template void gemm_abt<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_abt<double>(int, int, int, const double*, const double*, double*, bool);

}  // namespace ref

template void gemm_ab<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_ab<double>(int, int, int, const double*, const double*, double*, bool);
template void gemm_abt<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_abt<double>(int, int, int, const double*, const double*, double*, bool);
template void transpose<float>(int, int, const float*, float*);
template void transpose<double>(int, int, const double*, double*);

}  // namespace enaet::kern
