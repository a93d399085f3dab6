// Times the parallel kernels against the serial reference implementations and
// prints a speedup table. Shapes mirror what the wide-resnet layers actually
// issue at 32x32 input.

#include <chrono>
#include <cstdio>
#include <functional>

#include "enaet/kernels.hpp"
#include "enaet/rng.hpp"

using enaet::SeedStream;
using enaet::Tensor;
namespace kern = enaet::kern;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void fill(Tensor<float>& t, SeedStream& rng) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(-1, 1));
}

void row(const char* name, double flops, double par_ms, double ref_ms) {
  std::printf("%-28s %9.3f ms %9.3f ms %7.2fx %8.2f GF/s\n", name, par_ms, ref_ms,
              ref_ms / par_ms, flops / (par_ms * 1e6));
}

}  // namespace

int main() {
  SeedStream rng(7);
  std::printf("%-28s %12s %12s %8s %13s\n", "kernel", "parallel", "reference", "speedup",
              "parallel");

  {
    const int M = 256, N = 1024, K = 576;
    std::vector<float> A(M * K), B(K * N), C(M * N);
    for (auto& v : A) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : B) v = static_cast<float>(rng.uniform(-1, 1));
    const double flops = 2.0 * M * N * K;
    const double par = time_ms([&] { kern::gemm_ab(M, N, K, A.data(), B.data(), C.data(), false); }, 5);
    const double ref =
        time_ms([&] { kern::ref::gemm_ab(M, N, K, A.data(), B.data(), C.data(), false); }, 1);
    row("gemm_ab 256x1024x576", flops, par, ref);
  }
  {
    const int M = 128, N = 576, K = 1024;
    std::vector<float> A(M * K), B(N * K), C(M * N);
    for (auto& v : A) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : B) v = static_cast<float>(rng.uniform(-1, 1));
    const double flops = 2.0 * M * N * K;
    const double par = time_ms([&] { kern::gemm_abt(M, N, K, A.data(), B.data(), C.data(), false); }, 5);
    const double ref =
        time_ms([&] { kern::ref::gemm_abt(M, N, K, A.data(), B.data(), C.data(), false); }, 1);
    row("gemm_abt 128x576x1024", flops, par, ref);
  }
  {
    Tensor<float> x({16, 32, 32, 32}), w({64, 32 * 3 * 3}), y;
    SeedStream r2(8);
    fill(x, r2);
    fill(w, r2);
    const double flops = 2.0 * 16 * 64 * 32 * 32 * 32 * 9;
    const double par = time_ms([&] { kern::conv2d_forward(x, w, y, 3, 3, 1, 1); }, 3);
    const double ref = time_ms([&] { kern::ref::conv2d_forward(x, w, y, 3, 3, 1, 1); }, 1);
    row("conv3x3 16x32x32x32->64", flops, par, ref);
  }
  {
    Tensor<float> x({16, 64, 16, 16}), mean, var;
    SeedStream r2(9);
    fill(x, r2);
    const double flops = 4.0 * x.numel();
    const double par = time_ms([&] { kern::bn_stats(x, mean, var); }, 20);
    const double ref = time_ms([&] { kern::ref::bn_stats(x, mean, var); }, 20);
    row("bn_stats 16x64x16x16", flops, par, ref);
  }
  {
    Tensor<float> x({16, 3, 32, 32}), y;
    SeedStream r2(10);
    fill(x, r2);
    const double minv[9] = {0.95, 0.05, -0.02, -0.04, 1.02, 0.03, 0.01, -0.02, 1.0};
    const double flops = 12.0 * x.numel();
    const double par = time_ms([&] { kern::warp_bilinear(x, minv, y); }, 20);
    const double ref = time_ms([&] { kern::ref::warp_bilinear(x, minv, y); }, 20);
    row("warp 16x3x32x32", flops, par, ref);
  }
  {
    Tensor<float> x({16, 3, 32, 32}), y;
    SeedStream r2(11);
    fill(x, r2);
    const double flops = 30.0 * x.numel();
    const double par = time_ms([&] { kern::photometric_apply(x, 1.2, 0.8, 1.1, 0.5, y); }, 20);
    const double ref = time_ms([&] { kern::ref::photometric_apply(x, 1.2, 0.8, 1.1, 0.5, y); }, 20);
    row("photometric 16x3x32x32", flops, par, ref);
  }
  return 0;
}
