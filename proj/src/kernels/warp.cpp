#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "enaet/kernels.hpp"

namespace enaet::kern {

namespace {

constexpr double kGrayR = 0.299, kGrayG = 0.587, kGrayB = 0.114;

template <typename T>
T bilinear_at(const T* plane, int H, int W, double py, double px) {
  const int x0 = static_cast<int>(std::floor(px));
  const int y0 = static_cast<int>(std::floor(py));
  const double fx = px - x0, fy = py - y0;
  auto pick = [&](int y, int x) -> double {
    if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
    return plane[static_cast<std::size_t>(y) * W + x];
  };
  const double v0 = pick(y0, x0) * (1 - fx) + pick(y0, x0 + 1) * fx;
  const double v1 = pick(y0 + 1, x0) * (1 - fx) + pick(y0 + 1, x0 + 1) * fx;
  return static_cast<T>(v0 * (1 - fy) + v1 * fy);
}

}  // namespace

template <typename T>
void warp_bilinear(const Tensor<T>& src, const double minv[9], Tensor<T>& dst) {
  const int N = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  dst.resize(src.dims());
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int oy = 0; oy < H; ++oy) {
      const double ny = (2.0 * oy + 1.0) / H - 1.0;
      for (int ox = 0; ox < W; ++ox) {
        const double nx = (2.0 * ox + 1.0) / W - 1.0;
        const double u = minv[0] * nx + minv[1] * ny + minv[2];
        const double v = minv[3] * nx + minv[4] * ny + minv[5];
        const double w = minv[6] * nx + minv[7] * ny + minv[8];
        double sx, sy;
        bool valid = std::abs(w) > 1e-12;
        if (valid) {
          const double iu = u / w, iv = v / w;
          sx = (iu + 1.0) * W / 2.0 - 0.5;
          sy = (iv + 1.0) * H / 2.0 - 0.5;
          valid = sx > -1.0 && sx < W && sy > -1.0 && sy < H;
        } else {
          sx = sy = 0;
        }
        for (int c = 0; c < C; ++c) {
          const T* plane = src.data() + (static_cast<std::size_t>(n) * C + c) *
                                            static_cast<std::size_t>(H) * W;
          dst.at(n, c, oy, ox) = valid ? bilinear_at(plane, H, W, sy, sx) : T(0);
        }
      }
    }
}

template <typename T>
void resize_bilinear(const T* src, int C, int H, int W, T* dst, int oh, int ow) {
  const double sy = static_cast<double>(H) / oh;
  const double sx = static_cast<double>(W) / ow;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    const double py = (oy + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(py)), 0, H - 1);
    const int y1 = std::min(y0 + 1, H - 1);
    const double fy = std::clamp(py - std::floor(py), 0.0, 1.0);
    for (int ox = 0; ox < ow; ++ox) {
      const double px = (ox + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(px)), 0, W - 1);
      const int x1 = std::min(x0 + 1, W - 1);
      const double fx = std::clamp(px - std::floor(px), 0.0, 1.0);
      for (int c = 0; c < C; ++c) {
        const T* p = src + static_cast<std::size_t>(c) * H * W;
        const double v0 = p[static_cast<std::size_t>(y0) * W + x0] * (1 - fx) +
                          p[static_cast<std::size_t>(y0) * W + x1] * fx;
        const double v1 = p[static_cast<std::size_t>(y1) * W + x0] * (1 - fx) +
                          p[static_cast<std::size_t>(y1) * W + x1] * fx;
        dst[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] =
            static_cast<T>(v0 * (1 - fy) + v1 * fy);
      }
    }
  }
}

template <typename T>
void photometric_apply(const Tensor<T>& src, double color, double contrast, double brightness,
                       double sharpness, Tensor<T>& dst) {
  const int N = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  dst = src;
  if (color == 1.0 && contrast == 1.0 && brightness == 1.0 && sharpness == 0.0) return;

#pragma omp parallel
  {
    std::vector<double> gray(HW);
    std::vector<double> blur(HW);
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      T* img = dst.data() + static_cast<std::size_t>(n) * C * HW;
      auto plane = [&](int c) { return img + static_cast<std::size_t>(c) * HW; };

      if (color != 1.0 || contrast != 1.0) {
        const T *r = plane(0), *g = plane(1), *b = plane(2);
        for (std::size_t i = 0; i < HW; ++i)
          gray[i] = kGrayR * r[i] + kGrayG * g[i] + kGrayB * b[i];
      }
      if (color != 1.0) {
        for (int c = 0; c < C; ++c) {
          T* p = plane(c);
          for (std::size_t i = 0; i < HW; ++i)
            p[i] = static_cast<T>(gray[i] + color * (p[i] - gray[i]));
        }
        if (contrast != 1.0) {
          const T *r = plane(0), *g = plane(1), *b = plane(2);
          for (std::size_t i = 0; i < HW; ++i)
            gray[i] = kGrayR * r[i] + kGrayG * g[i] + kGrayB * b[i];
        }
      }
      if (contrast != 1.0) {
        double mean = 0;
        for (std::size_t i = 0; i < HW; ++i) mean += gray[i];
        mean /= static_cast<double>(HW);
        for (int c = 0; c < C; ++c) {
          T* p = plane(c);
          for (std::size_t i = 0; i < HW; ++i)
            p[i] = static_cast<T>(mean + contrast * (p[i] - mean));
        }
      }
      if (brightness != 1.0) {
        for (std::size_t i = 0; i < C * HW; ++i)
          img[i] = static_cast<T>(brightness * img[i]);
      }
      if (sharpness != 0.0) {
        for (int c = 0; c < C; ++c) {
          T* p = plane(c);
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
              double s = 0;
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  const int yy = std::clamp(y + dy, 0, H - 1);
                  const int xx = std::clamp(x + dx, 0, W - 1);
                  s += p[static_cast<std::size_t>(yy) * W + xx];
                }
              blur[static_cast<std::size_t>(y) * W + x] = s / 9.0;
            }
          for (std::size_t i = 0; i < HW; ++i)
            p[i] = static_cast<T>(p[i] + sharpness * (p[i] - blur[i]));
        }
      }
      for (std::size_t i = 0; i < C * HW; ++i)
        img[i] = std::clamp(img[i], T(0), T(1));
    }
  }
}

template void warp_bilinear<float>(const Tensor<float>&, const double[9], Tensor<float>&);
template void warp_bilinear<double>(const Tensor<double>&, const double[9], Tensor<double>&);
template void resize_bilinear<float>(const float*, int, int, int, float*, int, int);
template void resize_bilinear<double>(const double*, int, int, int, double*, int, int);
template void photometric_apply<float>(const Tensor<float>&, double, double, double, double,
                                       Tensor<float>&);
template void photometric_apply<double>(const Tensor<double>&, double, double, double, double,
                                        Tensor<double>&);

}  // namespace enaet::kern
