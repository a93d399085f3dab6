#include "enaet/transforms.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "enaet/kernels.hpp"

namespace enaet {

namespace {

constexpr std::array<std::array<double, 2>, 4> kCorners = {
    {{-1.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0}}};

// Solves the 8x8 system Ax = b in place, partial pivoting.
void solve8(double A[8][8], double b[8], double x[8]) {
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    if (std::abs(A[piv][col]) < 1e-12)
      throw std::invalid_argument("transform: degenerate corner configuration");
    if (piv != col) {
      for (int c = 0; c < 8; ++c) std::swap(A[col][c], A[piv][c]);
      std::swap(b[col], b[piv]);
    }
    for (int r = col + 1; r < 8; ++r) {
      const double f = A[r][col] / A[col][col];
      if (f == 0) continue;
      for (int c = col; c < 8; ++c) A[r][c] -= f * A[col][c];
      b[r] -= f * b[col];
    }
  }
  for (int r = 7; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < 8; ++c) s -= A[r][c] * x[c];
    x[r] = s / A[r][r];
  }
}

// Homography sending kCorners[i] to dst[i], h33 = 1.
std::array<double, 9> homography_from_corners(const std::array<std::array<double, 2>, 4>& dst) {
  double A[8][8] = {};
  double b[8];
  double x[8];
  for (int i = 0; i < 4; ++i) {
    const double sx = kCorners[i][0], sy = kCorners[i][1];
    const double u = dst[i][0], v = dst[i][1];
    double* r0 = A[2 * i];
    double* r1 = A[2 * i + 1];
    r0[0] = sx, r0[1] = sy, r0[2] = 1, r0[6] = -u * sx, r0[7] = -u * sy;
    r1[3] = sx, r1[4] = sy, r1[5] = 1, r1[6] = -v * sx, r1[7] = -v * sy;
    b[2 * i] = u;
    b[2 * i + 1] = v;
  }
  solve8(A, b, x);
  return {x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], 1.0};
}

void check_param_count(TransformFamily family, std::size_t n, const char* where) {
  if (static_cast<int>(n) != param_count(family))
    throw std::invalid_argument(std::string(where) + ": " + family_name(family) + " expects " +
                                std::to_string(param_count(family)) + " params, got " +
                                std::to_string(n));
}

}  // namespace

int param_count(TransformFamily family) {
  switch (family) {
    case TransformFamily::Projective: return 8;
    case TransformFamily::Affine: return 6;
    case TransformFamily::Similarity: return 4;
    case TransformFamily::Euclidean: return 3;
    case TransformFamily::Photometric: return 4;
  }
  throw std::invalid_argument("param_count: unknown family tag");
}

const char* family_name(TransformFamily family) {
  switch (family) {
    case TransformFamily::Projective: return "projective";
    case TransformFamily::Affine: return "affine";
    case TransformFamily::Similarity: return "similarity";
    case TransformFamily::Euclidean: return "euclidean";
    case TransformFamily::Photometric: return "photometric";
  }
  throw std::invalid_argument("family_name: unknown family tag");
}

bool is_spatial(TransformFamily family) { return family != TransformFamily::Photometric; }

std::array<double, 2> SamplingRanges::bounds(TransformFamily family, int coord) const {
  switch (family) {
    case TransformFamily::Euclidean:
      if (coord == 0) return {-rotation_max, rotation_max};
      return {-translate_max, translate_max};
    case TransformFamily::Similarity:
      if (coord == 0) return {-rotation_max, rotation_max};
      if (coord < 3) return {-translate_max, translate_max};
      return {log_scale_min, log_scale_max};
    case TransformFamily::Affine:
      return {-affine_offset_max, affine_offset_max};
    case TransformFamily::Projective:
      return {-corner_shift_max, corner_shift_max};
    case TransformFamily::Photometric:
      if (coord < 3) return {factor_min, factor_max};
      return {sharpness_min, sharpness_max};
  }
  throw std::invalid_argument("SamplingRanges::bounds: unknown family tag");
}

void SamplingRanges::validate() const {
  for (TransformFamily family : kAllFamilies) {
    const int n = param_count(family);
    for (int i = 0; i < n; ++i) {
      const auto [lo, hi] = bounds(family, i);
      if (lo > hi)
        throw std::invalid_argument(std::string("SamplingRanges: inverted interval for ") +
                                    family_name(family));
      const double ident =
          family == TransformFamily::Photometric && i < 3 ? 1.0 : 0.0;
      if (ident < lo || ident > hi)
        throw std::invalid_argument(std::string("SamplingRanges: identity outside range for ") +
                                    family_name(family));
    }
  }
}

TransformSpec sample_transform(TransformFamily family, const SamplingRanges& ranges,
                               SeedStream& rng) {
  const int n = param_count(family);
  TransformSpec spec;
  spec.family = family;
  spec.raw.resize(n);
  spec.params.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto [lo, hi] = ranges.bounds(family, i);
    if (lo == hi) {
      spec.raw[i] = lo;
      spec.params[i] = 0.0;
    } else {
      spec.raw[i] = rng.uniform(lo, hi);
      spec.params[i] = 2.0 * (spec.raw[i] - lo) / (hi - lo) - 1.0;
    }
  }
  return spec;
}

TransformSpec make_spec(TransformFamily family, std::vector<double> raw,
                        const SamplingRanges& ranges) {
  check_param_count(family, raw.size(), "make_spec");
  TransformSpec spec;
  spec.family = family;
  spec.raw = std::move(raw);
  spec.params.resize(spec.raw.size());
  for (std::size_t i = 0; i < spec.raw.size(); ++i) {
    const auto [lo, hi] = ranges.bounds(family, static_cast<int>(i));
    spec.params[i] = lo == hi ? 0.0 : 2.0 * (spec.raw[i] - lo) / (hi - lo) - 1.0;
  }
  return spec;
}

TransformSpec identity_spec(TransformFamily family, const SamplingRanges& ranges) {
  std::vector<double> raw(static_cast<std::size_t>(param_count(family)), 0.0);
  if (family == TransformFamily::Photometric) raw = {1.0, 1.0, 1.0, 0.0};
  return make_spec(family, std::move(raw), ranges);
}

bool is_identity(const TransformSpec& spec) {
  if (spec.family == TransformFamily::Photometric)
    return spec.raw[0] == 1.0 && spec.raw[1] == 1.0 && spec.raw[2] == 1.0 && spec.raw[3] == 0.0;
  for (double v : spec.raw)
    if (v != 0.0) return false;
  return true;
}

std::array<double, 9> to_matrix(const TransformSpec& spec) {
  check_param_count(spec.family, spec.raw.size(), "to_matrix");
  const std::vector<double>& p = spec.raw;
  switch (spec.family) {
    case TransformFamily::Euclidean: {
      const double c = std::cos(p[0]), s = std::sin(p[0]);
      return {c, -s, 2 * p[1], s, c, 2 * p[2], 0, 0, 1};
    }
    case TransformFamily::Similarity: {
      const double sc = std::exp(p[3]);
      const double c = sc * std::cos(p[0]), s = sc * std::sin(p[0]);
      return {c, -s, 2 * p[1], s, c, 2 * p[2], 0, 0, 1};
    }
    case TransformFamily::Affine:
      return {1 + p[0], p[1], p[2], p[3], 1 + p[4], p[5], 0, 0, 1};
    case TransformFamily::Projective: {
      std::array<std::array<double, 2>, 4> dst;
      for (int i = 0; i < 4; ++i) {
        dst[i][0] = kCorners[i][0] + 2 * p[2 * i];
        dst[i][1] = kCorners[i][1] + 2 * p[2 * i + 1];
      }
      return homography_from_corners(dst);
    }
    case TransformFamily::Photometric:
      break;
  }
  throw std::invalid_argument("to_matrix: photometric spec has no homography");
}

std::array<double, 9> invert_homography(const std::array<double, 9>& m) {
  const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6], h = m[7],
               i = m[8];
  const double A = e * i - f * h, B = c * h - b * i, C = b * f - c * e;
  const double D = f * g - d * i, E = a * i - c * g, F = c * d - a * f;
  const double G = d * h - e * g, H = b * g - a * h, I = a * e - b * d;
  const double det = a * A + b * D + c * G;
  if (std::abs(det) < 1e-12) throw std::invalid_argument("invert_homography: singular matrix");
  return {A / det, B / det, C / det, D / det, E / det, F / det, G / det, H / det, I / det};
}

std::vector<double> encode_params(const TransformSpec& spec) {
  check_param_count(spec.family, spec.params.size(), "encode_params");
  return spec.params;
}

TransformSpec decode_params(TransformFamily family, const std::vector<double>& normalized,
                            const SamplingRanges& ranges) {
  check_param_count(family, normalized.size(), "decode_params");
  TransformSpec spec;
  spec.family = family;
  spec.params = normalized;
  spec.raw.resize(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    if (std::abs(normalized[i]) > 1.0 + 1e-9)
      throw std::range_error("decode_params: normalized value " +
                             std::to_string(normalized[i]) + " outside [-1,1]");
    const auto [lo, hi] = ranges.bounds(family, static_cast<int>(i));
    spec.raw[i] = lo + (normalized[i] + 1.0) / 2.0 * (hi - lo);
  }
  return spec;
}

TransformSpec embed_into(const TransformSpec& spec, TransformFamily target,
                         const SamplingRanges& ranges) {
  if (!is_spatial(spec.family) || !is_spatial(target))
    throw std::invalid_argument("embed_into: spatial families only");
  if (spec.family == target) return spec;
  const std::array<double, 9> m = to_matrix(spec);
  switch (target) {
    case TransformFamily::Similarity: {
      if (spec.family != TransformFamily::Euclidean)
        throw std::invalid_argument("embed_into: target does not contain source");
      return make_spec(target, {spec.raw[0], spec.raw[1], spec.raw[2], 0.0}, ranges);
    }
    case TransformFamily::Affine: {
      if (spec.family == TransformFamily::Projective)
        throw std::invalid_argument("embed_into: target does not contain source");
      return make_spec(target, {m[0] - 1, m[1], m[2], m[3], m[4] - 1, m[5]}, ranges);
    }
    case TransformFamily::Projective: {
      std::vector<double> raw(8);
      for (int i = 0; i < 4; ++i) {
        const double x = kCorners[i][0], y = kCorners[i][1];
        const double w = m[6] * x + m[7] * y + m[8];
        raw[2 * i] = ((m[0] * x + m[1] * y + m[2]) / w - x) / 2.0;
        raw[2 * i + 1] = ((m[3] * x + m[4] * y + m[5]) / w - y) / 2.0;
      }
      return make_spec(target, std::move(raw), ranges);
    }
    default:
      throw std::invalid_argument("embed_into: target does not contain source");
  }
}

template <typename T>
Tensor<T> apply_transform(const Tensor<T>& batch, const TransformSpec& spec) {
  if (batch.ndim() != 4) throw std::invalid_argument("apply_transform: batch must be NCHW");
  Tensor<T> out;
  if (is_identity(spec)) {
    out = batch;
    return out;
  }
  if (spec.family == TransformFamily::Photometric) {
    kern::photometric_apply(batch, spec.raw[0], spec.raw[1], spec.raw[2], spec.raw[3], out);
    return out;
  }
  const std::array<double, 9> minv = invert_homography(to_matrix(spec));
  kern::warp_bilinear(batch, minv.data(), out);
  return out;
}

template Tensor<float> apply_transform<float>(const Tensor<float>&, const TransformSpec&);
template Tensor<double> apply_transform<double>(const Tensor<double>&, const TransformSpec&);

}  // namespace enaet
