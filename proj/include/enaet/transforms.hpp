#pragma once

#include <array>
#include <vector>

#include "enaet/rng.hpp"
#include "enaet/tensor.hpp"

// The five transformation families whose parameters the decoders regress.
// Spatial specs map to 3x3 homographies over normalized coordinates
// ([-1,1] x [-1,1], pixel centers at (2c+1)/W - 1, y down); Photometric acts
// pointwise on pixel values.
//
// Raw parameter layout per family:
//   Euclidean   3  rotation (rad), tx, ty (fraction of image side)
//   Similarity  4  rotation, tx, ty, log-scale
//   Affine      6  row-major offsets from the identity 2x3 matrix
//                  (a11-1, a12, tx, a21, a22-1, ty), translations in
//                  normalized units
//   Projective  8  corner displacements (dx,dy) in fraction of image side,
//                  corners ordered (-1,-1), (1,-1), (1,1), (-1,1)
//   Photometric 4  color, contrast, brightness factors, sharpness strength

namespace enaet {

enum class TransformFamily { Projective, Affine, Similarity, Euclidean, Photometric };

inline constexpr int kNumFamilies = 5;
inline constexpr std::array<TransformFamily, kNumFamilies> kAllFamilies = {
    TransformFamily::Projective, TransformFamily::Affine, TransformFamily::Similarity,
    TransformFamily::Euclidean, TransformFamily::Photometric};

int param_count(TransformFamily family);
const char* family_name(TransformFamily family);
bool is_spatial(TransformFamily family);

struct TransformSpec {
  TransformFamily family = TransformFamily::Euclidean;
  std::vector<double> params;  // normalized to [-1,1] over the sampling range
  std::vector<double> raw;     // family-specific units, see layout above
};

// Per-coordinate sampling bounds. Symmetric intervals are stored as a single
// magnitude. A degenerate interval (min == max) pins the coordinate to that
// value and its normalized form to 0.
struct SamplingRanges {
  double rotation_max = 0.5235987755982988;  // pi/6
  double translate_max = 0.125;
  double log_scale_min = -0.2231435513142097;  // ln 0.8
  double log_scale_max = 0.22314355131420976;  // ln 1.25
  double affine_offset_max = 0.15;
  double corner_shift_max = 0.125;
  double factor_min = 0.6;
  double factor_max = 1.4;
  double sharpness_min = 0.0;
  double sharpness_max = 1.0;

  // [lo, hi] for one raw coordinate of the family.
  std::array<double, 2> bounds(TransformFamily family, int coord) const;
  // Throws invalid_argument if any interval is inverted or excludes the
  // identity transform.
  void validate() const;
};

TransformSpec sample_transform(TransformFamily family, const SamplingRanges& ranges,
                               SeedStream& rng);

// Builds a spec from raw parameters, normalizing against `ranges`.
TransformSpec make_spec(TransformFamily family, std::vector<double> raw,
                        const SamplingRanges& ranges);

TransformSpec identity_spec(TransformFamily family, const SamplingRanges& ranges);
bool is_identity(const TransformSpec& spec);

// Forward homography of a spatial spec, row-major, bottom-right entry 1.
// Throws invalid_argument for Photometric.
std::array<double, 9> to_matrix(const TransformSpec& spec);

std::array<double, 9> invert_homography(const std::array<double, 9>& m);

// The normalized regression target the decoders are trained against.
std::vector<double> encode_params(const TransformSpec& spec);

// Inverse of encode_params. Throws range_error if any coordinate lies outside
// [-1, 1] (beyond a small tolerance).
TransformSpec decode_params(TransformFamily family, const std::vector<double>& normalized,
                            const SamplingRanges& ranges);

// Re-expresses a spatial spec in a containing family (identical to_matrix).
TransformSpec embed_into(const TransformSpec& spec, TransformFamily target,
                         const SamplingRanges& ranges);

template <typename T>
Tensor<T> apply_transform(const Tensor<T>& batch, const TransformSpec& spec);

}  // namespace enaet
