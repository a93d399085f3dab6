#include "enaet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "enaet/data.hpp"

namespace enaet {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x = 0, y = 0;
};

double sd_disk(Vec2 q) { return std::hypot(q.x, q.y) - 1.0; }

// The hole of the ring and the opening of the box are the features that
// separate them from disk and square; both are kept wide enough to survive
// the smallest scale, the antialias band and the noise floor.
double sd_ring(Vec2 q) { return std::fabs(std::hypot(q.x, q.y) - 0.75) - 0.25; }

double sd_square(Vec2 q) { return std::max(std::fabs(q.x), std::fabs(q.y)) - 0.8; }

double sd_box(Vec2 q) {
  return std::fabs(std::max(std::fabs(q.x), std::fabs(q.y)) - 0.76) - 0.18;
}

double sd_plus(Vec2 q) {
  const double ax = std::fabs(q.x), ay = std::fabs(q.y);
  return std::min(std::max(ax - 1.0, ay - 0.3), std::max(ax - 0.3, ay - 1.0));
}

double sd_triangle(Vec2 q) {
  // Equilateral, circumradius 1, apex up; intersection of three half planes.
  double d = -1e9;
  for (int k = 0; k < 3; ++k) {
    const double a = -kPi / 2 + 2.0 * kPi * k / 3.0;  // outward edge normals
    d = std::max(d, q.x * std::cos(a) + q.y * std::sin(a) - 0.5);
  }
  return d;
}

double sd_star(Vec2 q) {
  // Radial five-spike boundary; not a metric distance but monotone across it.
  const double r = std::hypot(q.x, q.y);
  const double phi = std::atan2(q.y, q.x);
  return r - (0.58 + 0.42 * std::cos(5.0 * (phi - kPi / 2)));
}

double sd_crescent(Vec2 q) {
  const double outer = std::hypot(q.x, q.y) - 1.0;
  const double bite = std::hypot(q.x - 0.5, q.y) - 0.78;
  return std::max(outer, -bite);
}

double sd_lobes(Vec2 q) {
  const double a = std::hypot(q.x - 0.52, q.y) - 0.46;
  const double b = std::hypot(q.x + 0.52, q.y) - 0.46;
  return std::min(a, b);
}

double sd_stripes(Vec2 q) {
  double d = 1e9;
  for (int k = -1; k <= 1; ++k)
    d = std::min(d, std::max(std::fabs(q.x) - 0.9, std::fabs(q.y - 0.62 * k) - 0.17));
  return d;
}

using SdFn = double (*)(Vec2);

struct GlyphDef {
  const char* name;
  SdFn sdf;
};

constexpr GlyphDef kGlyphs[kSynthClasses] = {
    {"disk", sd_disk},       {"ring", sd_ring},     {"square", sd_square},
    {"box", sd_box},         {"plus", sd_plus},     {"triangle", sd_triangle},
    {"star", sd_star},       {"crescent", sd_crescent},
    {"lobes", sd_lobes},     {"stripes", sd_stripes},
};

double luminance(double r, double g, double b) {
  return 0.2126 * r + 0.7152 * g + 0.0722 * b;
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

const char* synth_class_name(int cls) {
  if (cls < 0 || cls >= kSynthClasses)
    throw std::out_of_range("synth class index " + std::to_string(cls));
  return kGlyphs[cls].name;
}

void render_synth_image(int cls, int size, SeedStream& rng, unsigned char* rgb) {
  if (cls < 0 || cls >= kSynthClasses)
    throw std::out_of_range("synth class index " + std::to_string(cls));
  if (size < 4) throw std::invalid_argument("synth image size too small");

  // Pose and photometric nuisances. The draw order is part of the dataset
  // definition: changing it changes every image.
  const double rot = rng.uniform(-25.0, 25.0) * kPi / 180.0;
  const double scale = rng.uniform(0.6, 0.95);
  const double aspect = rng.uniform(0.8, 1.25);
  const double cx = rng.uniform(-0.15, 0.15);
  const double cy = rng.uniform(-0.15, 0.15);
  double fg[3], bg[3];
  for (int c = 0; c < 3; ++c) fg[c] = rng.uniform();
  for (int attempt = 0;; ++attempt) {
    for (int c = 0; c < 3; ++c) bg[c] = rng.uniform();
    if (std::fabs(luminance(fg[0], fg[1], fg[2]) - luminance(bg[0], bg[1], bg[2])) >= 0.26)
      break;
    if (attempt >= 64) break;  // nearly impossible; accept the last draw
  }
  const double sigma = rng.uniform(0.02, 0.10);

  const double cosr = std::cos(rot), sinr = std::sin(rot);
  // Antialias band roughly 1.1 pixels wide, expressed in glyph units.
  const double edge = 1.1 * (2.0 / size) / scale;

  std::vector<double> noise(static_cast<std::size_t>(3 * size * size));
  for (double& v : noise) v = rng.normal() * sigma;

  for (int y = 0; y < size; ++y) {
    const double v = (2.0 * y + 1.0) / size - 1.0;
    for (int x = 0; x < size; ++x) {
      const double u = (2.0 * x + 1.0) / size - 1.0;
      // World -> glyph frame: undo center, rotation, scale and aspect.
      const double px = u - cx, py = v - cy;
      Vec2 q;
      q.x = (cosr * px + sinr * py) / (scale * aspect);
      q.y = (-sinr * px + cosr * py) / scale;
      const double d = kGlyphs[cls].sdf(q);
      double t = clamp01(0.5 - d / edge);          // coverage
      t = t * t * (3.0 - 2.0 * t);                 // smoothstep
      for (int c = 0; c < 3; ++c) {
        const double val = bg[c] + (fg[c] - bg[c]) * t +
                           noise[static_cast<std::size_t>((y * size + x) * 3 + c)];
        rgb[(y * size + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(clamp01(val) * 255.0));
      }
    }
  }
}

std::string generate_synthetic_dataset(const std::string& dir, const SynthOptions& options) {
  namespace fs = std::filesystem;
  if (options.count < kSynthClasses)
    throw std::invalid_argument("synth count must be at least one per class");
  if (options.image_size < 4) throw std::invalid_argument("synth image size too small");

  fs::create_directories(fs::path(dir) / "images");
  StreamFactory seeds(options.seed);

  const std::string manifest_path = (fs::path(dir) / "manifest.csv").string();
  std::ofstream manifest(manifest_path, std::ios::binary | std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path);
  manifest << "path,label\n";

  ImageU8 img;
  img.w = options.image_size;
  img.h = options.image_size;
  img.pix.resize(static_cast<std::size_t>(3 * options.image_size * options.image_size));
  for (int i = 0; i < options.count; ++i) {
    const int cls = i % kSynthClasses;
    SeedStream rng = seeds.make("sample", static_cast<std::uint64_t>(i));
    render_synth_image(cls, options.image_size, rng, img.pix.data());
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05d.ppm", kGlyphs[cls].name, i);
    write_ppm((fs::path(dir) / "images" / name).string(), img);
    manifest << "images/" << name << "," << kGlyphs[cls].name << "\n";
  }
  return manifest_path;
}

}  // namespace enaet
