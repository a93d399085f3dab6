#pragma once

#include <cstdint>
#include <string>

#include "enaet/rng.hpp"

// Procedural glyph dataset: ten shape classes rendered from signed distance
// fields with randomized pose (rotation, scale, aspect, center), colors and
// pixel noise. Rotation stays within +-25 degrees so no nuisance pose turns
// one class into another. Images are written as binary PPM plus a manifest.

namespace enaet {

inline constexpr int kSynthClasses = 10;
const char* synth_class_name(int cls);

struct SynthOptions {
  int count = 6000;
  int image_size = 32;
  std::uint64_t seed = 7;
};

// Renders one sample into interleaved rgb bytes (3 * size * size). cls picks
// the glyph; every stochastic choice comes from the stream.
void render_synth_image(int cls, int size, SeedStream& rng, unsigned char* rgb);

// Writes dir/images/*.ppm and dir/manifest.csv (classes balanced by
// round-robin) and returns the manifest path.
std::string generate_synthetic_dataset(const std::string& dir, const SynthOptions& options);

}  // namespace enaet
