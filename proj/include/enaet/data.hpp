#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "enaet/rng.hpp"
#include "enaet/tensor.hpp"

// Dataset plumbing: manifest parsing, stratified labeled/unlabeled splits,
// image loading with channel normalization, and deterministic batch
// production. Images are binary PPM (P6); manifests are comma-separated text
// with the exact header `path,label` or `path,label,split`.

namespace enaet {

struct ManifestRecord {
  std::string path;   // relative to the manifest directory unless absolute
  std::string label;
  std::string split_hint;  // "", "train", "val" or "test"
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;  // in file order
  std::vector<std::string> vocabulary;  // sorted unique labels unless declared
  std::string root;                     // directory containing the manifest
  // Index into vocabulary, or -1 when the label is unknown.
  int label_index(const std::string& label) const;
};

// Errors mention the offending line number; a duplicate path names the path.
// A comment line `# vocabulary: a,b,...` fixes the vocabulary explicitly.
DatasetManifest load_manifest(const std::string& path);

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct SplitPlan {
  std::vector<int> labeled_train;  // record indices
  std::vector<int> unlabeled_train;
  std::vector<int> validation;
  std::vector<int> test;
  double portion = 1.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;  // e.g. vocabulary classes with no records
};

// Stratified per class and deterministic in the seed. An explicit split hint
// pins its record; the fractions apply to unhinted records. The labeled subset
// takes ceil(portion * class train count), at least 1 per nonempty class.
SplitPlan split_dataset(const DatasetManifest& manifest, double portion,
                        const SplitFractions& fractions, std::uint64_t seed);

// `path,assigned_split` rows; assigned_split in
// {labeled_train, unlabeled_train, validation, test}.
void write_split_file(const std::string& path, const DatasetManifest& manifest,
                      const SplitPlan& plan);
SplitPlan read_split_file(const std::string& path, const DatasetManifest& manifest);

struct ClassHistogram {
  std::vector<std::string> classes;
  std::vector<std::int64_t> counts;
  double imbalance_ratio = 1.0;  // max/min over classes with nonzero count
};

ClassHistogram class_distribution(const DatasetManifest& manifest);
ClassHistogram class_distribution(const DatasetManifest& manifest,
                                  const std::vector<int>& subset);
void write_class_histogram(const std::string& path, const ClassHistogram& hist);

struct ImageU8 {
  int w = 0;
  int h = 0;
  std::vector<unsigned char> pix;  // interleaved rgb, row-major
};

bool read_ppm(const std::string& path, ImageU8& out, std::string& err);
void write_ppm(const std::string& path, const ImageU8& img);

// Decodes, resizes to image_size^2 and scales to [0,1] on first access, then
// caches. An unreadable file yields nullptr and one logged warning.
class ImageStore {
 public:
  ImageStore(const DatasetManifest& manifest, int image_size);
  // Planar rgb, 3 * image_size * image_size floats, or nullptr.
  const float* get(int record_index);
  int image_size() const { return size_; }
  int skipped() const { return skipped_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  const DatasetManifest& manifest_;
  int size_;
  int skipped_ = 0;
  std::vector<std::vector<float>> cache_;
  std::vector<signed char> state_;  // 0 untried, 1 ok, -1 failed
  std::vector<std::string> warnings_;
};

struct ChannelStats {
  std::array<double, 3> mean = {0, 0, 0};
  std::array<double, 3> std = {1, 1, 1};
};

// Statistics over the readable images of a pool; a zero-spread channel gets
// std 1 to keep normalization defined.
ChannelStats compute_channel_stats(ImageStore& store, const std::vector<int>& pool);

struct Batch {
  Tensor<float> images;      // [n, 3, s, s], channel-normalized
  std::vector<int> indices;  // manifest record indices
  bool labels_masked = false;
  // Label reads on a masked batch bump the guard counter; the training loop
  // must never trigger one.
  int label(std::size_t i) const;
  std::vector<int>& raw_labels() { return labels_; }
  const std::vector<int>& raw_labels() const { return labels_; }

 private:
  std::vector<int> labels_;
};

std::int64_t masked_label_reads();
void reset_masked_label_reads();

struct BatchOptions {
  int batch_size = 128;
  bool drop_last = false;
  bool shuffle = true;
  bool augment = false;  // horizontal flip p=.5, pad-4 zero crop
  bool mask_labels = false;
};

// Deterministic batch index sequence over a pool; reshuffles on every wrap
// from a stream derived of (seed, role, pass index).
class BatchCycler {
 public:
  BatchCycler(std::vector<int> pool, const BatchOptions& options, const StreamFactory& seeds,
              std::string role);
  std::vector<int> next_indices();
  int batches_per_pass() const;
  void reset();

 private:
  void reshuffle();
  std::vector<int> pool_;
  BatchOptions options_;
  StreamFactory seeds_;
  std::string role_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  std::uint64_t pass_ = 0;
};

// Assembles a normalized (and optionally augmented) batch from record
// indices. Unreadable records are skipped; the batch shrinks accordingly.
Batch assemble_batch(ImageStore& store, const std::vector<int>& indices,
                     const DatasetManifest& manifest, const ChannelStats& stats,
                     const BatchOptions& options, SeedStream& rng);

// One-hot rows for the labels of an unmasked batch.
Tensor<float> one_hot_labels(const Batch& batch, int num_classes);

// In-place per-channel (v - mean) / std.
void normalize_batch(Tensor<float>& images, const ChannelStats& stats);

// Fresh stochastic view of an already-normalized batch: per-image horizontal
// flip with probability .5 plus a pad-4 zero crop.
Tensor<float> augment_views(const Tensor<float>& batch, SeedStream& rng);

}  // namespace enaet
