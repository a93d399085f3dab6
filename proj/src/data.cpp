#include "enaet/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "enaet/kernels.hpp"

namespace enaet {

namespace {

std::string dirname_of(const std::string& path) {
  const std::size_t pos = path.find_last_of('/');
  if (pos == std::string::npos) return ".";
  if (pos == 0) return "/";
  return path.substr(0, pos);
}

std::string join_path(const std::string& root, const std::string& rel) {
  if (!rel.empty() && rel.front() == '/') return rel;
  return root + "/" + rel;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void manifest_error(const std::string& path, int line_no, const std::string& what) {
  std::ostringstream oss;
  oss << path << ":" << line_no << ": " << what;
  throw std::runtime_error(oss.str());
}

}  // namespace

int DatasetManifest::label_index(const std::string& label) const {
  const auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), label);
  if (it != vocabulary.end() && *it == label)
    return static_cast<int>(it - vocabulary.begin());
  // A declared vocabulary need not be sorted; fall back to a linear scan.
  for (std::size_t i = 0; i < vocabulary.size(); ++i)
    if (vocabulary[i] == label) return static_cast<int>(i);
  return -1;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);

  DatasetManifest m;
  m.root = dirname_of(path);

  std::string line;
  int line_no = 0;
  bool header_seen = false;
  bool has_split_column = false;
  std::vector<std::string> declared_vocab;
  std::unordered_set<std::string> seen_paths;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (stripped.front() == '#') {
      const std::string kVocab = "# vocabulary:";
      if (stripped.rfind(kVocab, 0) == 0) {
        for (const std::string& v : split_csv_line(stripped.substr(kVocab.size())))
          if (!v.empty()) declared_vocab.push_back(v);
        if (declared_vocab.empty())
          manifest_error(path, line_no, "vocabulary declaration lists no classes");
      }
      continue;
    }
    if (!header_seen) {
      if (stripped == "path,label")
        has_split_column = false;
      else if (stripped == "path,label,split")
        has_split_column = true;
      else
        manifest_error(path, line_no,
                       "expected header `path,label` or `path,label,split`, got `" + stripped +
                           "`");
      header_seen = true;
      continue;
    }
    const std::vector<std::string> cols = split_csv_line(stripped);
    const std::size_t expected = has_split_column ? 3 : 2;
    if (cols.size() != expected && !(has_split_column && cols.size() == 2)) {
      std::ostringstream oss;
      oss << "expected " << expected << " columns, got " << cols.size();
      manifest_error(path, line_no, oss.str());
    }
    ManifestRecord rec;
    rec.path = cols[0];
    rec.label = cols[1];
    if (cols.size() == 3) rec.split_hint = cols[2];
    if (rec.path.empty()) manifest_error(path, line_no, "empty path");
    if (rec.label.empty()) manifest_error(path, line_no, "empty label");
    if (!rec.split_hint.empty() && rec.split_hint != "train" && rec.split_hint != "val" &&
        rec.split_hint != "test")
      manifest_error(path, line_no, "unknown split `" + rec.split_hint + "`");
    if (!seen_paths.insert(rec.path).second)
      manifest_error(path, line_no, "duplicate path `" + rec.path + "`");
    m.records.push_back(std::move(rec));
  }
  if (!header_seen) throw std::runtime_error(path + ": missing manifest header");

  if (!declared_vocab.empty()) {
    std::unordered_set<std::string> uniq;
    for (const std::string& v : declared_vocab)
      if (!uniq.insert(v).second)
        throw std::runtime_error(path + ": vocabulary lists `" + v + "` twice");
    m.vocabulary = declared_vocab;
    for (std::size_t i = 0; i < m.records.size(); ++i)
      if (!uniq.count(m.records[i].label))
        throw std::runtime_error(path + ": label `" + m.records[i].label +
                                 "` is not in the declared vocabulary");
  } else {
    std::set<std::string> labels;
    for (const ManifestRecord& r : m.records) labels.insert(r.label);
    m.vocabulary.assign(labels.begin(), labels.end());
  }
  return m;
}

SplitPlan split_dataset(const DatasetManifest& manifest, double portion,
                        const SplitFractions& fractions, std::uint64_t seed) {
  if (!(portion > 0.0 && portion <= 1.0))
    throw std::invalid_argument("split_dataset: portion must be in (0, 1]");
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
      std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9)
    throw std::invalid_argument("split_dataset: fractions must be nonnegative and sum to 1");
  if (manifest.records.empty()) throw std::invalid_argument("split_dataset: empty manifest");

  SplitPlan plan;
  plan.portion = portion;
  plan.seed = seed;
  const StreamFactory seeds(seed);

  const int num_classes = static_cast<int>(manifest.vocabulary.size());
  std::vector<std::vector<int>> hinted_train(static_cast<std::size_t>(num_classes));
  std::vector<std::vector<int>> unhinted(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const ManifestRecord& r = manifest.records[i];
    const int c = manifest.label_index(r.label);
    const int idx = static_cast<int>(i);
    if (r.split_hint == "val")
      plan.validation.push_back(idx);
    else if (r.split_hint == "test")
      plan.test.push_back(idx);
    else if (r.split_hint == "train")
      hinted_train[static_cast<std::size_t>(c)].push_back(idx);
    else
      unhinted[static_cast<std::size_t>(c)].push_back(idx);
  }

  for (int c = 0; c < num_classes; ++c) {
    const std::string& name = manifest.vocabulary[static_cast<std::size_t>(c)];
    std::vector<int>& free_pool = unhinted[static_cast<std::size_t>(c)];
    std::vector<int> train_pool = hinted_train[static_cast<std::size_t>(c)];

    if (free_pool.empty() && train_pool.empty()) {
      bool any = false;
      for (const ManifestRecord& r : manifest.records)
        if (r.label == name) any = true;
      if (!any) plan.warnings.push_back("class `" + name + "` has no records");
    }

    if (!free_pool.empty()) {
      SeedStream stream = seeds.make("split:" + name);
      stream.shuffle(free_pool);
      const int n = static_cast<int>(free_pool.size());
      int n_test = static_cast<int>(std::llround(fractions.test * n));
      int n_val = static_cast<int>(std::llround(fractions.val * n));
      if (n_test + n_val > n) n_val = n - n_test;
      for (int i = 0; i < n_test; ++i) plan.test.push_back(free_pool[static_cast<std::size_t>(i)]);
      for (int i = n_test; i < n_test + n_val; ++i)
        plan.validation.push_back(free_pool[static_cast<std::size_t>(i)]);
      for (int i = n_test + n_val; i < n; ++i)
        train_pool.push_back(free_pool[static_cast<std::size_t>(i)]);
    }

    if (train_pool.empty()) continue;
    SeedStream pick = seeds.make("labels:" + name);
    pick.shuffle(train_pool);
    const int n_train = static_cast<int>(train_pool.size());
    int n_labeled = static_cast<int>(std::ceil(portion * n_train - 1e-12));
    n_labeled = std::max(n_labeled, 1);
    n_labeled = std::min(n_labeled, n_train);
    for (int i = 0; i < n_labeled; ++i)
      plan.labeled_train.push_back(train_pool[static_cast<std::size_t>(i)]);
    for (int i = n_labeled; i < n_train; ++i)
      plan.unlabeled_train.push_back(train_pool[static_cast<std::size_t>(i)]);
  }

  std::sort(plan.labeled_train.begin(), plan.labeled_train.end());
  std::sort(plan.unlabeled_train.begin(), plan.unlabeled_train.end());
  std::sort(plan.validation.begin(), plan.validation.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

void write_split_file(const std::string& path, const DatasetManifest& manifest,
                      const SplitPlan& plan) {
  std::vector<const char*> assignment(manifest.records.size(), nullptr);
  auto tag = [&](const std::vector<int>& pool, const char* name) {
    for (int idx : pool) {
      if (idx < 0 || idx >= static_cast<int>(manifest.records.size()))
        throw std::invalid_argument("write_split_file: record index out of range");
      assignment[static_cast<std::size_t>(idx)] = name;
    }
  };
  tag(plan.labeled_train, "labeled_train");
  tag(plan.unlabeled_train, "unlabeled_train");
  tag(plan.validation, "validation");
  tag(plan.test, "test");

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write split file: " + path);
  out << "# portion: " << plan.portion << "\n";
  out << "# seed: " << plan.seed << "\n";
  out << "path,assigned_split\n";
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (!assignment[i]) continue;  // records omitted from the plan are dropped
    out << manifest.records[i].path << "," << assignment[i] << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

SplitPlan read_split_file(const std::string& path, const DatasetManifest& manifest) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file: " + path);

  std::unordered_map<std::string, int> by_path;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    by_path[manifest.records[i].path] = static_cast<int>(i);

  SplitPlan plan;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::unordered_set<int> assigned;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (stripped.front() == '#') {
      std::istringstream iss(stripped);
      std::string hash, key;
      iss >> hash >> key;
      if (key == "portion:") iss >> plan.portion;
      if (key == "seed:") iss >> plan.seed;
      continue;
    }
    if (!header_seen) {
      if (stripped != "path,assigned_split")
        manifest_error(path, line_no, "expected header `path,assigned_split`");
      header_seen = true;
      continue;
    }
    const std::vector<std::string> cols = split_csv_line(stripped);
    if (cols.size() != 2) manifest_error(path, line_no, "expected 2 columns");
    const auto it = by_path.find(cols[0]);
    if (it == by_path.end())
      manifest_error(path, line_no, "path `" + cols[0] + "` is not in the manifest");
    if (!assigned.insert(it->second).second)
      manifest_error(path, line_no, "path `" + cols[0] + "` assigned twice");
    if (cols[1] == "labeled_train")
      plan.labeled_train.push_back(it->second);
    else if (cols[1] == "unlabeled_train")
      plan.unlabeled_train.push_back(it->second);
    else if (cols[1] == "validation")
      plan.validation.push_back(it->second);
    else if (cols[1] == "test")
      plan.test.push_back(it->second);
    else
      manifest_error(path, line_no, "unknown split `" + cols[1] + "`");
  }
  if (!header_seen) throw std::runtime_error(path + ": missing split header");
  std::sort(plan.labeled_train.begin(), plan.labeled_train.end());
  std::sort(plan.unlabeled_train.begin(), plan.unlabeled_train.end());
  std::sort(plan.validation.begin(), plan.validation.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

namespace {

ClassHistogram histogram_of(const DatasetManifest& manifest, const std::vector<int>* subset) {
  if (manifest.records.empty())
    throw std::invalid_argument("class_distribution: empty manifest");
  if (subset && subset->empty())
    throw std::invalid_argument("class_distribution: empty subset");
  ClassHistogram h;
  h.classes = manifest.vocabulary;
  h.counts.assign(h.classes.size(), 0);
  auto count_one = [&](int rec) {
    const int c = manifest.label_index(manifest.records[static_cast<std::size_t>(rec)].label);
    ++h.counts[static_cast<std::size_t>(c)];
  };
  if (subset) {
    for (int rec : *subset) {
      if (rec < 0 || rec >= static_cast<int>(manifest.records.size()))
        throw std::invalid_argument("class_distribution: record index out of range");
      count_one(rec);
    }
  } else {
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
      count_one(static_cast<int>(i));
  }
  std::int64_t mn = 0, mx = 0;
  for (std::int64_t c : h.counts) {
    if (c == 0) continue;
    if (mn == 0 || c < mn) mn = c;
    if (c > mx) mx = c;
  }
  h.imbalance_ratio = (mn > 0) ? static_cast<double>(mx) / static_cast<double>(mn) : 1.0;
  return h;
}

}  // namespace

ClassHistogram class_distribution(const DatasetManifest& manifest) {
  return histogram_of(manifest, nullptr);
}

ClassHistogram class_distribution(const DatasetManifest& manifest,
                                  const std::vector<int>& subset) {
  return histogram_of(manifest, &subset);
}

void write_class_histogram(const std::string& path, const ClassHistogram& hist) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write histogram: " + path);
  out << "class,count\n";
  for (std::size_t i = 0; i < hist.classes.size(); ++i)
    out << hist.classes[i] << "," << hist.counts[i] << "\n";
}

bool read_ppm(const std::string& path, ImageU8& out, std::string& err) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    err = "cannot open " + path;
    return false;
  }
  auto next_token = [&](std::string& tok) {
    tok.clear();
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) return true;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return !tok.empty();
  };
  std::string magic, ws, hs, maxs;
  if (!next_token(magic) || magic != "P6") {
    err = path + ": not a P6 ppm";
    return false;
  }
  if (!next_token(ws) || !next_token(hs) || !next_token(maxs)) {
    err = path + ": truncated header";
    return false;
  }
  try {
    out.w = std::stoi(ws);
    out.h = std::stoi(hs);
    const int maxval = std::stoi(maxs);
    if (out.w <= 0 || out.h <= 0 || maxval != 255) {
      err = path + ": unsupported dimensions or depth";
      return false;
    }
  } catch (const std::exception&) {
    err = path + ": bad header value";
    return false;
  }
  const std::size_t expect = static_cast<std::size_t>(out.w) * out.h * 3;
  out.pix.resize(expect);
  in.read(reinterpret_cast<char*>(out.pix.data()), static_cast<std::streamsize>(expect));
  if (static_cast<std::size_t>(in.gcount()) != expect) {
    err = path + ": truncated pixel data";
    return false;
  }
  return true;
}

void write_ppm(const std::string& path, const ImageU8& img) {
  if (img.w <= 0 || img.h <= 0 ||
      img.pix.size() != static_cast<std::size_t>(img.w) * img.h * 3)
    throw std::invalid_argument("write_ppm: inconsistent image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pix.data()),
            static_cast<std::streamsize>(img.pix.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

ImageStore::ImageStore(const DatasetManifest& manifest, int image_size)
    : manifest_(manifest), size_(image_size) {
  if (image_size < 2) throw std::invalid_argument("ImageStore: image_size too small");
  cache_.resize(manifest.records.size());
  state_.assign(manifest.records.size(), 0);
}

const float* ImageStore::get(int record_index) {
  if (record_index < 0 || record_index >= static_cast<int>(cache_.size()))
    throw std::invalid_argument("ImageStore::get: record index out of range");
  const std::size_t i = static_cast<std::size_t>(record_index);
  if (state_[i] == 1) return cache_[i].data();
  if (state_[i] == -1) return nullptr;

  ImageU8 img;
  std::string err;
  const std::string full = join_path(manifest_.root, manifest_.records[i].path);
  if (!read_ppm(full, img, err)) {
    state_[i] = -1;
    ++skipped_;
    warnings_.push_back("skipping unreadable image: " + err);
    return nullptr;
  }
  // Interleaved bytes to planar [0,1] floats, then resize if needed.
  std::vector<float> planar(static_cast<std::size_t>(3) * img.h * img.w);
  const std::size_t hw = static_cast<std::size_t>(img.h) * img.w;
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c)
      planar[static_cast<std::size_t>(c) * hw + p] =
          static_cast<float>(img.pix[p * 3 + static_cast<std::size_t>(c)]) / 255.0f;
  if (img.h == size_ && img.w == size_) {
    cache_[i] = std::move(planar);
  } else {
    cache_[i].resize(static_cast<std::size_t>(3) * size_ * size_);
    kern::resize_bilinear(planar.data(), 3, img.h, img.w, cache_[i].data(), size_, size_);
  }
  state_[i] = 1;
  return cache_[i].data();
}

ChannelStats compute_channel_stats(ImageStore& store, const std::vector<int>& pool) {
  if (pool.empty()) throw std::invalid_argument("compute_channel_stats: empty pool");
  const int s = store.image_size();
  const std::size_t hw = static_cast<std::size_t>(s) * s;
  std::array<double, 3> sum = {0, 0, 0}, sumsq = {0, 0, 0};
  std::int64_t n_pix = 0;
  for (int rec : pool) {
    const float* img = store.get(rec);
    if (!img) continue;
    for (int c = 0; c < 3; ++c) {
      const float* plane = img + static_cast<std::size_t>(c) * hw;
      double a = 0, b = 0;
      for (std::size_t p = 0; p < hw; ++p) {
        a += plane[p];
        b += static_cast<double>(plane[p]) * plane[p];
      }
      sum[static_cast<std::size_t>(c)] += a;
      sumsq[static_cast<std::size_t>(c)] += b;
    }
    n_pix += static_cast<std::int64_t>(hw);
  }
  if (n_pix == 0)
    throw std::invalid_argument("compute_channel_stats: no readable images in pool");
  ChannelStats st;
  for (int c = 0; c < 3; ++c) {
    const std::size_t ci = static_cast<std::size_t>(c);
    st.mean[ci] = sum[ci] / static_cast<double>(n_pix);
    const double var = sumsq[ci] / static_cast<double>(n_pix) - st.mean[ci] * st.mean[ci];
    st.std[ci] = (var > 1e-12) ? std::sqrt(var) : 1.0;
  }
  return st;
}

namespace {
std::atomic<std::int64_t> g_masked_label_reads{0};
}

int Batch::label(std::size_t i) const {
  if (labels_masked) g_masked_label_reads.fetch_add(1, std::memory_order_relaxed);
  return labels_.at(i);
}

std::int64_t masked_label_reads() {
  return g_masked_label_reads.load(std::memory_order_relaxed);
}

void reset_masked_label_reads() { g_masked_label_reads.store(0, std::memory_order_relaxed); }

BatchCycler::BatchCycler(std::vector<int> pool, const BatchOptions& options,
                         const StreamFactory& seeds, std::string role)
    : pool_(std::move(pool)), options_(options), seeds_(seeds), role_(std::move(role)) {
  if (pool_.empty()) throw std::invalid_argument("BatchCycler: empty pool");
  if (options_.batch_size < 1) throw std::invalid_argument("BatchCycler: batch_size < 1");
  reshuffle();
}

int BatchCycler::batches_per_pass() const {
  const int n = static_cast<int>(pool_.size());
  if (options_.drop_last) return std::max(n / options_.batch_size, 1);
  return (n + options_.batch_size - 1) / options_.batch_size;
}

void BatchCycler::reshuffle() {
  order_ = pool_;
  if (options_.shuffle) {
    SeedStream stream = seeds_.make(role_, pass_);
    stream.shuffle(order_);
  }
  cursor_ = 0;
}

void BatchCycler::reset() {
  pass_ = 0;
  reshuffle();
}

std::vector<int> BatchCycler::next_indices() {
  std::size_t usable = order_.size();
  // drop_last trims the partial tail, but a pool smaller than one batch is
  // served whole rather than never.
  if (options_.drop_last && order_.size() >= static_cast<std::size_t>(options_.batch_size))
    usable = (order_.size() / static_cast<std::size_t>(options_.batch_size)) *
             static_cast<std::size_t>(options_.batch_size);
  if (cursor_ >= usable) {
    ++pass_;
    reshuffle();
  }
  const std::size_t take =
      std::min<std::size_t>(static_cast<std::size_t>(options_.batch_size), usable - cursor_);
  std::vector<int> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                       order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
  cursor_ += take;
  return out;
}

Batch assemble_batch(ImageStore& store, const std::vector<int>& indices,
                     const DatasetManifest& manifest, const ChannelStats& stats,
                     const BatchOptions& options, SeedStream& rng) {
  const int s = store.image_size();
  const std::size_t hw = static_cast<std::size_t>(s) * s;

  std::vector<const float*> srcs;
  std::vector<int> kept;
  srcs.reserve(indices.size());
  for (int rec : indices) {
    const float* img = store.get(rec);
    if (!img) continue;
    srcs.push_back(img);
    kept.push_back(rec);
  }

  Batch batch;
  batch.labels_masked = options.mask_labels;
  batch.indices = kept;
  batch.images.resize({static_cast<int>(kept.size()), 3, s, s});
  batch.raw_labels().resize(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i)
    batch.raw_labels()[i] =
        manifest.label_index(manifest.records[static_cast<std::size_t>(kept[i])].label);

  constexpr int kPad = 4;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    bool flip = false;
    int dy = kPad, dx = kPad;
    if (options.augment) {
      flip = rng.uniform() < 0.5;
      dy = static_cast<int>(rng.uniform_int(2 * kPad + 1));
      dx = static_cast<int>(rng.uniform_int(2 * kPad + 1));
    }
    float* dst = batch.images.data() + i * 3 * hw;
    const float* src = srcs[i];
    for (int c = 0; c < 3; ++c) {
      const double mean = stats.mean[static_cast<std::size_t>(c)];
      const double inv_std = 1.0 / stats.std[static_cast<std::size_t>(c)];
      const float* plane = src + static_cast<std::size_t>(c) * hw;
      float* out = dst + static_cast<std::size_t>(c) * hw;
      for (int y = 0; y < s; ++y) {
        const int sy = y + dy - kPad;
        for (int x = 0; x < s; ++x) {
          const int xx = flip ? (s - 1 - x) : x;
          const int sx = xx + dx - kPad;
          const float raw = (sy >= 0 && sy < s && sx >= 0 && sx < s)
                                ? plane[static_cast<std::size_t>(sy) * s + sx]
                                : 0.0f;
          out[static_cast<std::size_t>(y) * s + x] =
              static_cast<float>((raw - mean) * inv_std);
        }
      }
    }
  }
  return batch;
}

void normalize_batch(Tensor<float>& images, const ChannelStats& stats) {
  if (images.ndim() != 4 || images.dim(1) != 3)
    throw std::invalid_argument("normalize_batch: expected [n,3,h,w]");
  const std::size_t hw = static_cast<std::size_t>(images.dim(2)) * images.dim(3);
  for (int n = 0; n < images.dim(0); ++n)
    for (int c = 0; c < 3; ++c) {
      const float mean = static_cast<float>(stats.mean[static_cast<std::size_t>(c)]);
      const float inv = static_cast<float>(1.0 / stats.std[static_cast<std::size_t>(c)]);
      float* p = images.data() + (static_cast<std::size_t>(n) * 3 + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - mean) * inv;
    }
}

Tensor<float> augment_views(const Tensor<float>& batch, SeedStream& rng) {
  if (batch.ndim() != 4) throw std::invalid_argument("augment_views: expected a 4d batch");
  const int n = batch.dim(0), ch = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  constexpr int kPad = 4;
  Tensor<float> out({n, ch, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const bool flip = rng.uniform() < 0.5;
    const int dy = static_cast<int>(rng.uniform_int(2 * kPad + 1)) - kPad;
    const int dx = static_cast<int>(rng.uniform_int(2 * kPad + 1)) - kPad;
    for (int c = 0; c < ch; ++c) {
      const float* src = batch.data() + (static_cast<std::size_t>(i) * ch + c) * hw;
      float* dst = out.data() + (static_cast<std::size_t>(i) * ch + c) * hw;
      for (int y = 0; y < h; ++y) {
        const int sy = y + dy;
        for (int x = 0; x < w; ++x) {
          const int xx = flip ? (w - 1 - x) : x;
          const int sx = xx + dx;
          dst[static_cast<std::size_t>(y) * w + x] =
              (sy >= 0 && sy < h && sx >= 0 && sx < w)
                  ? src[static_cast<std::size_t>(sy) * w + sx]
                  : 0.0f;
        }
      }
    }
  }
  return out;
}

Tensor<float> one_hot_labels(const Batch& batch, int num_classes) {
  if (batch.labels_masked)
    throw std::logic_error("one_hot_labels: labels of this batch are masked");
  if (num_classes < 1) throw std::invalid_argument("one_hot_labels: bad class count");
  const int n = static_cast<int>(batch.raw_labels().size());
  Tensor<float> out({n, num_classes});
  out.zero();
  for (int i = 0; i < n; ++i) {
    const int c = batch.raw_labels()[static_cast<std::size_t>(i)];
    if (c < 0 || c >= num_classes)
      throw std::invalid_argument("one_hot_labels: label index out of range");
    out.at(i, c) = 1.0f;
  }
  return out;
}

}  // namespace enaet
