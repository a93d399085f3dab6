#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "enaet/data.hpp"
#include "enaet/rng.hpp"

using namespace enaet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  fs::path dir = fs::path("data_test_tmp") / (tag + "_" + std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

ImageU8 constant_image(int w, int h, unsigned char r, unsigned char g, unsigned char b) {
  ImageU8 img;
  img.w = w;
  img.h = h;
  img.pix.resize(static_cast<std::size_t>(w) * h * 3);
  for (int p = 0; p < w * h; ++p) {
    img.pix[static_cast<std::size_t>(p) * 3 + 0] = r;
    img.pix[static_cast<std::size_t>(p) * 3 + 1] = g;
    img.pix[static_cast<std::size_t>(p) * 3 + 2] = b;
  }
  return img;
}

// A balanced synthetic manifest: `per_class` records in each of `classes`.
fs::path balanced_manifest(const fs::path& dir, int classes, int per_class) {
  std::string text = "path,label\n";
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i)
      text += "img_" + std::to_string(c) + "_" + std::to_string(i) + ".ppm,class" +
              std::to_string(c) + "\n";
  const fs::path path = dir / "manifest.csv";
  write_text(path, text);
  return path;
}

}  // namespace

TEST_CASE("manifest parsing collects records and vocabulary") {
  const fs::path dir = fresh_dir("manifest");
  write_text(dir / "m.csv",
             "path,label\n"
             "a.ppm,zebra\n"
             "b.ppm,ant\n"
             "c.ppm,zebra\n");
  const DatasetManifest m = load_manifest((dir / "m.csv").string());
  REQUIRE(m.records.size() == 3);
  CHECK(m.records[0].path == "a.ppm");
  CHECK(m.records[1].label == "ant");
  // Vocabulary is the sorted set of labels.
  REQUIRE(m.vocabulary.size() == 2);
  CHECK(m.vocabulary[0] == "ant");
  CHECK(m.vocabulary[1] == "zebra");
  CHECK(m.label_index("zebra") == 1);
  CHECK(m.label_index("missing") == -1);
  CHECK(m.root == dir.string());
}

TEST_CASE("manifest errors carry line numbers and paths") {
  const fs::path dir = fresh_dir("manifest_err");

  write_text(dir / "dup.csv", "path,label\na.ppm,x\na.ppm,y\n");
  try {
    load_manifest((dir / "dup.csv").string());
    FAIL("expected duplicate-path error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("a.ppm") != std::string::npos);
    CHECK(msg.find(":3:") != std::string::npos);
  }

  write_text(dir / "head.csv", "file;class\na.ppm,x\n");
  CHECK_THROWS_AS(load_manifest((dir / "head.csv").string()), std::runtime_error);

  write_text(dir / "cols.csv", "path,label\na.ppm,x,train,extra\n");
  try {
    load_manifest((dir / "cols.csv").string());
    FAIL("expected column-count error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  write_text(dir / "split.csv", "path,label,split\na.ppm,x,sideways\n");
  CHECK_THROWS_AS(load_manifest((dir / "split.csv").string()), std::runtime_error);

  CHECK_THROWS_AS(load_manifest((dir / "absent.csv").string()), std::runtime_error);
}

TEST_CASE("declared vocabulary pins class order and rejects strays") {
  const fs::path dir = fresh_dir("manifest_vocab");
  write_text(dir / "m.csv",
             "# vocabulary: dog, cat, bird\n"
             "path,label\n"
             "a.ppm,cat\n");
  const DatasetManifest m = load_manifest((dir / "m.csv").string());
  REQUIRE(m.vocabulary.size() == 3);
  CHECK(m.vocabulary[0] == "dog");
  CHECK(m.label_index("cat") == 1);

  write_text(dir / "bad.csv",
             "# vocabulary: dog, cat\n"
             "path,label\n"
             "a.ppm,fox\n");
  CHECK_THROWS_AS(load_manifest((dir / "bad.csv").string()), std::runtime_error);
}

TEST_CASE("stratified split matches the worked example") {
  const fs::path dir = fresh_dir("split_example");
  const DatasetManifest m = load_manifest(balanced_manifest(dir, 10, 100).string());

  // The whole pool trains; 8% labeled means exactly 8 per class.
  SplitFractions all_train{1.0, 0.0, 0.0};
  const SplitPlan plan = split_dataset(m, 0.08, all_train, 7);
  CHECK(plan.labeled_train.size() == 80);
  CHECK(plan.unlabeled_train.size() == 920);
  CHECK(plan.validation.empty());
  CHECK(plan.test.empty());

  std::vector<int> per_class(10, 0);
  for (int rec : plan.labeled_train)
    ++per_class[static_cast<std::size_t>(m.label_index(m.records[static_cast<std::size_t>(rec)].label))];
  for (int c : per_class) CHECK(c == 8);
}

TEST_CASE("split pools are disjoint, exhaustive and deterministic") {
  const fs::path dir = fresh_dir("split_props");
  const DatasetManifest m = load_manifest(balanced_manifest(dir, 5, 40).string());
  const SplitFractions f{0.7, 0.1, 0.2};

  const SplitPlan a = split_dataset(m, 0.1, f, 99);
  const SplitPlan b = split_dataset(m, 0.1, f, 99);
  const SplitPlan c = split_dataset(m, 0.1, f, 100);
  CHECK(a.labeled_train == b.labeled_train);
  CHECK(a.unlabeled_train == b.unlabeled_train);
  CHECK(a.validation == b.validation);
  CHECK(a.test == b.test);
  CHECK(a.labeled_train != c.labeled_train);

  std::set<int> seen;
  for (const auto* pool : {&a.labeled_train, &a.unlabeled_train, &a.validation, &a.test})
    for (int rec : *pool) CHECK(seen.insert(rec).second);
  CHECK(seen.size() == m.records.size());

  // Per class: 40 -> 8 test, 4 val, 28 train, ceil(2.8) = 3 labeled.
  std::vector<int> labeled(5, 0), test_n(5, 0), val_n(5, 0);
  auto cls = [&](int rec) {
    return m.label_index(m.records[static_cast<std::size_t>(rec)].label);
  };
  for (int rec : a.labeled_train) ++labeled[static_cast<std::size_t>(cls(rec))];
  for (int rec : a.test) ++test_n[static_cast<std::size_t>(cls(rec))];
  for (int rec : a.validation) ++val_n[static_cast<std::size_t>(cls(rec))];
  for (int v : labeled) CHECK(v == 3);
  for (int v : test_n) CHECK(v == 8);
  for (int v : val_n) CHECK(v == 4);
}

TEST_CASE("split honors hints, the per-class minimum and full portion") {
  const fs::path dir = fresh_dir("split_edges");
  write_text(dir / "m.csv",
             "path,label,split\n"
             "t0.ppm,a,test\n"
             "t1.ppm,a,\n"
             "t2.ppm,a,\n"
             "t3.ppm,a,\n"
             "v0.ppm,b,val\n"
             "u0.ppm,b,train\n"
             "u1.ppm,b,\n");
  const DatasetManifest m = load_manifest((dir / "m.csv").string());
  const SplitPlan plan = split_dataset(m, 0.01, SplitFractions{1.0, 0.0, 0.0}, 3);
  // Hinted records stay pinned.
  CHECK(std::find(plan.test.begin(), plan.test.end(), 0) != plan.test.end());
  CHECK(std::find(plan.validation.begin(), plan.validation.end(), 4) !=
        plan.validation.end());
  // Tiny portion still labels at least one record per class.
  std::vector<int> labeled(2, 0);
  for (int rec : plan.labeled_train)
    ++labeled[static_cast<std::size_t>(
        m.label_index(m.records[static_cast<std::size_t>(rec)].label))];
  CHECK(labeled[0] == 1);
  CHECK(labeled[1] == 1);

  // Portion 1 leaves nothing unlabeled.
  const SplitPlan full = split_dataset(m, 1.0, SplitFractions{1.0, 0.0, 0.0}, 3);
  CHECK(full.unlabeled_train.empty());
  CHECK(full.labeled_train.size() + full.validation.size() + full.test.size() ==
        m.records.size());
}

TEST_CASE("split validates inputs and warns on empty classes") {
  const fs::path dir = fresh_dir("split_invalid");
  write_text(dir / "m.csv",
             "# vocabulary: present, ghost\n"
             "path,label\n"
             "a.ppm,present\n"
             "b.ppm,present\n");
  const DatasetManifest m = load_manifest((dir / "m.csv").string());
  CHECK_THROWS_AS(split_dataset(m, 0.0, SplitFractions{}, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(m, 1.5, SplitFractions{}, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(m, 0.5, SplitFractions{0.5, 0.1, 0.2}, 1),
                  std::invalid_argument);

  const SplitPlan plan = split_dataset(m, 0.5, SplitFractions{1.0, 0.0, 0.0}, 1);
  REQUIRE(plan.warnings.size() == 1);
  CHECK(plan.warnings[0].find("ghost") != std::string::npos);
}

TEST_CASE("stratification holds over random manifests") {
  SeedStream rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const fs::path dir = fresh_dir("split_prop");
    const int classes = 2 + static_cast<int>(rng.uniform_int(5));
    std::string text = "path,label\n";
    std::vector<int> sizes;
    for (int c = 0; c < classes; ++c) {
      const int n = 1 + static_cast<int>(rng.uniform_int(30));
      sizes.push_back(n);
      for (int i = 0; i < n; ++i)
        text += "r" + std::to_string(c) + "_" + std::to_string(i) + ".ppm,c" +
                std::to_string(c) + "\n";
    }
    write_text(dir / "m.csv", text);
    const DatasetManifest m = load_manifest((dir / "m.csv").string());
    const double portion = 0.05 + 0.9 * rng.uniform();
    const SplitPlan plan =
        split_dataset(m, portion, SplitFractions{0.6, 0.2, 0.2}, rng.uniform_int(1 << 20));

    std::set<int> seen;
    for (const auto* pool :
         {&plan.labeled_train, &plan.unlabeled_train, &plan.validation, &plan.test})
      for (int rec : *pool) CHECK(seen.insert(rec).second);
    CHECK(seen.size() == m.records.size());

    std::vector<int> train_n(static_cast<std::size_t>(classes), 0);
    std::vector<int> labeled_n(static_cast<std::size_t>(classes), 0);
    auto cls = [&](int rec) {
      return m.label_index(m.records[static_cast<std::size_t>(rec)].label);
    };
    for (int rec : plan.labeled_train) {
      ++train_n[static_cast<std::size_t>(cls(rec))];
      ++labeled_n[static_cast<std::size_t>(cls(rec))];
    }
    for (int rec : plan.unlabeled_train) ++train_n[static_cast<std::size_t>(cls(rec))];
    for (int c = 0; c < classes; ++c) {
      const int nt = train_n[static_cast<std::size_t>(c)];
      if (nt == 0) continue;
      const int expect =
          std::min(nt, std::max(1, static_cast<int>(std::ceil(portion * nt - 1e-12))));
      CHECK(labeled_n[static_cast<std::size_t>(c)] == expect);
    }
  }
}

TEST_CASE("split file round-trips through disk") {
  const fs::path dir = fresh_dir("split_io");
  const DatasetManifest m = load_manifest(balanced_manifest(dir, 4, 25).string());
  const SplitPlan plan = split_dataset(m, 0.2, SplitFractions{0.7, 0.1, 0.2}, 55);

  const fs::path file = dir / "splits.csv";
  write_split_file(file.string(), m, plan);
  const SplitPlan back = read_split_file(file.string(), m);
  CHECK(back.labeled_train == plan.labeled_train);
  CHECK(back.unlabeled_train == plan.unlabeled_train);
  CHECK(back.validation == plan.validation);
  CHECK(back.test == plan.test);
  CHECK(back.portion == doctest::Approx(plan.portion).epsilon(1e-12));
  CHECK(back.seed == plan.seed);

  write_text(dir / "bad_path.csv", "path,assigned_split\nnot_there.ppm,test\n");
  CHECK_THROWS_AS(read_split_file((dir / "bad_path.csv").string(), m), std::runtime_error);
  write_text(dir / "bad_split.csv", "path,assigned_split\nimg_0_0.ppm,elsewhere\n");
  CHECK_THROWS_AS(read_split_file((dir / "bad_split.csv").string(), m), std::runtime_error);
}

TEST_CASE("class distribution counts exactly") {
  const fs::path dir = fresh_dir("hist");
  write_text(dir / "m.csv",
             "path,label\n"
             "a.ppm,big\nb.ppm,big\nc.ppm,big\nd.ppm,big\n"
             "e.ppm,small\n");
  const DatasetManifest m = load_manifest((dir / "m.csv").string());
  const ClassHistogram h = class_distribution(m);
  REQUIRE(h.classes.size() == 2);
  CHECK(h.counts[0] == 4);  // "big" sorts first
  CHECK(h.counts[1] == 1);
  CHECK(h.imbalance_ratio == doctest::Approx(4.0).epsilon(1e-12));

  const ClassHistogram sub = class_distribution(m, {0, 4});
  CHECK(sub.counts[0] == 1);
  CHECK(sub.counts[1] == 1);
  CHECK(sub.imbalance_ratio == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(class_distribution(m, std::vector<int>{}), std::invalid_argument);

  const fs::path out = dir / "hist.csv";
  write_class_histogram(out.string(), h);
  std::ifstream in(out);
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  CHECK(l1 == "class,count");
  CHECK(l2 == "big,4");
  CHECK(l3 == "small,1");
}

TEST_CASE("ppm io round-trips and rejects damage") {
  const fs::path dir = fresh_dir("ppm");
  ImageU8 img = constant_image(5, 3, 10, 128, 255);
  img.pix[7] = 42;
  const fs::path path = dir / "x.ppm";
  write_ppm(path.string(), img);

  ImageU8 back;
  std::string err;
  REQUIRE(read_ppm(path.string(), back, err));
  CHECK(back.w == 5);
  CHECK(back.h == 3);
  CHECK(back.pix == img.pix);

  write_text(dir / "trunc.ppm", "P6\n4 4\n255\nabc");
  CHECK_FALSE(read_ppm((dir / "trunc.ppm").string(), back, err));
  CHECK(err.find("trunc.ppm") != std::string::npos);

  write_text(dir / "wrong.ppm", "P5\n4 4\n255\n");
  CHECK_FALSE(read_ppm((dir / "wrong.ppm").string(), back, err));
  CHECK_FALSE(read_ppm((dir / "absent.ppm").string(), back, err));
}

TEST_CASE("image store scales, resizes and skips unreadables") {
  const fs::path dir = fresh_dir("store");
  write_ppm((dir / "small.ppm").string(), constant_image(4, 4, 51, 102, 204));
  write_ppm((dir / "big.ppm").string(), constant_image(8, 8, 51, 102, 204));
  write_text(dir / "m.csv",
             "path,label\n"
             "small.ppm,a\n"
             "big.ppm,a\n"
             "ghost.ppm,a\n");
  const DatasetManifest m = load_manifest((dir / "m.csv").string());
  ImageStore store(m, 4);

  const float* p = store.get(0);
  REQUIRE(p != nullptr);
  CHECK(p[0] == doctest::Approx(51.0 / 255.0).epsilon(1e-6));
  CHECK(p[16] == doctest::Approx(102.0 / 255.0).epsilon(1e-6));
  CHECK(p[32] == doctest::Approx(204.0 / 255.0).epsilon(1e-6));

  // A constant image stays constant through the resize.
  const float* q = store.get(1);
  REQUIRE(q != nullptr);
  for (int i = 0; i < 16; ++i) CHECK(q[i] == doctest::Approx(51.0 / 255.0).epsilon(1e-5));

  CHECK(store.get(2) == nullptr);
  CHECK(store.get(2) == nullptr);  // cached failure, still one warning
  CHECK(store.skipped() == 1);
  REQUIRE(store.warnings().size() == 1);
  CHECK(store.warnings()[0].find("ghost.ppm") != std::string::npos);
}

TEST_CASE("channel statistics normalize the pool to zero mean") {
  const fs::path dir = fresh_dir("stats");
  write_ppm((dir / "dark.ppm").string(), constant_image(4, 4, 0, 50, 100));
  write_ppm((dir / "light.ppm").string(), constant_image(4, 4, 100, 150, 200));
  write_text(dir / "m.csv", "path,label\ndark.ppm,a\nlight.ppm,a\n");
  const DatasetManifest m = load_manifest((dir / "m.csv").string());
  ImageStore store(m, 4);
  const std::vector<int> pool{0, 1};
  const ChannelStats stats = compute_channel_stats(store, pool);
  CHECK(stats.mean[0] == doctest::Approx(50.0 / 255.0).epsilon(1e-6));
  CHECK(stats.mean[1] == doctest::Approx(100.0 / 255.0).epsilon(1e-6));
  CHECK(stats.std[0] == doctest::Approx(50.0 / 255.0).epsilon(1e-5));

  // Renormalizing the pool with its own statistics centers every channel.
  SeedStream rng(5);
  BatchOptions opts;
  opts.batch_size = 2;
  opts.shuffle = false;
  const Batch batch = assemble_batch(store, pool, m, stats, opts, rng);
  for (int c = 0; c < 3; ++c) {
    double mean = 0;
    for (int n = 0; n < 2; ++n)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) mean += batch.images.at(n, c, y, x);
    mean /= 32.0;
    CHECK(std::abs(mean) < 0.05);
  }

  CHECK_THROWS_AS(compute_channel_stats(store, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("masked labels are guarded by the read counter") {
  const fs::path dir = fresh_dir("mask");
  write_ppm((dir / "a.ppm").string(), constant_image(4, 4, 9, 9, 9));
  write_text(dir / "m.csv", "path,label\na.ppm,only\n");
  const DatasetManifest m = load_manifest((dir / "m.csv").string());
  ImageStore store(m, 4);
  const ChannelStats stats;
  SeedStream rng(6);

  reset_masked_label_reads();
  BatchOptions open;
  open.batch_size = 1;
  Batch visible = assemble_batch(store, {0}, m, stats, open, rng);
  CHECK(visible.label(0) == 0);
  CHECK(masked_label_reads() == 0);

  BatchOptions hidden = open;
  hidden.mask_labels = true;
  Batch masked = assemble_batch(store, {0}, m, stats, hidden, rng);
  CHECK(masked_label_reads() == 0);
  masked.label(0);
  CHECK(masked_label_reads() == 1);
  CHECK_THROWS_AS(one_hot_labels(masked, 1), std::logic_error);
  reset_masked_label_reads();
  CHECK(masked_label_reads() == 0);
}

TEST_CASE("batch cycler covers the pool with the documented tail") {
  StreamFactory seeds(11);
  std::vector<int> pool(10);
  for (int i = 0; i < 10; ++i) pool[static_cast<std::size_t>(i)] = 100 + i;

  BatchOptions opts;
  opts.batch_size = 4;
  BatchCycler cycler(pool, opts, seeds, "labeled");
  CHECK(cycler.batches_per_pass() == 3);
  const auto b1 = cycler.next_indices();
  const auto b2 = cycler.next_indices();
  const auto b3 = cycler.next_indices();
  CHECK(b1.size() == 4);
  CHECK(b2.size() == 4);
  CHECK(b3.size() == 2);
  std::set<int> seen(b1.begin(), b1.end());
  seen.insert(b2.begin(), b2.end());
  seen.insert(b3.begin(), b3.end());
  CHECK(seen.size() == 10);

  // Identical configuration replays the identical sequence.
  BatchCycler again(pool, opts, seeds, "labeled");
  CHECK(again.next_indices() == b1);
  CHECK(again.next_indices() == b2);
  CHECK(again.next_indices() == b3);

  // The next pass reshuffles but still covers the pool.
  const auto c1 = cycler.next_indices();
  const auto c2 = cycler.next_indices();
  const auto c3 = cycler.next_indices();
  std::set<int> second(c1.begin(), c1.end());
  second.insert(c2.begin(), c2.end());
  second.insert(c3.begin(), c3.end());
  CHECK(second.size() == 10);

  BatchOptions dropped = opts;
  dropped.drop_last = true;
  BatchCycler trimmed(pool, dropped, seeds, "labeled");
  CHECK(trimmed.batches_per_pass() == 2);
  CHECK(trimmed.next_indices().size() == 4);
  CHECK(trimmed.next_indices().size() == 4);
  CHECK(trimmed.next_indices().size() == 4);  // wrapped into the next pass

  BatchOptions ordered = opts;
  ordered.shuffle = false;
  BatchCycler plain(pool, ordered, seeds, "eval");
  const auto e1 = plain.next_indices();
  CHECK(e1 == std::vector<int>({100, 101, 102, 103}));

  CHECK_THROWS_AS(BatchCycler({}, opts, seeds, "x"), std::invalid_argument);
}

TEST_CASE("augmentation is deterministic and zero-pads the border") {
  const fs::path dir = fresh_dir("augment");
  // A ramp image so shifts are visible.
  ImageU8 img;
  img.w = 8;
  img.h = 8;
  img.pix.resize(8 * 8 * 3);
  for (int p = 0; p < 64; ++p)
    for (int c = 0; c < 3; ++c)
      img.pix[static_cast<std::size_t>(p) * 3 + static_cast<std::size_t>(c)] =
          static_cast<unsigned char>(p * 3);
  write_ppm((dir / "ramp.ppm").string(), img);
  write_text(dir / "m.csv", "path,label\nramp.ppm,a\n");
  const DatasetManifest m = load_manifest((dir / "m.csv").string());
  ImageStore store(m, 8);
  const ChannelStats stats;  // identity normalization

  BatchOptions opts;
  opts.batch_size = 1;
  opts.augment = true;
  SeedStream r1(77), r2(77), r3(78);
  const Batch a = assemble_batch(store, {0}, m, stats, opts, r1);
  const Batch b = assemble_batch(store, {0}, m, stats, opts, r2);
  const Batch c = assemble_batch(store, {0}, m, stats, opts, r3);
  bool same_ab = true, same_ac = true;
  for (std::size_t i = 0; i < a.images.numel(); ++i) {
    same_ab = same_ab && a.images.data()[i] == b.images.data()[i];
    same_ac = same_ac && a.images.data()[i] == c.images.data()[i];
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);

  // Every augmented pixel is either a source pixel value or padding.
  std::set<int> source_values;
  for (int p = 0; p < 64; ++p) source_values.insert(p * 3);
  for (std::size_t i = 0; i < a.images.numel(); ++i) {
    const float v = a.images.data()[i];
    const int byte = static_cast<int>(std::lround(static_cast<double>(v) * 255.0));
    CHECK((v == 0.0f || source_values.count(byte) == 1));
  }
}
