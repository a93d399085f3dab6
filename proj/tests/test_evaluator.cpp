#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <sstream>

#include "enaet/evaluator.hpp"
#include "enaet/synth.hpp"
#include "enaet/transforms.hpp"

using namespace enaet;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  const std::string dir = (fs::temp_directory_path() / ("enaet_eval_" + tag)).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A small dataset plus a freshly initialized model over its vocabulary.
struct EvalFixture {
  EvalFixture(const std::string& tag, int count, std::uint64_t seed) {
    dir = temp_dir(tag);
    SynthOptions opt;
    opt.count = count;
    opt.image_size = 16;
    opt.seed = seed;
    manifest = load_manifest(generate_synthetic_dataset(dir, opt));
    store = std::make_unique<ImageStore>(manifest, 16);
    for (int i = 0; i < static_cast<int>(manifest.records.size()); ++i) pool.push_back(i);
    stats = compute_channel_stats(*store, pool);
    std::vector<int> counts;
    for (TransformFamily fam : kAllFamilies) counts.push_back(param_count(fam));
    SeedStream init(seed);
    build_networks(static_cast<int>(manifest.vocabulary.size()), counts, 1, 10, 8, init,
                   bundle, teacher);
  }

  std::string dir;
  DatasetManifest manifest;
  std::unique_ptr<ImageStore> store;
  std::vector<int> pool;
  ChannelStats stats;
  NetworkBundle<float> bundle;
  TeacherState<float> teacher;
};

}  // namespace

TEST_CASE("per-class metrics on the worked confusion fixture") {
  std::vector<std::vector<std::int64_t>> m = {{3, 1}, {2, 4}};
  auto pc = per_class_metrics(m, {"a", "b"});
  REQUIRE(pc.size() == 2);
  CHECK(pc[0].precision_defined);
  CHECK(pc[0].recall_defined);
  CHECK(pc[0].precision == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(pc[0].recall == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(pc[1].precision == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(pc[1].recall == doctest::Approx(2.0 / 3.0).epsilon(1e-3));
  CHECK(pc[0].support == 4);
  CHECK(pc[1].support == 6);
}

TEST_CASE("empty rows and columns yield undefined markers, not zeros") {
  // Class b never predicted, class c never appears.
  std::vector<std::vector<std::int64_t>> m = {{2, 0, 0}, {3, 0, 0}, {0, 0, 0}};
  auto pc = per_class_metrics(m, {"a", "b", "c"});
  CHECK(pc[0].precision_defined);
  CHECK(pc[0].precision == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(pc[0].recall == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(pc[1].precision_defined);
  CHECK(pc[1].recall_defined);
  CHECK(pc[1].recall == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(pc[2].precision_defined);
  CHECK_FALSE(pc[2].recall_defined);
}

TEST_CASE("per-class metrics validate their input") {
  CHECK_THROWS_AS(per_class_metrics({{1, 2}, {3}}, {"a", "b"}), std::invalid_argument);
  CHECK_THROWS_AS(per_class_metrics({{1, -2}, {3, 4}}, {"a", "b"}), std::invalid_argument);
  CHECK_THROWS_AS(per_class_metrics({{1, 2}}, {"a", "b"}), std::invalid_argument);
}

TEST_CASE("evaluation accuracy equals the confusion trace over the total") {
  EvalFixture fx("trace", 120, 17);
  MetricsReport r = evaluate(fx.bundle, *fx.store, fx.manifest, fx.pool, fx.stats, 32);
  REQUIRE(r.num_samples == 120);
  std::int64_t trace = 0, total = 0;
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    trace += r.confusion[i][i];
    for (std::int64_t v : r.confusion[i]) total += v;
  }
  CHECK(total == r.num_samples);
  CHECK(r.top1_accuracy ==
        doctest::Approx(static_cast<double>(trace) / static_cast<double>(total))
            .epsilon(1e-12));
  // Supports line up with the true-class histogram: balanced round robin.
  for (const PerClassMetric& pc : r.per_class) CHECK(pc.support == 12);
}

TEST_CASE("evaluation is deterministic") {
  EvalFixture fx("det", 60, 3);
  MetricsReport a = evaluate(fx.bundle, *fx.store, fx.manifest, fx.pool, fx.stats, 16);
  MetricsReport b = evaluate(fx.bundle, *fx.store, fx.manifest, fx.pool, fx.stats, 16);
  CHECK(a.top1_accuracy == b.top1_accuracy);
  CHECK(a.confusion == b.confusion);
  // Batch size must not change predictions: running statistics, no batch
  // coupling at eval time.
  MetricsReport c = evaluate(fx.bundle, *fx.store, fx.manifest, fx.pool, fx.stats, 7);
  CHECK(a.confusion == c.confusion);
}

TEST_CASE("tied logits resolve to the lowest class index") {
  EvalFixture fx("ties", 40, 5);
  // Zeroing the final linear layer makes every logit identical.
  for (ParamRef<float>& p : trainable_params(fx.bundle)) {
    if (p.name == "classifier.fc.w" || p.name == "classifier.fc.b") p.value->zero();
  }
  MetricsReport r = evaluate(fx.bundle, *fx.store, fx.manifest, fx.pool, fx.stats, 16);
  std::int64_t first_col = 0;
  for (std::size_t i = 0; i < r.confusion.size(); ++i) first_col += r.confusion[i][0];
  CHECK(first_col == r.num_samples);
  // Only class 0 was ever predicted: every other precision is undefined and
  // the macro means keep to the defined entries.
  for (std::size_t i = 1; i < r.per_class.size(); ++i)
    CHECK_FALSE(r.per_class[i].precision_defined);
  CHECK(r.per_class[0].precision_defined);
  CHECK(r.macro_precision == doctest::Approx(r.per_class[0].precision).epsilon(1e-12));
}

TEST_CASE("evaluation rejects a model whose width differs from the vocabulary") {
  EvalFixture fx("mismatch", 20, 9);
  NetworkBundle<float> small;
  TeacherState<float> teacher;
  std::vector<int> counts;
  for (TransformFamily fam : kAllFamilies) counts.push_back(param_count(fam));
  SeedStream init(1);
  build_networks(3, counts, 1, 10, 8, init, small, teacher);
  CHECK_THROWS_AS(evaluate(small, *fx.store, fx.manifest, fx.pool, fx.stats, 16),
                  std::invalid_argument);
  CHECK_THROWS_AS(evaluate(fx.bundle, *fx.store, fx.manifest, {}, fx.stats, 16),
                  std::invalid_argument);
  CHECK_THROWS_AS(evaluate(fx.bundle, *fx.store, fx.manifest, fx.pool, fx.stats, 0),
                  std::invalid_argument);
}

TEST_CASE("comparison table sorts by descending accuracy and shows the labeled share") {
  std::vector<RunSummary> rows = {
      {"small", 0.62, 0.1}, {"full", 0.91, 1.0}, {"half", 0.83, 0.5}};
  std::string table = comparison_table(rows);
  std::size_t p_full = table.find("full");
  std::size_t p_half = table.find("half");
  std::size_t p_small = table.find("small");
  REQUIRE(p_full != std::string::npos);
  REQUIRE(p_half != std::string::npos);
  REQUIRE(p_small != std::string::npos);
  CHECK(p_full < p_half);
  CHECK(p_half < p_small);
  CHECK(table.find("10") != std::string::npos);   // 0.1 -> 10 percent labeled
  CHECK(table.find("100") != std::string::npos);  // 1.0 -> 100

  // Equal accuracies keep their input order.
  std::vector<RunSummary> tied = {{"first", 0.5, 1.0}, {"second", 0.5, 1.0}};
  std::string t2 = comparison_table(tied);
  CHECK(t2.find("first") < t2.find("second"));
}

TEST_CASE("report files round-trip the metrics") {
  EvalFixture fx("files", 40, 11);
  for (ParamRef<float>& p : trainable_params(fx.bundle)) {
    if (p.name == "classifier.fc.w" || p.name == "classifier.fc.b") p.value->zero();
  }
  MetricsReport r = evaluate(fx.bundle, *fx.store, fx.manifest, fx.pool, fx.stats, 16);

  const std::string jpath = fx.dir + "/report.json";
  write_report_json(jpath, r, fx.manifest.vocabulary);
  nlohmann::json j = nlohmann::json::parse(read_file(jpath));
  CHECK(j["top1_accuracy"].get<double>() == doctest::Approx(r.top1_accuracy).epsilon(1e-12));
  CHECK(j["num_samples"].get<std::int64_t>() == r.num_samples);
  REQUIRE(j["per_class"].size() == fx.manifest.vocabulary.size());
  // Undefined precision serializes as the explicit marker, not a number.
  bool saw_marker = false;
  for (const auto& e : j["per_class"])
    if (e["precision"].is_string() && e["precision"].get<std::string>() == "n/a")
      saw_marker = true;
  CHECK(saw_marker);

  const std::string cpath = fx.dir + "/confusion.csv";
  write_confusion_csv(cpath, r, fx.manifest.vocabulary);
  std::string conf = read_file(cpath);
  CHECK(conf.find(fx.manifest.vocabulary[0]) != std::string::npos);

  const std::string ppath = fx.dir + "/per_class.csv";
  write_per_class_csv(ppath, r);
  std::string pcsv = read_file(ppath);
  CHECK(pcsv.find("n/a") != std::string::npos);

  const std::string tpath = fx.dir + "/compare.csv";
  write_comparison_csv(tpath, {{"low", 0.5, 0.1}, {"high", 0.75, 1.0}});
  std::string tcsv = read_file(tpath);
  CHECK(tcsv.find("\nhigh,") < tcsv.find("\nlow,"));
}
