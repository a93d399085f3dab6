#include <CLI11.hpp>
#include <omp.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "enaet/evaluator.hpp"
#include "enaet/synth.hpp"
#include "enaet/trainer.hpp"

// Command line front end. Exit codes: 0 success, 2 usage or input errors,
// 3 training aborted on a non-finite loss, 4 checkpoint/manifest vocabulary
// mismatch.

namespace fs = std::filesystem;
using namespace enaet;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kAborted = 3;
constexpr int kVocabulary = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VocabularyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ENAET_DEVICE selects the compute device: "cpu" or "cpu:<threads>".
void apply_device_env() {
  const char* dev = std::getenv("ENAET_DEVICE");
  if (!dev || !*dev) return;
  const std::string s = dev;
  if (s == "cpu") return;
  if (s.rfind("cpu:", 0) == 0) {
    char* end = nullptr;
    const long n = std::strtol(s.c_str() + 4, &end, 10);
    if (*end != '\0' || n < 1) throw UsageError("ENAET_DEVICE: bad thread count in '" + s + "'");
    omp_set_num_threads(static_cast<int>(n));
    return;
  }
  throw UsageError("ENAET_DEVICE: unsupported device '" + s + "' (cpu or cpu:<threads>)");
}

// Advisory lock on a run directory, removed when the command finishes.
class RunLock {
 public:
  RunLock(const std::string& dir, bool force) : path_((fs::path(dir) / ".lock").string()) {
    if (fs::exists(path_) && !force)
      throw UsageError("run directory busy: " + path_ + " exists (use --force to take over)");
    std::ofstream out(path_, std::ios::trunc);
    out << "locked\n";
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  std::string path_;
};

std::vector<std::string> checkpoint_vocabulary(const std::string& path) {
  Archive a = Archive::load(path);
  std::vector<std::string> out;
  std::stringstream ss(a.get_str("vocabulary"));
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

void require_vocabulary_match(const std::string& checkpoint, const DatasetManifest& manifest) {
  if (checkpoint_vocabulary(checkpoint) != manifest.vocabulary)
    throw VocabularyError("vocabulary mismatch between checkpoint " + checkpoint +
                          " and manifest under " + manifest.root);
}

SplitPlan plan_for(const DatasetManifest& manifest, const TrainConfig& cfg,
                   const std::string& splits_file) {
  if (!splits_file.empty()) return read_split_file(splits_file, manifest);
  return split_dataset(manifest, cfg.data_portion, SplitFractions{}, cfg.seed);
}

// ------------------------------------------------------------- subcommands ---

struct PrepareArgs {
  std::string out;
  int count = 6000;
  int image_size = 32;
  std::uint64_t seed = 7;
  bool force = false;
};

int run_prepare(const PrepareArgs& a) {
  const std::string manifest = (fs::path(a.out) / "manifest.csv").string();
  if (fs::exists(manifest) && !a.force)
    throw UsageError(manifest + " already exists (use --force to regenerate)");
  SynthOptions opt;
  opt.count = a.count;
  opt.image_size = a.image_size;
  opt.seed = a.seed;
  const std::string path = generate_synthetic_dataset(a.out, opt);
  std::cout << "wrote " << a.count << " images over " << kSynthClasses << " classes\n"
            << "manifest: " << path << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data, out, config, resume;
  std::optional<std::uint64_t> seed;
  std::optional<double> portion;
  std::optional<int> epochs;
  std::optional<std::string> mode;
  bool force = false;
};

int run_train(const TrainArgs& a) {
  DatasetManifest manifest = load_manifest(a.data);
  TrainConfig cfg;
  if (!a.resume.empty()) {
    if (!fs::exists(a.resume)) throw UsageError("checkpoint not found: " + a.resume);
    require_vocabulary_match(a.resume, manifest);
    cfg = checkpoint_config(a.resume);
  } else if (!a.config.empty()) {
    cfg = load_config(a.config);
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.portion) cfg.data_portion = *a.portion;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.mode) cfg.mode = *a.mode;
  cfg.validate();

  if (a.resume.empty() && !a.force &&
      fs::exists(fs::path(a.out) / "config.snapshot"))
    throw UsageError(a.out + " already holds a run (use --force to overwrite or --resume)");

  const std::string splits = (fs::path(a.out) / "splits.csv").string();
  SplitPlan plan =
      plan_for(manifest, cfg, !a.resume.empty() && fs::exists(splits) ? splits : "");
  for (const std::string& w : plan.warnings) std::cerr << "warning: " << w << "\n";

  fs::create_directories(a.out);
  RunLock lock(a.out, a.force);
  TrainingRun run = train(cfg, manifest, plan, a.out, a.resume);
  if (run.already_complete) {
    std::cout << "already complete: " << run.history.size() << " epochs trained\n";
    return kOk;
  }
  for (const EpochRecord& r : run.history)
    std::cout << "epoch " << r.epoch << "  loss " << r.mean_terms.l_total << "  val "
              << r.val_accuracy << "  (" << r.seconds << "s)\n";
  std::cout << "final checkpoint: " << run.final_checkpoint << "\n";
  if (run.best_epoch > 0) std::cout << "best epoch: " << run.best_epoch << "\n";
  return kOk;
}

struct EvaluateArgs {
  std::string data, checkpoint, out, split = "test", splits_file;
  int batch_size = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  DatasetManifest manifest = load_manifest(a.data);
  if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint not found: " + a.checkpoint);
  require_vocabulary_match(a.checkpoint, manifest);

  TrainerState st;
  load_checkpoint(a.checkpoint, st);
  SplitPlan plan = plan_for(manifest, st.config, a.splits_file);
  const std::vector<int>* pool = nullptr;
  if (a.split == "test") pool = &plan.test;
  else if (a.split == "val") pool = &plan.validation;
  else throw UsageError("--split must be test or val");
  if (pool->empty()) throw UsageError("the " + a.split + " split is empty");

  // The exponential-moving-average snapshot is the deployed model; the
  // supervised baseline has only its student.
  NetworkBundle<float>& net =
      st.config.mode == "supervised_baseline" ? st.student : st.teacher.net;
  ImageStore store(manifest, st.config.image_size);
  const int batch = a.batch_size > 0 ? a.batch_size : st.config.batch_size;
  MetricsReport report = evaluate(net, store, manifest, *pool, st.stats, batch);

  fs::create_directories(a.out);
  write_report_json((fs::path(a.out) / "report.json").string(), report, manifest.vocabulary);
  write_confusion_csv((fs::path(a.out) / "confusion.csv").string(), report,
                      manifest.vocabulary);
  write_per_class_csv((fs::path(a.out) / "per_class.csv").string(), report);
  std::cout << "samples: " << report.num_samples << "\n"
            << "top1 accuracy: " << report.top1_accuracy << "\n"
            << "macro precision: " << report.macro_precision << "\n"
            << "macro recall: " << report.macro_recall << "\n";
  return kOk;
}

struct CompareArgs {
  std::vector<std::string> runs;
  std::string csv;
};

int run_compare(const CompareArgs& a) {
  std::vector<RunSummary> rows;
  for (const std::string& dir : a.runs) {
    const std::string report_path = (fs::path(dir) / "report.json").string();
    const std::string config_path = (fs::path(dir) / "config.snapshot").string();
    if (!fs::exists(report_path))
      throw UsageError(report_path + " missing (evaluate the run with --out " + dir + " first)");
    if (!fs::exists(config_path)) throw UsageError(config_path + " missing");
    std::ifstream in(report_path);
    nlohmann::json j = nlohmann::json::parse(in);
    RunSummary row;
    row.name = fs::path(dir).filename().string();
    if (row.name.empty()) row.name = dir;
    row.accuracy = j.at("top1_accuracy").get<double>();
    row.portion = load_config(config_path).data_portion;
    rows.push_back(row);
  }
  std::cout << comparison_table(rows);
  if (!a.csv.empty()) write_comparison_csv(a.csv, rows);
  return kOk;
}

struct InspectArgs {
  std::string data, histogram_csv;
  bool check_images = false;
};

int run_inspect(const InspectArgs& a) {
  DatasetManifest manifest = load_manifest(a.data);
  ClassHistogram hist = class_distribution(manifest);
  std::cout << "records: " << manifest.records.size() << "\n"
            << "classes: " << manifest.vocabulary.size() << "\n";
  int hinted = 0;
  for (const ManifestRecord& r : manifest.records)
    if (!r.split_hint.empty()) ++hinted;
  std::cout << "split hints: " << hinted << "\n";
  for (std::size_t i = 0; i < hist.classes.size(); ++i)
    std::cout << "  " << hist.classes[i] << ": " << hist.counts[i] << "\n";
  std::cout << "imbalance ratio: " << hist.imbalance_ratio << "\n";
  if (a.check_images) {
    ImageStore store(manifest, 8);
    for (int i = 0; i < static_cast<int>(manifest.records.size()); ++i) store.get(i);
    std::cout << "unreadable images: " << store.skipped() << "\n";
    for (const std::string& w : store.warnings()) std::cerr << "warning: " << w << "\n";
  }
  if (!a.histogram_csv.empty()) write_class_histogram(a.histogram_csv, hist);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised image classification with transformation ensembles"};
  app.require_subcommand(1);

  PrepareArgs pa;
  CLI::App* prepare = app.add_subcommand("prepare", "generate the procedural glyph dataset");
  prepare->add_option("--out", pa.out, "dataset directory")->required();
  prepare->add_option("--count", pa.count, "number of images");
  prepare->add_option("--image-size", pa.image_size, "square image side");
  prepare->add_option("--seed", pa.seed, "generator seed");
  prepare->add_flag("--force", pa.force, "overwrite an existing dataset");

  TrainArgs ta;
  CLI::App* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--data", ta.data, "manifest csv")->required();
  tr->add_option("--out", ta.out, "run directory")->required();
  tr->add_option("--config", ta.config, "key=value config file");
  tr->add_option("--resume", ta.resume, "checkpoint to continue from");
  auto* t_seed = tr->add_option("--seed", "seed for every random choice");
  t_seed->type_name("UINT");
  auto* t_portion = tr->add_option("--portion", "labeled fraction of the train pool");
  t_portion->type_name("FLOAT");
  auto* t_epochs = tr->add_option("--epochs", "epoch budget");
  t_epochs->type_name("INT");
  auto* t_mode = tr->add_option("--mode", "enaet or supervised_baseline");
  t_mode->type_name("TEXT");
  tr->add_flag("--force", ta.force, "overwrite an existing run or take its lock");

  EvaluateArgs ea;
  CLI::App* ev = app.add_subcommand("evaluate", "score a checkpoint on a held-out split");
  ev->add_option("--data", ea.data, "manifest csv")->required();
  ev->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
  ev->add_option("--out", ea.out, "directory for report files")->required();
  ev->add_option("--split", ea.split, "test or val");
  ev->add_option("--splits", ea.splits_file, "splits.csv fixing the evaluation pools");
  ev->add_option("--batch-size", ea.batch_size, "evaluation batch size");

  CompareArgs ca;
  CLI::App* cmp = app.add_subcommand("compare", "rank evaluated runs by accuracy");
  cmp->add_option("runs", ca.runs, "run directories holding report.json")->required();
  cmp->add_option("--csv", ca.csv, "also write the table as csv");

  InspectArgs ia;
  CLI::App* ins = app.add_subcommand("inspect-data", "summarize a manifest");
  ins->add_option("--data", ia.data, "manifest csv")->required();
  ins->add_flag("--check-images", ia.check_images, "decode every image");
  ins->add_option("--histogram-csv", ia.histogram_csv, "write the class histogram");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    apply_device_env();
    if (*prepare) return run_prepare(pa);
    if (*tr) {
      if (t_seed->count()) ta.seed = t_seed->as<std::uint64_t>();
      if (t_portion->count()) ta.portion = t_portion->as<double>();
      if (t_epochs->count()) ta.epochs = t_epochs->as<int>();
      if (t_mode->count()) ta.mode = t_mode->as<std::string>();
      return run_train(ta);
    }
    if (*ev) return run_evaluate(ea);
    if (*cmp) return run_compare(ca);
    if (*ins) return run_inspect(ia);
  } catch (const TrainAbort& e) {
    std::cerr << e.what() << "\n"
              << "last finite checkpoint: " << e.checkpoint << "\n"
              << "report: " << e.report << "\n";
    return kAborted;
  } catch (const VocabularyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVocabulary;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
