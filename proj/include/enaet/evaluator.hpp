#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enaet/data.hpp"
#include "enaet/networks.hpp"

// Test-time metrics: top-1 accuracy, confusion matrix (rows = true class,
// columns = predicted), per-class precision/recall with explicit handling of
// empty denominators, and run comparison tables.

namespace enaet {

struct PerClassMetric {
  std::string cls;
  double precision = 0;  // valid only when precision_defined
  double recall = 0;
  bool precision_defined = false;
  bool recall_defined = false;
  std::int64_t support = 0;  // true-class count
};

struct MetricsReport {
  double top1_accuracy = 0;
  std::vector<std::vector<std::int64_t>> confusion;
  std::vector<PerClassMetric> per_class;
  std::int64_t num_samples = 0;
  // Means over the defined entries only.
  double macro_precision = 0;
  double macro_recall = 0;
};

// Argmax predictions with ties broken toward the lowest class index. The
// model's class count must match the manifest vocabulary.
MetricsReport evaluate(NetworkBundle<float>& model, ImageStore& store,
                       const DatasetManifest& manifest, const std::vector<int>& pool,
                       const ChannelStats& stats, int batch_size);

std::vector<PerClassMetric> per_class_metrics(
    const std::vector<std::vector<std::int64_t>>& confusion,
    const std::vector<std::string>& classes);

struct RunSummary {
  std::string name;
  double accuracy = 0;
  double portion = 1.0;  // labeled fraction of the training pool
};

// Rows sorted by descending accuracy; text table for the terminal.
std::string comparison_table(std::vector<RunSummary> rows);
void write_comparison_csv(const std::string& path, std::vector<RunSummary> rows);

void write_report_json(const std::string& path, const MetricsReport& report,
                       const std::vector<std::string>& classes);
void write_confusion_csv(const std::string& path, const MetricsReport& report,
                         const std::vector<std::string>& classes);
void write_per_class_csv(const std::string& path, const MetricsReport& report);

}  // namespace enaet
