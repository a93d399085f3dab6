#include "enaet/evaluator.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace enaet {

MetricsReport evaluate(NetworkBundle<float>& model, ImageStore& store,
                       const DatasetManifest& manifest, const std::vector<int>& pool,
                       const ChannelStats& stats, int batch_size) {
  if (pool.empty()) throw std::invalid_argument("evaluate: empty split");
  const int num_classes = static_cast<int>(manifest.vocabulary.size());
  if (model.num_classes != num_classes)
    throw std::invalid_argument("evaluate: model has " + std::to_string(model.num_classes) +
                                " classes but the vocabulary has " +
                                std::to_string(num_classes));
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size < 1");

  MetricsReport report;
  report.confusion.assign(static_cast<std::size_t>(num_classes),
                          std::vector<std::int64_t>(static_cast<std::size_t>(num_classes), 0));

  BatchOptions opts;
  opts.batch_size = batch_size;
  opts.shuffle = false;
  SeedStream unused(0);
  for (std::size_t at = 0; at < pool.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                                   pool.size() - at);
    const std::vector<int> chunk(pool.begin() + static_cast<std::ptrdiff_t>(at),
                                 pool.begin() + static_cast<std::ptrdiff_t>(at + take));
    const Batch batch = assemble_batch(store, chunk, manifest, stats, opts, unused);
    if (batch.images.dim(0) == 0) continue;
    const ForwardResult<float> out = forward(model, batch.images, {}, false);
    for (int i = 0; i < batch.images.dim(0); ++i) {
      int pred = 0;
      for (int c = 1; c < num_classes; ++c)
        if (out.probs_orig.at(i, c) > out.probs_orig.at(i, pred)) pred = c;
      const int truth = batch.label(static_cast<std::size_t>(i));
      ++report.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
    }
  }

  std::int64_t total = 0, correct = 0;
  for (int t = 0; t < num_classes; ++t)
    for (int p = 0; p < num_classes; ++p) {
      total += report.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
      if (t == p)
        correct += report.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
  if (total == 0) throw std::runtime_error("evaluate: no readable images in split");
  report.num_samples = total;
  report.top1_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  report.per_class = per_class_metrics(report.confusion, manifest.vocabulary);

  int np = 0, nr = 0;
  for (const PerClassMetric& m : report.per_class) {
    if (m.precision_defined) {
      report.macro_precision += m.precision;
      ++np;
    }
    if (m.recall_defined) {
      report.macro_recall += m.recall;
      ++nr;
    }
  }
  if (np) report.macro_precision /= np;
  if (nr) report.macro_recall /= nr;
  return report;
}

std::vector<PerClassMetric> per_class_metrics(
    const std::vector<std::vector<std::int64_t>>& confusion,
    const std::vector<std::string>& classes) {
  const std::size_t n = confusion.size();
  if (n == 0) throw std::invalid_argument("per_class_metrics: empty matrix");
  for (const auto& row : confusion) {
    if (row.size() != n) throw std::invalid_argument("per_class_metrics: matrix not square");
    for (std::int64_t v : row)
      if (v < 0) throw std::invalid_argument("per_class_metrics: negative count");
  }
  if (!classes.empty() && classes.size() != n)
    throw std::invalid_argument("per_class_metrics: class list size mismatch");

  std::vector<PerClassMetric> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    PerClassMetric& m = out[c];
    m.cls = classes.empty() ? std::to_string(c) : classes[c];
    std::int64_t col = 0, row = 0;
    for (std::size_t i = 0; i < n; ++i) {
      col += confusion[i][c];
      row += confusion[c][i];
    }
    m.support = row;
    if (col > 0) {
      m.precision = static_cast<double>(confusion[c][c]) / static_cast<double>(col);
      m.precision_defined = true;
    }
    if (row > 0) {
      m.recall = static_cast<double>(confusion[c][c]) / static_cast<double>(row);
      m.recall_defined = true;
    }
  }
  return out;
}

namespace {

void sort_rows(std::vector<RunSummary>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const RunSummary& a, const RunSummary& b) {
    return a.accuracy > b.accuracy;
  });
}

}  // namespace

std::string comparison_table(std::vector<RunSummary> rows) {
  if (rows.empty()) throw std::invalid_argument("comparison_table: no runs");
  sort_rows(rows);
  std::size_t name_w = 3;
  for (const RunSummary& r : rows) name_w = std::max(name_w, r.name.size());
  std::ostringstream oss;
  oss << std::left << std::setw(static_cast<int>(name_w) + 2) << "run"
      << std::right << std::setw(10) << "accuracy" << std::setw(12) << "labeled%" << "\n";
  for (const RunSummary& r : rows) {
    oss << std::left << std::setw(static_cast<int>(name_w) + 2) << r.name << std::right
        << std::fixed << std::setprecision(4) << std::setw(10) << r.accuracy
        << std::setprecision(1) << std::setw(12) << (100.0 * r.portion) << "\n";
  }
  return oss.str();
}

void write_comparison_csv(const std::string& path, std::vector<RunSummary> rows) {
  if (rows.empty()) throw std::invalid_argument("write_comparison_csv: no runs");
  sort_rows(rows);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write comparison: " + path);
  out << "run,accuracy,labeled_percent\n";
  for (const RunSummary& r : rows)
    out << r.name << "," << std::setprecision(10) << r.accuracy << ","
        << (100.0 * r.portion) << "\n";
}

void write_report_json(const std::string& path, const MetricsReport& report,
                       const std::vector<std::string>& classes) {
  nlohmann::json j;
  j["top1_accuracy"] = report.top1_accuracy;
  j["num_samples"] = report.num_samples;
  j["macro_precision"] = report.macro_precision;
  j["macro_recall"] = report.macro_recall;
  j["classes"] = classes;
  j["confusion"] = report.confusion;
  nlohmann::json per = nlohmann::json::array();
  for (const PerClassMetric& m : report.per_class) {
    nlohmann::json row;
    row["class"] = m.cls;
    row["support"] = m.support;
    if (m.precision_defined)
      row["precision"] = m.precision;
    else
      row["precision"] = "n/a";
    if (m.recall_defined)
      row["recall"] = m.recall;
    else
      row["recall"] = "n/a";
    per.push_back(row);
  }
  j["per_class"] = per;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

void write_confusion_csv(const std::string& path, const MetricsReport& report,
                         const std::vector<std::string>& classes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write confusion: " + path);
  out << "true\\pred";
  for (const std::string& c : classes) out << "," << c;
  out << "\n";
  for (std::size_t t = 0; t < report.confusion.size(); ++t) {
    out << classes[t];
    for (std::int64_t v : report.confusion[t]) out << "," << v;
    out << "\n";
  }
}

void write_per_class_csv(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write per-class metrics: " + path);
  out << "class,precision,recall,support\n";
  out << std::setprecision(10);
  for (const PerClassMetric& m : report.per_class) {
    out << m.cls << ",";
    if (m.precision_defined)
      out << m.precision;
    else
      out << "n/a";
    out << ",";
    if (m.recall_defined)
      out << m.recall;
    else
      out << "n/a";
    out << "," << m.support << "\n";
  }
}

}  // namespace enaet
