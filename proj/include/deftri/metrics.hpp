#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "deftri/common.hpp"
#include "deftri/corpus.hpp"

namespace deftri {

using BitRow = std::vector<std::uint8_t>;

struct ConfusionCounts {
  std::vector<std::size_t> tp, fp, fn, tn;
  std::size_t num_samples = 0;

  std::size_t num_labels() const { return tp.size(); }
};

inline ConfusionCounts confusion(const std::vector<BitRow>& preds,
                                 const std::vector<BitRow>& truths) {
  if (preds.size() != truths.size())
    throw DataError("confusion: prediction/truth sample counts differ");
  if (preds.empty()) throw DataError("confusion: empty input");
  const std::size_t T = truths[0].size();
  ConfusionCounts c;
  c.num_samples = preds.size();
  c.tp.assign(T, 0);
  c.fp.assign(T, 0);
  c.fn.assign(T, 0);
  c.tn.assign(T, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != T || truths[i].size() != T)
      throw DataError("confusion: ragged label vectors");
    for (std::size_t t = 0; t < T; ++t) {
      const bool p = preds[i][t] != 0;
      const bool y = truths[i][t] != 0;
      if (p && y)
        ++c.tp[t];
      else if (p && !y)
        ++c.fp[t];
      else if (!p && y)
        ++c.fn[t];
      else
        ++c.tn[t];
    }
  }
  return c;
}

// Accuracy pooled over every (sample, label) cell:
// (sum TP + sum TN) / (sum FP + sum FN + sum TP + sum TN).
inline double accuracy(const ConfusionCounts& c) {
  if (c.num_labels() == 0 || c.num_samples == 0) throw DataError("accuracy: empty counts");
  std::size_t hits = 0;
  std::size_t total = 0;
  for (std::size_t t = 0; t < c.num_labels(); ++t) {
    hits += c.tp[t] + c.tn[t];
    total += c.tp[t] + c.tn[t] + c.fp[t] + c.fn[t];
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

inline double precision_at(const ConfusionCounts& c, std::size_t t) {
  const std::size_t denom = c.fp[t] + c.tp[t];
  return denom == 0 ? 0.0 : static_cast<double>(c.tp[t]) / static_cast<double>(denom);
}

inline double recall_at(const ConfusionCounts& c, std::size_t t) {
  const std::size_t denom = c.fn[t] + c.tp[t];
  return denom == 0 ? 0.0 : static_cast<double>(c.tp[t]) / static_cast<double>(denom);
}

// F1 as the harmonic mean of macro-averaged precision and macro-averaged
// recall. Note this is not the mean of per-label F1 scores; the two disagree
// in general, and this form is the contract here.
inline double macro_f1(const ConfusionCounts& c) {
  if (c.num_labels() == 0 || c.num_samples == 0) throw DataError("macro_f1: empty counts");
  double mean_p = 0.0;
  double mean_r = 0.0;
  for (std::size_t t = 0; t < c.num_labels(); ++t) {
    mean_p += precision_at(c, t);
    mean_r += recall_at(c, t);
  }
  mean_p /= static_cast<double>(c.num_labels());
  mean_r /= static_cast<double>(c.num_labels());
  if (mean_p + mean_r == 0.0) return 0.0;
  return 2.0 * (mean_p * mean_r) / (mean_p + mean_r);
}

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double threshold = 0.55;
  std::size_t n_samples = 0;
  ConfusionCounts counts;
  std::vector<std::string> label_names;
};

inline MetricsReport make_report(const ConfusionCounts& c, double threshold,
                                 const std::vector<std::string>& label_names) {
  MetricsReport report;
  report.counts = c;
  report.accuracy = accuracy(c);
  report.macro_f1 = macro_f1(c);
  report.threshold = threshold;
  report.n_samples = c.num_samples;
  report.label_names = label_names;
  return report;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["macro_f1"] = report.macro_f1;
  auto per_label = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < report.counts.num_labels(); ++t) {
    nlohmann::ordered_json row;
    row["label"] = t < report.label_names.size() ? report.label_names[t] : std::to_string(t);
    row["tp"] = report.counts.tp[t];
    row["fp"] = report.counts.fp[t];
    row["fn"] = report.counts.fn[t];
    row["tn"] = report.counts.tn[t];
    row["precision"] = precision_at(report.counts, t);
    row["recall"] = recall_at(report.counts, t);
    per_label.push_back(std::move(row));
  }
  j["per_label"] = std::move(per_label);
  j["threshold"] = report.threshold;
  j["n_samples"] = report.n_samples;
  return j;
}

// Gold labels as bit rows in registry order.
inline std::vector<BitRow> gold_bit_rows(const Dataset& ds) {
  std::vector<BitRow> rows;
  rows.reserve(ds.size());
  for (const auto& d : ds.defects) {
    BitRow row(ds.registry.size(), 0);
    for (const std::size_t t : d.labels) row[t] = 1;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace deftri
