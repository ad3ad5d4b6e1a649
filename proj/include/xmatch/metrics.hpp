#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmatch/data.hpp"

namespace xmatch {

// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked in
// order, ties counting one half. Computed from average ranks in
// O(n log n). Throws NumericError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Predictions are score >= threshold; F1 = 2PR / (P + R), 0 when TP = 0.
double f1_at_threshold(std::span<const double> scores, std::span<const int> labels,
                       double threshold);

struct BestF1 {
  double f1 = 0.0;
  double threshold = 0.0;
};

// Maximizes F1 over the distinct scores plus one threshold above all of
// them; ties resolve to the lowest threshold.
BestF1 best_f1(std::span<const double> scores, std::span<const int> labels);

struct EvalRow {
  std::string model;
  std::string dataset;
  double auc = 0.0;
  double f1_at_half = 0.0;
  double best_f1 = 0.0;
  double best_threshold = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

using PairScorer = std::function<double(const LabeledPair&)>;

// Scores every pair in order and computes all metrics. A single-class
// dataset raises NumericError naming the dataset.
EvalRow evaluate(const std::string& model_name, const std::string& dataset_name,
                 const std::vector<LabeledPair>& dataset, const PairScorer& scorer);

// Rows are models, columns are dataset x {AUC, F1@0.5, best F1}.
std::string format_report_table(const std::vector<EvalRow>& rows);
nlohmann::json report_json(const std::vector<EvalRow>& rows);

}  // namespace xmatch
