#include "xmatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <cstdio>
#include <numeric>

#include "xmatch/error.hpp"

namespace xmatch {
namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error("scores and labels differ in length");
  for (int l : labels) {
    if (l != 0 && l != 1) throw Error("labels must be 0 or 1");
  }
}

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp == 0) return 0.0;
  const double t = static_cast<double>(tp);
  return 2.0 * t / (2.0 * t + static_cast<double>(fp) + static_cast<double>(fn));
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += static_cast<std::size_t>(l);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw NumericError("AUC is undefined without both positive and negative labels");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of doubled average ranks of the positives (ranks are 1-based), kept
  // in integers so the count is exact.
  std::uint64_t rank_sum_x2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t avg_rank_x2 = (i + 1) + j;  // 2 * mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum_x2 += avg_rank_x2;
    }
    i = j;
  }
  // U = R_pos - n_pos (n_pos + 1) / 2, doubled.
  const std::uint64_t u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
  return static_cast<double>(u_x2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double f1_at_threshold(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_lengths(scores, labels);
  if (scores.empty()) throw Error("F1 of an empty set");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted && labels[i] == 1) ++tp;
    if (predicted && labels[i] == 0) ++fp;
    if (!predicted && labels[i] == 1) ++fn;
  }
  return f1_from_counts(tp, fp, fn);
}

BestF1 best_f1(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  if (scores.empty()) throw Error("F1 of an empty set");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t total_pos = 0;
  for (int l : labels) total_pos += static_cast<std::size_t>(l);

  // Threshold above every score predicts nothing: F1 = 0.
  const double top = scores[order.front()];
  BestF1 best{0.0, std::nextafter(top, std::numeric_limits<double>::infinity())};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) ++tp; else ++fp;
      ++j;
    }
    const double f1 = f1_from_counts(tp, fp, total_pos - tp);
    // Thresholds are visited in decreasing order, so >= keeps the lowest.
    if (f1 >= best.f1) best = BestF1{f1, scores[order[i]]};
    i = j;
  }
  return best;
}

EvalRow evaluate(const std::string& model_name, const std::string& dataset_name,
                 const std::vector<LabeledPair>& dataset, const PairScorer& scorer) {
  if (dataset.empty()) throw NumericError("evaluation set \"" + dataset_name + "\" is empty");
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(dataset.size());
  labels.reserve(dataset.size());
  for (const LabeledPair& p : dataset) {
    scores.push_back(scorer(p));
    labels.push_back(p.label);
  }
  EvalRow row;
  row.model = model_name;
  row.dataset = dataset_name;
  for (int l : labels) (l == 1 ? row.n_pos : row.n_neg)++;
  if (row.n_pos == 0 || row.n_neg == 0) {
    throw NumericError("evaluation set \"" + dataset_name + "\" has a single class; AUC is undefined");
  }
  row.auc = roc_auc(scores, labels);
  row.f1_at_half = f1_at_threshold(scores, labels, 0.5);
  const BestF1 b = best_f1(scores, labels);
  row.best_f1 = b.f1;
  row.best_threshold = b.threshold;
  return row;
}

std::string format_report_table(const std::vector<EvalRow>& rows) {
  std::vector<std::string> models, datasets;
  for (const auto& r : rows) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
  }
  std::size_t name_w = 5;
  for (const auto& m : models) name_w = std::max(name_w, m.size());
  constexpr int kCol = 8;
  std::string out;
  char buf[64];
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  out += pad("", name_w);
  for (const auto& d : datasets) out += " | " + pad(d, 3 * kCol + 2);
  out += "\n" + pad("model", name_w);
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    std::snprintf(buf, sizeof buf, " | %-*s %-*s %-*s", kCol, "AUC", kCol, "F1@0.5", kCol, "bestF1");
    out += buf;
  }
  out += "\n" + std::string(name_w + datasets.size() * (3 * kCol + 5), '-') + "\n";
  for (const auto& m : models) {
    out += pad(m, name_w);
    for (const auto& d : datasets) {
      auto it = std::find_if(rows.begin(), rows.end(),
                             [&](const EvalRow& r) { return r.model == m && r.dataset == d; });
      if (it == rows.end()) {
        std::snprintf(buf, sizeof buf, " | %-*s %-*s %-*s", kCol, "-", kCol, "-", kCol, "-");
      } else {
        std::snprintf(buf, sizeof buf, " | %-*.4f %-*.4f %-*.4f", kCol, it->auc, kCol, it->f1_at_half,
                      kCol, it->best_f1);
      }
      out += buf;
    }
    out += "\n";
  }
  return out;
}

nlohmann::json report_json(const std::vector<EvalRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"model", r.model},
                   {"dataset", r.dataset},
                   {"auc", r.auc},
                   {"f1_at_0.5", r.f1_at_half},
                   {"best_f1", r.best_f1},
                   {"best_f1_threshold", r.best_threshold},
                   {"n_pos", r.n_pos},
                   {"n_neg", r.n_neg}});
  }
  return nlohmann::json{{"rows", arr}};
}

}  // namespace xmatch
