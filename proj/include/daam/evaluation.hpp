#pragma once

#include "daam/common.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <utility>

namespace daam {

/// Positive class is D (label 1).
struct ConfusionMatrix {
  int tp = 0, fp = 0, tn = 0, fn = 0;
  int total() const { return tp + fp + tn + fn; }
};

struct EvalReport {
  double f1_nd = 0, f1_d = 0;
  double macro_f1_mean = 0;  // headline: mean of the two per-class F1 scores
  double macro_f1_pr = 0;    // harmonic mean of macro precision and macro recall
  double balanced_accuracy = 0;
  double accuracy_nd = 0, accuracy_d = 0;  // per-class recall
  ConfusionMatrix confusion;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted);

/// Per-class F1 (ND, D). An undefined precision or recall (0/0) counts as 0
/// and emits a warning.
std::pair<double, double> f1_per_class(const ConfusionMatrix& cm);

double macro_f1_mean(double f1_nd, double f1_d);
/// (mean of per-class F1, harmonic mean of macro-averaged precision and recall).
std::pair<double, double> macro_f1(const ConfusionMatrix& cm);

/// Mean of per-class recalls; throws ValidationError if a class is absent
/// from the ground truth.
double balanced_accuracy(const ConfusionMatrix& cm);
double balanced_accuracy_from_recalls(double recall_nd, double recall_d);

/// All metrics. Balanced accuracy is reported as 0 with a warning when the
/// truth holds a single class.
EvalReport evaluate(std::span<const int> truth, std::span<const int> predicted);

nlohmann::json to_json(const EvalReport& r);
/// Aligned text table: Model | F1 (ND) | F1 (D) | F1 (Avg.) followed by the
/// confusion matrix and the remaining metrics.
std::string format_report(const EvalReport& r, const std::string& model_name);

/// Note on the two reference table rows whose averaged F1 is not the
/// arithmetic mean of their per-class scores.
std::string averaging_discrepancy_note();

}  // namespace daam
