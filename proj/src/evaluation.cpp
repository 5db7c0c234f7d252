#include "daam/evaluation.hpp"

#include <cstdio>
#include <sstream>

namespace daam {

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw ValidationError("confusion: " + std::to_string(truth.size()) + " labels vs " +
                          std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == 1, p = predicted[i] == 1;
    if (t && p) ++cm.tp;
    else if (!t && p) ++cm.fp;
    else if (!t && !p) ++cm.tn;
    else ++cm.fn;
  }
  return cm;
}

namespace {

double safe_ratio(int num, int den, const char* what) {
  if (den == 0) {
    log::warn(std::string(what) + " undefined (0/0), using 0");
    return 0.0;
  }
  return static_cast<double>(num) / den;
}

double f1(double precision, double recall) {
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

struct ClassRates {
  double precision_nd, recall_nd, precision_d, recall_d;
};

ClassRates rates(const ConfusionMatrix& cm) {
  return {safe_ratio(cm.tn, cm.tn + cm.fn, "ND precision"), safe_ratio(cm.tn, cm.tn + cm.fp, "ND recall"),
          safe_ratio(cm.tp, cm.tp + cm.fp, "D precision"), safe_ratio(cm.tp, cm.tp + cm.fn, "D recall")};
}

}  // namespace

std::pair<double, double> f1_per_class(const ConfusionMatrix& cm) {
  const ClassRates r = rates(cm);
  return {f1(r.precision_nd, r.recall_nd), f1(r.precision_d, r.recall_d)};
}

double macro_f1_mean(double f1_nd, double f1_d) { return (f1_nd + f1_d) / 2.0; }

std::pair<double, double> macro_f1(const ConfusionMatrix& cm) {
  const ClassRates r = rates(cm);
  const double mean = macro_f1_mean(f1(r.precision_nd, r.recall_nd), f1(r.precision_d, r.recall_d));
  const double p = (r.precision_nd + r.precision_d) / 2.0;
  const double rc = (r.recall_nd + r.recall_d) / 2.0;
  return {mean, f1(p, rc)};
}

double balanced_accuracy_from_recalls(double recall_nd, double recall_d) { return (recall_nd + recall_d) / 2.0; }

double balanced_accuracy(const ConfusionMatrix& cm) {
  if (cm.tn + cm.fp == 0 || cm.tp + cm.fn == 0) {
    throw ValidationError("balanced_accuracy: both classes must be present in the ground truth");
  }
  return balanced_accuracy_from_recalls(static_cast<double>(cm.tn) / (cm.tn + cm.fp),
                                        static_cast<double>(cm.tp) / (cm.tp + cm.fn));
}

EvalReport evaluate(std::span<const int> truth, std::span<const int> predicted) {
  EvalReport r;
  r.confusion = confusion(truth, predicted);
  const auto& cm = r.confusion;
  std::tie(r.f1_nd, r.f1_d) = f1_per_class(cm);
  std::tie(r.macro_f1_mean, r.macro_f1_pr) = macro_f1(cm);
  r.accuracy_nd = cm.tn + cm.fp ? static_cast<double>(cm.tn) / (cm.tn + cm.fp) : 0.0;
  r.accuracy_d = cm.tp + cm.fn ? static_cast<double>(cm.tp) / (cm.tp + cm.fn) : 0.0;
  if (cm.tn + cm.fp == 0 || cm.tp + cm.fn == 0) {
    log::warn("evaluate: ground truth holds a single class; balanced accuracy reported as 0");
  } else {
    r.balanced_accuracy = balanced_accuracy(cm);
  }
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"f1_nd", r.f1_nd},
          {"f1_d", r.f1_d},
          {"macro_f1_mean", r.macro_f1_mean},
          {"macro_f1_pr", r.macro_f1_pr},
          {"balanced_accuracy", r.balanced_accuracy},
          {"per_class_accuracy", {{"nd", r.accuracy_nd}, {"d", r.accuracy_d}}},
          {"confusion", {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}}}};
}

std::string format_report(const EvalReport& r, const std::string& model_name) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %8s %8s %10s\n", "Model", "F1 (ND)", "F1 (D)", "F1 (Avg.)");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-24s %8.4f %8.4f %10.4f\n", model_name.c_str(), r.f1_nd, r.f1_d, r.macro_f1_mean);
  out << buf << '\n';
  std::snprintf(buf, sizeof buf, "confusion (positive = D): tp=%d fp=%d tn=%d fn=%d\n", r.confusion.tp,
                r.confusion.fp, r.confusion.tn, r.confusion.fn);
  out << buf;
  std::snprintf(buf, sizeof buf, "macro F1 (P/R harmonic): %.4f\nbalanced accuracy: %.4f (ND %.4f, D %.4f)\n",
                r.macro_f1_pr, r.balanced_accuracy, r.accuracy_nd, r.accuracy_d);
  out << buf;
  return out.str();
}

std::string averaging_discrepancy_note() {
  return "note: reference rows (0.792, 0.615) -> 0.694 and (0.815, 0.643) -> 0.702 are not arithmetic means of "
         "their per-class F1 (0.7035 and 0.729); the averaging used for those rows cannot be recovered, so "
         "macro_f1_mean is reported as the plain mean";
}

}  // namespace daam
