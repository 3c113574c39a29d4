#include "nesyrs/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace nesyrs {

double ece(const std::vector<PredictionRecord>& records, int bins) {
  if (records.empty()) throw std::runtime_error("ece: empty record set");
  if (bins < 1) throw std::runtime_error("ece: need at least one bin");
  std::vector<double> conf(bins, 0.0), acc(bins, 0.0);
  std::vector<long> count(bins, 0);
  for (const auto& r : records) {
    // Bins are ((l-1)/M, l/M]; boundaries belong to the lower bin, 0 to bin 1.
    // The epsilon keeps exact boundaries in the lower bin despite rounding.
    int b = static_cast<int>(std::ceil(r.confidence * bins - 1e-9)) - 1;
    if (b < 0) b = 0;
    if (b >= bins) b = bins - 1;
    conf[b] += r.confidence;
    acc[b] += r.correct ? 1.0 : 0.0;
    count[b] += 1;
  }
  double n = static_cast<double>(records.size());
  double e = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    double c = count[b];
    e += (c / n) * std::abs(acc[b] / c - conf[b] / c);
  }
  return e;
}

double ece_concepts(const std::vector<PredictionRecord>& pooled, int bins) {
  return ece(pooled, bins);
}

double mece(const std::vector<double>& per_component) {
  if (per_component.empty()) throw std::runtime_error("mece: empty list");
  double s = 0.0;
  for (double v : per_component) s += v;
  return s / static_cast<double>(per_component.size());
}

double ova_entropy(const std::vector<double>& probs) {
  if (probs.empty()) return 0.0;
  double s = 0.0;
  for (double p : probs) {
    double q = p;
    if (q < 1e-12) q = 1e-12;
    if (q > 1.0 - 1e-12) q = 1.0 - 1e-12;
    s -= q * std::log(q) + (1.0 - q) * std::log(1.0 - q);
  }
  return s / static_cast<double>(probs.size());
}

double accuracy(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::runtime_error("accuracy: empty record set");
  double c = 0.0;
  for (const auto& r : records) c += r.correct ? 1.0 : 0.0;
  return c / static_cast<double>(records.size());
}

double macro_f1(const std::vector<int>& predicted, const std::vector<int>& truth, int n_classes) {
  if (predicted.empty() || predicted.size() != truth.size())
    throw std::runtime_error("macro_f1: bad input");
  double total = 0.0;
  for (int k = 0; k < n_classes; ++k) {
    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < predicted.size(); ++i) {
      bool p = predicted[i] == k, t = truth[i] == k;
      if (p && t) ++tp;
      else if (p) ++fp;
      else if (t) ++fn;
    }
    double prec = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    double rec = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
    double f1 = (prec + rec) == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
    total += f1;
  }
  return total / static_cast<double>(n_classes);
}

}  // namespace nesyrs
