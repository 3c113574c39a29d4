#pragma once

#include <vector>

namespace nesyrs {

/** One scored prediction: probability of the argmax class and correctness. */
struct PredictionRecord {
  double confidence = 0.0;  // probability of the predicted (argmax) class
  bool correct = false;
};

/**
 * Expected calibration error with M equal-width bins on (0,1].  Boundary
 * values go to the lower-indexed bin; confidence 0 goes to bin 1.
 */
double ece(const std::vector<PredictionRecord>& records, int bins);

/** ECE over concept records pooled across variables ("stacked"). */
double ece_concepts(const std::vector<PredictionRecord>& pooled, int bins);

/** Arithmetic mean of per-component ECEs. */
double mece(const std::vector<double>& per_component);

/** Mean one-vs-all binary entropy of the given event probabilities. */
double ova_entropy(const std::vector<double>& probs);

double accuracy(const std::vector<PredictionRecord>& records);

/** Macro-averaged F1 over the given class count; 0/0 ratios count as 0. */
double macro_f1(const std::vector<int>& predicted, const std::vector<int>& truth, int n_classes);

}  // namespace nesyrs
