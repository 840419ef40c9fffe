#pragma once

#include <array>
#include <string>
#include <vector>

#include "amr/config.hpp"
#include "amr/records.hpp"

namespace amr {

// A rate that may be undefined when its stratum is empty (e.g. specificity
// with no negatives). Undefined is reported explicitly, never as zero.
struct Rate {
  double value = 0;
  bool defined = false;
  static Rate of(double v) { return {v, true}; }
  static Rate undefined() { return {0, false}; }
};

double pearson_r(const std::vector<double>& pred, const std::vector<double>& truth);
double rmse(const std::vector<double>& pred, const std::vector<double>& truth);

struct LinearFit {
  double slope = 0;      // A
  double intercept = 0;  // B
  double r2 = 0;
};
// Least squares of pred against truth (truth on the x axis).
LinearFit linear_fit(const std::vector<double>& pred,
                     const std::vector<double>& truth);

struct BlandAltman {
  double mean_diff = 0;
  double sd_diff = 0;  // sample SD (n-1)
  double lo = 0;       // mean - 1.96 SD
  double hi = 0;       // mean + 1.96 SD
  int outliers = 0;    // strictly outside [lo, hi]
};
BlandAltman bland_altman(const std::vector<double>& pred,
                         const std::vector<double>& truth);

struct TScoreRefs {
  std::array<double, kVertebrae> mean;
  std::array<double, kVertebrae> sd;
  static TScoreRefs from(const RunConfig& cfg);
};
double to_t_score(double bmd, int vertebra, const TScoreRefs& refs);

// Mann-Whitney AUC with half credit for ties: the probability that a random
// positive outranks a random negative. Throws if only one class is present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Midranks (1-based, ties averaged); shared by the AUC estimator and tests.
std::vector<double> midranks(const std::vector<double>& values);

// Per-vertebra prediction thresholds; ground truth uses T < -2.5 throughout.
struct ThresholdPolicy {
  std::string name;
  std::array<double, kVertebrae> thr;
};
// The unified single-value policies plus the per-vertebra flex policy.
std::vector<ThresholdPolicy> policies_from(const RunConfig& cfg);

constexpr double kOsteoporosisT = -2.5;  // ground-truth class boundary
constexpr double kOsteopeniaT = -1.0;    // normal / osteopenia boundary

struct SensSpec {
  Rate sens, spec;
};
// Positive = osteoporosis (truth T < -2.5); predicted positive iff the
// prediction T-score falls below the policy threshold for that vertebra.
SensSpec sens_spec(const std::vector<double>& pred_t,
                   const std::vector<double>& truth_t, double threshold);

struct PatientLevel {
  SensSpec osteoporosis;
  SensSpec osteopenia;
  int skipped = 0;  // patients without all four vertebra values
};
// Any-vertebra rule: a patient is osteoporotic when any vertebra crosses the
// (policy) threshold; osteopenic when none does but any T is below -1.
// Entries with NaN mark missing vertebra values; such patients are skipped.
PatientLevel patient_level(const std::vector<std::array<double, 4>>& pred_t,
                           const std::vector<std::array<double, 4>>& truth_t,
                           const ThresholdPolicy& policy);

}  // namespace amr
