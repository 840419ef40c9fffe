#pragma once

#include <array>
#include <string>
#include <vector>

#include "amr/metrics.hpp"

namespace amr {

// Ensemble predictions on the held-out test set, aligned by patient. NaN
// marks a vertebra without a trained model.
struct PredictionSet {
  std::vector<std::string> patient_ids;
  std::array<std::vector<double>, kVertebrae> pred_bmd;
  std::array<std::vector<double>, kVertebrae> truth_bmd;

  size_t size() const { return patient_ids.size(); }
  bool has_vertebra(int v) const;
};

struct VertebraEval {
  bool present = false;
  double r = 0, rmse = 0;
  LinearFit fit;
  BlandAltman ba;
  Rate auc;
  std::vector<std::pair<std::string, SensSpec>> per_policy;
};

struct EvalReport {
  std::array<VertebraEval, kVertebrae> vert;
  bool patient_present = false;
  std::vector<std::pair<std::string, PatientLevel>> patient;
};

EvalReport build_report(const PredictionSet& preds, const TScoreRefs& refs,
                        const std::vector<ThresholdPolicy>& policies);

// CSV with header "vertebra,metric,policy,value"; one row per metric;
// policy "-" for threshold-free metrics; undefined rates print "undefined".
void write_report_csv(const EvalReport& rep, const std::string& path);

// predictions.csv: per (patient, vertebra) truth/prediction pairs, both in
// BMD and T-score units. `report` re-derives thresholded metrics from it.
void write_predictions_csv(const PredictionSet& preds, const TScoreRefs& refs,
                           const std::string& path);
PredictionSet load_predictions_csv(const std::string& path);

// 2x2 panels (L1..L4): prediction vs ground truth with the least-squares
// line, and Bland-Altman with mean and +-1.96 SD limit lines.
void write_scatter_svg(const PredictionSet& preds, const EvalReport& rep,
                       const std::string& path);
void write_bland_altman_svg(const PredictionSet& preds, const EvalReport& rep,
                            const std::string& path);

}  // namespace amr
