#pragma once

#include <array>
#include <string>
#include <vector>

#include "amr/trainer.hpp"

namespace amr {

struct AblationRow {
  std::string label;
  Variant variant = Variant::kBase;
  int patch_n = 0;       // 0 when not a patch variant
  bool proposed = false; // flags the attentive multi-ROI row
  std::array<bool, kVertebrae> present = {false, false, false, false};
  std::array<double, kVertebrae> r{}, rmse{}, auc{};
  std::array<bool, kVertebrae> auc_defined = {false, false, false, false};
  double r_avg = 0, rmse_avg = 0, auc_avg = 0;
  bool avg_present = false;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  double seconds = 0;

  const AblationRow* find(const std::string& label) const;
};

// Trains and evaluates all five variants on every vertebra under one seed,
// then sweeps the patch grid dimension on one vertebra (the default grid
// reuses the main multi-patch run). Writes checkpoints and logs per variant
// under out_dir/<variant>/.
AblationResult run_ablation(const Corpus& corpus, const RunConfig& cfg,
                            const std::string& out_dir);

void write_ablation_csv(const AblationResult& result, const std::string& path);

}  // namespace amr
