#include "amr/ablate.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "amr/metrics.hpp"

namespace fs = std::filesystem;

namespace amr {

const AblationRow* AblationResult::find(const std::string& label) const {
  for (const auto& r : rows)
    if (r.label == label) return &r;
  return nullptr;
}

namespace {

AblationRow evaluate_run(const std::string& label, Variant variant, int patch_n,
                         const Corpus& corpus,
                         const std::vector<VertebraResult>& results,
                         const TScoreRefs& refs) {
  AblationRow row;
  row.label = label;
  row.variant = variant;
  row.patch_n = patch_n;
  row.proposed = variant == Variant::kAttMultiRoi;
  double r_sum = 0, rmse_sum = 0, auc_sum = 0;
  int n = 0, n_auc = 0;
  for (const auto& vr : results) {
    const int v = vr.vertebra;
    std::vector<double> truth;
    for (int idx : vr.test_indices)
      truth.push_back(corpus.records[(size_t)idx].bmd[v]);
    row.present[(size_t)v] = true;
    row.r[(size_t)v] = pearson_r(vr.ensemble_pred, truth);
    row.rmse[(size_t)v] = rmse(vr.ensemble_pred, truth);
    std::vector<double> score(truth.size());
    std::vector<int> label_v(truth.size());
    for (size_t i = 0; i < truth.size(); ++i) {
      score[i] = -to_t_score(vr.ensemble_pred[i], v, refs);
      label_v[i] = to_t_score(truth[i], v, refs) < kOsteoporosisT ? 1 : 0;
    }
    try {
      row.auc[(size_t)v] = roc_auc(score, label_v);
      row.auc_defined[(size_t)v] = true;
      auc_sum += row.auc[(size_t)v];
      ++n_auc;
    } catch (const UsageError&) {
      row.auc_defined[(size_t)v] = false;
    }
    r_sum += row.r[(size_t)v];
    rmse_sum += row.rmse[(size_t)v];
    ++n;
  }
  if (n > 0) {
    row.r_avg = r_sum / n;
    row.rmse_avg = rmse_sum / n;
    row.auc_avg = n_auc ? auc_sum / n_auc : 0;
    row.avg_present = true;
  }
  return row;
}

}  // namespace

AblationResult run_ablation(const Corpus& corpus, const RunConfig& cfg,
                            const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);

  const RoiGeometry geo = RoiGeometry::from(cfg);
  const TrainConfig tcfg = TrainConfig::from(cfg);
  const TScoreRefs refs = TScoreRefs::from(cfg);
  const std::vector<int> all_vertebrae = {0, 1, 2, 3};

  AblationResult out;
  const Variant order[5] = {Variant::kBase, Variant::kMultiPatch,
                            Variant::kAttMultiPatch, Variant::kMultiRoi,
                            Variant::kAttMultiRoi};
  for (Variant variant : order) {
    ModelConfig mcfg = ModelConfig::from(cfg);
    mcfg.variant = variant;
    mcfg.validate();
    const std::string vdir = (fs::path(out_dir) / variant_name(variant)).string();
    const bool patch_variant = variant == Variant::kMultiPatch ||
                               variant == Variant::kAttMultiPatch;
    auto results = run_training(corpus, mcfg, geo, tcfg, all_vertebrae, vdir);
    out.rows.push_back(evaluate_run(variant_name(variant), variant,
                                    patch_variant ? mcfg.patch_n : 0, corpus,
                                    results, refs));
  }

  // patch-dimension sweep on one vertebra; the default grid size reuses the
  // main multi-patch run instead of retraining an identical model
  const int default_n = cfg.integer("model.patch_n");
  int sweep_vertebra = -1;
  const std::string sv = cfg.str("ablate.sweep_vertebra");
  for (int v = 0; v < kVertebrae; ++v)
    if (sv == vertebra_name(v)) sweep_vertebra = v;
  if (sweep_vertebra < 0)
    throw ConfigError("ablate.sweep_vertebra: expected l1..l4, got '" + sv + "'");

  for (int n : cfg.int_list("ablate.patch_sweep")) {
    const std::string label = strfmt("multipatch_n%d", n);
    if (n == default_n) {
      const AblationRow* main_row = out.find("multipatch");
      AblationRow row = *main_row;
      row.label = label;
      row.patch_n = n;
      out.rows.push_back(row);
      continue;
    }
    ModelConfig mcfg = ModelConfig::from(cfg);
    mcfg.variant = Variant::kMultiPatch;
    mcfg.patch_n = n;
    mcfg.validate();
    const std::string vdir = (fs::path(out_dir) / label).string();
    auto results = run_training(corpus, mcfg, geo, tcfg, {sweep_vertebra}, vdir);
    out.rows.push_back(evaluate_run(label, Variant::kMultiPatch, n, corpus,
                                    results, refs));
  }

  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0).count();
  write_ablation_csv(out, (fs::path(out_dir) / "ablation.csv").string());
  return out;
}

void write_ablation_csv(const AblationResult& result, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open ablation csv for writing: " + path);
  f << "variant,patch_n,proposed";
  for (int v = 0; v < kVertebrae; ++v) {
    const char* n = vertebra_name(v);
    f << ",r_" << n << ",rmse_" << n << ",auc_" << n;
  }
  f << ",r_avg,rmse_avg,auc_avg\n";
  for (const auto& row : result.rows) {
    f << row.label << ',';
    if (row.patch_n > 0) f << row.patch_n;
    f << ',' << (row.proposed ? 1 : 0);
    for (int v = 0; v < kVertebrae; ++v) {
      if (row.present[(size_t)v]) {
        f << strfmt(",%.6f,%.6f,", row.r[(size_t)v], row.rmse[(size_t)v]);
        if (row.auc_defined[(size_t)v])
          f << strfmt("%.6f", row.auc[(size_t)v]);
        else
          f << "undefined";
      } else {
        f << ",,,";
      }
    }
    if (row.avg_present)
      f << strfmt(",%.6f,%.6f,%.6f\n", row.r_avg, row.rmse_avg, row.auc_avg);
    else
      f << ",,,\n";
  }
  if (!f) throw IoError("short write on ablation csv: " + path);
}

}  // namespace amr
