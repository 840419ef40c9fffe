// Command-line front end: corpus generation, training, evaluation, variant
// ablation, gradient checking and report rendering, all driven by a flat
// key=value config and a single root seed.
//
// Exit codes: 0 success, 2 config/usage error, 3 I/O error, 4 numerical
// failure.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "amr/ablate.hpp"
#include "amr/datagen.hpp"
#include "amr/gradcheck_suite.hpp"
#include "amr/metrics.hpp"
#include "amr/report.hpp"
#include "amr/trainer.hpp"

namespace fs = std::filesystem;
using namespace amr;

namespace {

RunConfig resolve_config(const std::string& config_path,
                         const std::string& seed_override) {
  RunConfig cfg;
  if (!config_path.empty()) cfg.load_file(config_path);
  if (!seed_override.empty()) cfg.set("seed", seed_override);
  return cfg;
}

void require_out_dir(const std::string& out) {
  fs::path dir(out);
  if (dir.has_parent_path() && !dir.parent_path().empty() &&
      !fs::exists(dir.parent_path()))
    throw IoError("parent directory does not exist: " +
                  dir.parent_path().string());
  fs::create_directories(dir);
}

std::vector<int> parse_vertebrae(const std::string& arg) {
  if (arg == "all") return {0, 1, 2, 3};
  for (int v = 0; v < kVertebrae; ++v)
    if (arg == vertebra_name(v)) return {v};
  throw UsageError("--vertebra: expected l1, l2, l3, l4 or all, got '" + arg + "'");
}

int cmd_gen(const std::string& config, const std::string& seed,
            const std::string& out) {
  RunConfig cfg = resolve_config(config, seed);
  GenConfig gen = GenConfig::from(cfg);
  require_out_dir(out);
  const std::string manifest = generate_corpus(gen, out);
  cfg.save((fs::path(out) / "resolved.cfg").string());
  printf("wrote %s (%d patients)\n", manifest.c_str(), gen.n_patients);
  return 0;
}

int cmd_train(const std::string& config, const std::string& seed,
              const std::string& data, const std::string& out,
              const std::string& vertebra, const std::string& variant) {
  RunConfig cfg = resolve_config(config, seed);
  if (!variant.empty()) cfg.set("model.variant", variant);
  const std::vector<int> verts = parse_vertebrae(vertebra);
  require_out_dir(out);

  Corpus corpus = Corpus::load((fs::path(data) / "manifest.tsv").string());
  const ModelConfig mcfg = ModelConfig::from(cfg);
  const RoiGeometry geo = RoiGeometry::from(cfg);
  const TrainConfig tcfg = TrainConfig::from(cfg);

  auto results = run_training(corpus, mcfg, geo, tcfg, verts, out);
  cfg.save((fs::path(out) / "resolved.cfg").string());

  std::ofstream summary((fs::path(out) / "folds.csv").string());
  summary << "vertebra,fold,best_epoch,val_rmse,val_r,checkpoint\n";
  for (const auto& vr : results)
    for (const auto& fr : vr.folds)
      summary << strfmt("%s,%d,%d,%.6f,%.6f,%s\n", vertebra_name(vr.vertebra),
                        fr.fold, fr.best_epoch, fr.best_val_rmse, fr.best_val_r,
                        fr.checkpoint_path.c_str());
  for (const auto& vr : results)
    for (const auto& fr : vr.folds)
      printf("%s fold %d: best epoch %d, val rmse %.4f, val r %.4f\n",
             vertebra_name(vr.vertebra), fr.fold, fr.best_epoch,
             fr.best_val_rmse, fr.best_val_r);
  return 0;
}

int cmd_eval(const std::string& config, const std::string& seed,
             const std::string& ckpt, const std::string& data,
             const std::string& out, bool oracle) {
  std::string cfg_path = config;
  if (cfg_path.empty()) {
    cfg_path = (fs::path(ckpt) / "resolved.cfg").string();
    if (!fs::exists(cfg_path))
      throw UsageError("no --config given and no resolved.cfg under " + ckpt);
  }
  RunConfig cfg = resolve_config(cfg_path, seed);
  require_out_dir(out);

  Corpus corpus = Corpus::load((fs::path(data) / "manifest.tsv").string());
  const RoiGeometry geo = RoiGeometry::from(cfg);
  const TrainConfig tcfg = TrainConfig::from(cfg);
  const TScoreRefs refs = TScoreRefs::from(cfg);

  std::vector<int> trainval, test;
  split_test(corpus.records, tcfg.test_fraction, tcfg.seed, trainval, test);
  if (test.empty()) throw UsageError("eval: test split is empty");

  PredictionSet preds;
  for (int idx : test) preds.patient_ids.push_back(corpus.records[(size_t)idx].patient_id);
  for (int v = 0; v < kVertebrae; ++v) {
    preds.pred_bmd[(size_t)v].assign(test.size(), std::nan(""));
    preds.truth_bmd[(size_t)v].assign(test.size(), std::nan(""));
    for (size_t i = 0; i < test.size(); ++i)
      preds.truth_bmd[(size_t)v][i] = corpus.records[(size_t)test[i]].bmd[v];
  }

  if (oracle) {
    for (int v = 0; v < kVertebrae; ++v)
      preds.pred_bmd[(size_t)v] = preds.truth_bmd[(size_t)v];
  } else {
    bool any = false;
    for (int v = 0; v < kVertebrae; ++v) {
      const fs::path vdir = fs::path(ckpt) / vertebra_name(v);
      if (!fs::exists(vdir)) continue;
      std::vector<FoldResult> folds;
      for (int f = 0; f < tcfg.folds; ++f) {
        const fs::path path = vdir / strfmt("fold%d.ckpt", f);
        if (!fs::exists(path))
          throw UsageError("missing checkpoint: " + path.string());
        Model<float> m = load_checkpoint(path.string());
        FoldResult fr;
        fr.fold = f;
        fr.test_pred = predict(m, corpus, test, geo, tcfg.batch);
        folds.push_back(std::move(fr));
      }
      preds.pred_bmd[(size_t)v] = ensemble_predict(folds);
      any = true;
    }
    if (!any)
      throw UsageError("no per-vertebra checkpoint directories under " + ckpt);
  }

  EvalReport rep = build_report(preds, refs, policies_from(cfg));
  write_report_csv(rep, (fs::path(out) / "eval_report.csv").string());
  write_predictions_csv(preds, refs, (fs::path(out) / "predictions.csv").string());
  write_scatter_svg(preds, rep, (fs::path(out) / "scatter.svg").string());
  write_bland_altman_svg(preds, rep, (fs::path(out) / "bland_altman.svg").string());
  cfg.save((fs::path(out) / "resolved.cfg").string());

  for (int v = 0; v < kVertebrae; ++v)
    if (rep.vert[(size_t)v].present)
      printf("%s: r %.4f rmse %.4f auc %s\n", vertebra_name(v),
             rep.vert[(size_t)v].r, rep.vert[(size_t)v].rmse,
             rep.vert[(size_t)v].auc.defined
                 ? strfmt("%.4f", rep.vert[(size_t)v].auc.value).c_str()
                 : "undefined");
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& seed,
               const std::string& data, const std::string& out) {
  RunConfig cfg = resolve_config(config, seed);
  require_out_dir(out);
  Corpus corpus = Corpus::load((fs::path(data) / "manifest.tsv").string());
  AblationResult result = run_ablation(corpus, cfg, out);
  cfg.save((fs::path(out) / "resolved.cfg").string());
  printf("variant            patch  proposed   r_avg   rmse_avg  auc_avg\n");
  for (const auto& row : result.rows)
    printf("%-18s %5d  %8d  %6.4f  %8.4f  %7.4f\n", row.label.c_str(),
           row.patch_n, row.proposed ? 1 : 0, row.r_avg, row.rmse_avg,
           row.auc_avg);
  printf("ablation wall time: %.1f s\n", result.seconds);
  return 0;
}

int cmd_gradcheck(const std::string& corrupt, double tol,
                  const std::string& out) {
  debug::corrupt_backward() = corrupt;
  auto checks = gradcheck_suite(tol);
  debug::corrupt_backward().clear();
  bool all_pass = true;
  std::string lines;
  for (const auto& c : checks) {
    lines += strfmt("%-24s max_rel_err %.3e  %s\n", c.name.c_str(),
                    c.max_rel_err, c.pass ? "pass" : "FAIL");
    all_pass = all_pass && c.pass;
  }
  fputs(lines.c_str(), stdout);
  if (!out.empty()) {
    require_out_dir(out);
    std::ofstream f((fs::path(out) / "gradcheck.csv").string());
    f << "op,max_rel_err,pass\n";
    for (const auto& c : checks)
      f << strfmt("%s,%.9e,%d\n", c.name.c_str(), c.max_rel_err, c.pass ? 1 : 0);
  }
  if (!all_pass)
    throw NumericalError(corrupt.empty()
                             ? "gradient check failed"
                             : "gradient check failed (corrupt=" + corrupt + ")");
  return 0;
}

int cmd_report(const std::string& config, const std::string& seed,
               const std::string& predictions, const std::string& out) {
  RunConfig cfg = resolve_config(config, seed);
  require_out_dir(out);
  PredictionSet preds = load_predictions_csv(predictions);
  const TScoreRefs refs = TScoreRefs::from(cfg);
  EvalReport rep = build_report(preds, refs, policies_from(cfg));
  write_report_csv(rep, (fs::path(out) / "eval_report.csv").string());
  write_scatter_svg(preds, rep, (fs::path(out) / "scatter.svg").string());
  write_bland_altman_svg(preds, rep, (fs::path(out) / "bland_altman.svg").string());
  cfg.save((fs::path(out) / "resolved.cfg").string());
  printf("report rendered under %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anatomy-aware multi-ROI bone density estimation"};
  app.require_subcommand(1);

  std::string config, seed, out, data, ckpt, vertebra = "all", variant;
  std::string corrupt, predictions;
  bool oracle = false;
  double tol = 1e-4;

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  gen->add_option("--config", config);
  gen->add_option("--seed", seed);
  gen->add_option("--out", out)->required();

  auto* train = app.add_subcommand("train", "train 4-fold ensembles");
  train->add_option("--config", config);
  train->add_option("--seed", seed);
  train->add_option("--data", data)->required();
  train->add_option("--out", out)->required();
  train->add_option("--vertebra", vertebra);
  train->add_option("--variant", variant);

  auto* eval = app.add_subcommand("eval", "evaluate fold ensembles on the test split");
  eval->add_option("--config", config);
  eval->add_option("--seed", seed);
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--out", out)->required();
  eval->add_flag("--oracle", oracle, "substitute ground truth as predictions");

  auto* ablate = app.add_subcommand("ablate", "train and compare all model variants");
  ablate->add_option("--config", config);
  ablate->add_option("--seed", seed);
  ablate->add_option("--data", data)->required();
  ablate->add_option("--out", out)->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--corrupt", corrupt, "corrupt a named backward pass");
  gradcheck->add_option("--tol", tol);
  gradcheck->add_option("--out", out);

  auto* report = app.add_subcommand("report", "re-render reports from predictions.csv");
  report->add_option("--config", config)->required();
  report->add_option("--seed", seed);
  report->add_option("--predictions", predictions)->required();
  report->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(config, seed, out);
    if (train->parsed()) return cmd_train(config, seed, data, out, vertebra, variant);
    if (eval->parsed()) return cmd_eval(config, seed, ckpt, data, out, oracle);
    if (ablate->parsed()) return cmd_ablate(config, seed, data, out);
    if (gradcheck->parsed()) return cmd_gradcheck(corrupt, tol, out);
    if (report->parsed()) return cmd_report(config, seed, predictions, out);
  } catch (const ConfigError& e) {
    fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    fprintf(stderr, "i/o error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
