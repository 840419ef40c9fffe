#pragma once

#include <array>
#include <string>
#include <vector>

#include "amr/config.hpp"
#include "amr/datagen.hpp"
#include "amr/model.hpp"
#include "amr/records.hpp"
#include "amr/roi.hpp"

namespace amr {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 4e-4;
  double momentum = 0.0;  // plain SGD unless configured otherwise
  int epochs = 100;
  int batch = 8;
  double local_loss_weight = 1.0;
  int workers = 2;
  double aug_scale = 0.10;      // +- fraction
  double aug_rotate_deg = 5.0;  // +- degrees
  double aug_translate = 0.05;  // +- fraction of image size
  double aug_flip_prob = 0.5;
  uint64_t seed = 42;
  int folds = 4;
  double test_fraction = 0.2;

  static TrainConfig from(const RunConfig& cfg);
  void validate() const;
};

struct AugmentParams {
  double scale = 1.0;
  double rot = 0.0;  // radians
  double tx = 0.0, ty = 0.0;
  bool flip = false;
};

// Draw order is fixed (scale, rotation, translation, flip) so runs are
// reproducible from the stream state.
AugmentParams draw_augment(const TrainConfig& cfg, Rng& rng, int image_size);

// Applies flip first (exact mirror, swapping left/right landmark groups),
// then the affine about the image center. Landmarks transform jointly with
// the pixels and are re-clamped to bounds.
void apply_augment(const Image2D& img, const LandmarkSet& lm,
                   const AugmentParams& p, Image2D& out_img, LandmarkSet& out_lm);

// p <- p - lr * (g + wd * p); weight decay skips parameters flagged decay =
// false (norm scales, biases, token and positional embeddings). Momentum
// buffers are used only when momentum > 0.
void sgd_step(const std::vector<Parameter<float>*>& params, float lr, float wd,
              float momentum, std::vector<TensorData<float>>& velocity);

// Corpus loaded into memory (images + landmarks + labels).
struct Corpus {
  std::string dir;
  std::vector<PatientRecord> records;
  std::vector<Image2D> images;
  std::vector<LandmarkSet> landmarks;

  static Corpus load(const std::string& manifest_path);
  size_t size() const { return records.size(); }
};

// Stacked modality tensor for one sample under a given variant.
TensorData<float> make_modalities(const Image2D& img, const LandmarkSet& lm,
                                  const ModelConfig& mcfg,
                                  const RoiGeometry& geo);

struct FoldResult {
  int fold = 0;
  int best_epoch = 0;
  double best_val_rmse = 0;
  double best_val_r = 0;
  std::string checkpoint_path;
  std::vector<double> test_pred;       // aligned with the run's test indices
  std::vector<std::string> log_rows;   // "epoch,split,loss,rmse,r"
};

struct VertebraResult {
  int vertebra = 0;
  std::vector<FoldResult> folds;
  std::vector<double> ensemble_pred;   // mean of fold predictions
  std::vector<int> test_indices;       // into corpus.records
};

// Trains one (vertebra, fold) job: 3 folds train / 1 validates, best
// validation RMSE selects the checkpoint epoch, the held-out test set is
// predicted with the best parameters. Deterministic in (corpus, configs,
// seed). Throws NumericalError on divergence.
FoldResult train_fold(const Corpus& corpus, const std::vector<int>& trainval,
                      const std::vector<int>& fold_of, int fold,
                      const std::vector<int>& test_idx,
                      const TensorData<float>* test_modalities, int vertebra,
                      const ModelConfig& mcfg, const RoiGeometry& geo,
                      const TrainConfig& tcfg, const std::string& out_dir);

// Runs folds x vertebrae jobs (parallel up to cfg.workers), writes per-
// vertebra train_log.csv and fold checkpoints under out_dir/<vertebra>/.
std::vector<VertebraResult> run_training(const Corpus& corpus,
                                         const ModelConfig& mcfg,
                                         const RoiGeometry& geo,
                                         const TrainConfig& tcfg,
                                         const std::vector<int>& vertebrae,
                                         const std::string& out_dir);

// Mean of the fold models' global predictions per test sample.
std::vector<double> ensemble_predict(const std::vector<FoldResult>& folds);

// Inference helper: global predictions for the given corpus indices.
std::vector<double> predict(Model<float>& m, const Corpus& corpus,
                            const std::vector<int>& indices,
                            const RoiGeometry& geo, int batch);

}  // namespace amr
