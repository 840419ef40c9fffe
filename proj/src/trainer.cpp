#include "amr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "amr/metrics.hpp"

namespace fs = std::filesystem;

namespace amr {

TrainConfig TrainConfig::from(const RunConfig& cfg) {
  TrainConfig t;
  t.lr = cfg.real("train.lr");
  t.weight_decay = cfg.real("train.weight_decay");
  t.momentum = cfg.real("train.momentum");
  t.epochs = cfg.integer("train.epochs");
  t.batch = cfg.integer("train.batch");
  t.local_loss_weight = cfg.real("train.local_loss_weight");
  t.workers = cfg.integer("train.workers");
  t.aug_scale = cfg.real("train.aug_scale");
  t.aug_rotate_deg = cfg.real("train.aug_rotate");
  t.aug_translate = cfg.real("train.aug_translate");
  t.aug_flip_prob = cfg.real("train.aug_flip_prob");
  t.seed = (uint64_t)cfg.integer("seed");
  t.folds = cfg.integer("data.folds");
  t.test_fraction = cfg.real("data.test_fraction");
  t.validate();
  return t;
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train.lr must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (workers < 1) throw ConfigError("train.workers must be >= 1");
  if (folds < 2) throw ConfigError("data.folds must be >= 2");
}

AugmentParams draw_augment(const TrainConfig& cfg, Rng& rng, int image_size) {
  AugmentParams p;
  p.scale = 1.0 + rng.uniform(-cfg.aug_scale, cfg.aug_scale);
  p.rot = rng.uniform(-cfg.aug_rotate_deg, cfg.aug_rotate_deg) * M_PI / 180.0;
  p.tx = rng.uniform(-cfg.aug_translate, cfg.aug_translate) * image_size;
  p.ty = rng.uniform(-cfg.aug_translate, cfg.aug_translate) * image_size;
  p.flip = rng.bernoulli(cfg.aug_flip_prob);
  return p;
}

void apply_augment(const Image2D& img, const LandmarkSet& lm,
                   const AugmentParams& p, Image2D& out_img,
                   LandmarkSet& out_lm) {
  const Image2D* src = &img;
  Image2D flipped;
  LandmarkSet lms = lm;
  if (p.flip) {
    flipped = Image2D(img.width, img.height, img.spacing);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        flipped.at(x, y) = img.at(img.width - 1 - x, y);
    lms = lm.flipped_horizontal(img.width);
    src = &flipped;
  }
  const bool identity_affine =
      p.scale == 1.0 && p.rot == 0.0 && p.tx == 0.0 && p.ty == 0.0;
  if (identity_affine) {
    out_img = *src;
    out_lm = lms;
    return;
  }
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  const double cs = std::cos(p.rot) * p.scale, sn = std::sin(p.rot) * p.scale;
  Affine2D a;
  a.a = cs;
  a.b = -sn;
  a.c = sn;
  a.d = cs;
  a.tx = cx + p.tx - (cs * cx - sn * cy);
  a.ty = cy + p.ty - (sn * cx + cs * cy);
  out_img = warp_affine(*src, a);
  for (int i = 0; i < LandmarkSet::kCount; ++i)
    a.apply(lms[i].x, lms[i].y, out_lm[i].x, out_lm[i].y);
  out_lm.clamp_to(img.width, img.height);
}

void sgd_step(const std::vector<Parameter<float>*>& params, float lr, float wd,
              float momentum, std::vector<TensorData<float>>& velocity) {
  if (momentum > 0 && velocity.size() != params.size()) {
    velocity.clear();
    for (auto* p : params) velocity.emplace_back(p->value.shape);
  }
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter<float>& p = *params[i];
    const float decay = p.decay ? wd : 0.f;
    if (momentum > 0) {
      auto& v = velocity[i];
      for (int64_t j = 0; j < p.value.size(); ++j) {
        v.v[j] = momentum * v.v[j] + p.grad.v[j] + decay * p.value.v[j];
        p.value.v[j] -= lr * v.v[j];
      }
    } else {
      for (int64_t j = 0; j < p.value.size(); ++j)
        p.value.v[j] -= lr * (p.grad.v[j] + decay * p.value.v[j]);
    }
  }
}

Corpus Corpus::load(const std::string& manifest_path) {
  Corpus c;
  c.records = load_manifest(manifest_path);
  c.dir = fs::path(manifest_path).parent_path().string();
  if (c.dir.empty()) c.dir = ".";
  c.images.reserve(c.records.size());
  c.landmarks.reserve(c.records.size());
  for (const auto& r : c.records) {
    c.images.push_back(load_image(c.dir + "/" + r.image_path));
    LandmarkSet lm = load_landmarks(c.dir + "/" + r.landmark_path);
    lm.validate(c.images.back().width, c.images.back().height);
    c.landmarks.push_back(lm);
  }
  return c;
}

TensorData<float> make_modalities(const Image2D& img, const LandmarkSet& lm,
                                  const ModelConfig& mcfg,
                                  const RoiGeometry& geo) {
  switch (mcfg.variant) {
    case Variant::kBase: {
      std::vector<RoiSpec> whole = {
          {"whole", 0, 0, (double)img.width, (double)img.height}};
      return sample_modalities<float>(img, whole, geo.crop_size, geo.std_eps);
    }
    case Variant::kMultiPatch:
    case Variant::kAttMultiPatch:
      return sample_modalities<float>(img, patch_boxes(img, mcfg.patch_n),
                                      geo.crop_size, geo.std_eps);
    case Variant::kMultiRoi:
    case Variant::kAttMultiRoi:
      return sample_modalities<float>(img, roi_boxes(img, lm, geo),
                                      geo.crop_size, geo.std_eps);
  }
  throw UsageError("make_modalities: bad variant");
}

namespace {

struct EpochStats {
  double loss = 0;
  std::vector<double> preds, targets;

  std::string row(int epoch, const std::string& split) const {
    double r = 0;
    try {
      r = pearson_r(preds, targets);
    } catch (const UsageError&) {
      r = 0;  // constant predictions early in training
    }
    return strfmt("%d,%s,%.6f,%.6f,%.6f", epoch, split.c_str(), loss,
                  rmse(preds, targets), r);
  }
};

// Stacks per-sample modality tensors into the (B*M, S, S) batch layout.
void fill_batch(TensorData<float>& dst, int slot, const TensorData<float>& mods) {
  const int64_t n = mods.size();
  std::copy_n(mods.v.data(), n, dst.v.data() + (size_t)slot * n);
}

}  // namespace

FoldResult train_fold(const Corpus& corpus, const std::vector<int>& trainval,
                      const std::vector<int>& fold_of, int fold,
                      const std::vector<int>& test_idx,
                      const TensorData<float>* test_modalities, int vertebra,
                      const ModelConfig& mcfg, const RoiGeometry& geo,
                      const TrainConfig& tcfg, const std::string& out_dir) {
  std::vector<int> train_set, val_set;
  for (size_t i = 0; i < trainval.size(); ++i)
    (fold_of[i] == fold ? val_set : train_set).push_back(trainval[i]);
  if (train_set.empty() || val_set.empty())
    throw UsageError("train_fold: empty train or validation split");

  Rng job_rng = Rng(tcfg.seed).child(0x5EED).child((uint64_t)vertebra * 16 +
                                                   (uint64_t)fold);
  Rng init_rng = job_rng.child(1);
  Rng shuffle_rng = job_rng.child(2);
  Rng aug_rng = job_rng.child(3);

  Model<float> model = init_model<float>(mcfg, init_rng.next_u64());
  auto params = model.parameters();
  std::vector<TensorData<float>> velocity;

  const int M = mcfg.modalities();
  const int S = mcfg.input_size;
  const float lw = (float)tcfg.local_loss_weight;

  // regression runs on standardized targets (the raw offset would dominate
  // early gradients); the affine is folded back into the output heads before
  // the checkpoint is written, so saved models emit BMD directly
  double tsum = 0, tsq = 0;
  for (int idx : train_set) tsum += corpus.records[(size_t)idx].bmd[vertebra];
  const double tmean = tsum / (double)train_set.size();
  for (int idx : train_set) {
    const double d = corpus.records[(size_t)idx].bmd[vertebra] - tmean;
    tsq += d * d;
  }
  const double tsd = std::max(1e-6, std::sqrt(tsq / (double)train_set.size()));
  auto std_target = [&](int idx) {
    return (float)((corpus.records[(size_t)idx].bmd[vertebra] - tmean) / tsd);
  };
  auto unstd = [&](double pred) { return pred * tsd + tmean; };

  // validation modalities never change (no augmentation outside training)
  TensorData<float> val_mods({(int)val_set.size() * M, S, S});
  for (size_t i = 0; i < val_set.size(); ++i)
    fill_batch(val_mods, (int)i, make_modalities(corpus.images[(size_t)val_set[i]],
                                                 corpus.landmarks[(size_t)val_set[i]],
                                                 mcfg, geo));

  auto eval_split = [&](const TensorData<float>& mods,
                        const std::vector<int>& idx, EpochStats& stats) {
    stats = EpochStats();
    double loss_sum = 0;
    int batches = 0;
    for (size_t start = 0; start < idx.size(); start += (size_t)tcfg.batch) {
      const int bs = (int)std::min((size_t)tcfg.batch, idx.size() - start);
      TensorData<float> mb({bs * M, S, S});
      std::copy_n(mods.v.data() + start * (size_t)M * S * S,
                  (size_t)bs * M * S * S, mb.v.data());
      TensorData<float> tgt({bs, 1});
      for (int b = 0; b < bs; ++b)
        tgt.v[(size_t)b] = std_target(idx[start + (size_t)b]);
      Graph<float> g(false);
      BatchOutput out = model_forward(g, model, mb, bs);
      Var loss = model_loss(g, out, tgt, lw);
      loss_sum += g.val(loss).v[0];
      ++batches;
      for (int b = 0; b < bs; ++b) {
        stats.preds.push_back(unstd(g.val(out.global).v[(size_t)b]));
        stats.targets.push_back(
            corpus.records[(size_t)idx[start + (size_t)b]].bmd[vertebra]);
      }
    }
    stats.loss = loss_sum / std::max(1, batches);
  };

  FoldResult res;
  res.fold = fold;
  res.best_val_rmse = 1e300;
  std::vector<TensorData<float>> best_params;

  std::vector<int> order = train_set;
  Image2D aug_img;
  LandmarkSet aug_lm;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    EpochStats train_stats;
    double loss_sum = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += (size_t)tcfg.batch) {
      const int bs = (int)std::min((size_t)tcfg.batch, order.size() - start);
      TensorData<float> mb({bs * M, S, S});
      TensorData<float> tgt({bs, 1});
      for (int b = 0; b < bs; ++b) {
        const int idx = order[start + (size_t)b];
        AugmentParams ap = draw_augment(tcfg, aug_rng, corpus.images[(size_t)idx].width);
        apply_augment(corpus.images[(size_t)idx], corpus.landmarks[(size_t)idx],
                      ap, aug_img, aug_lm);
        fill_batch(mb, b, make_modalities(aug_img, aug_lm, mcfg, geo));
        tgt.v[(size_t)b] = std_target(idx);
      }
      Graph<float> g(true);
      BatchOutput out = model_forward(g, model, mb, bs);
      Var loss = model_loss(g, out, tgt, lw);
      const double lval = g.val(loss).v[0];
      if (!std::isfinite(lval))
        throw NumericalError(strfmt(
            "training diverged: non-finite loss at vertebra %s fold %d epoch %d",
            vertebra_name(vertebra), fold, epoch));
      for (auto* p : params) p->zero_grad();
      g.backward(loss);
      sgd_step(params, (float)tcfg.lr, (float)tcfg.weight_decay,
               (float)tcfg.momentum, velocity);
      loss_sum += lval;
      ++batches;
      for (int b = 0; b < bs; ++b) {
        train_stats.preds.push_back(unstd(g.val(out.global).v[(size_t)b]));
        train_stats.targets.push_back(
            corpus.records[(size_t)order[start + (size_t)b]].bmd[vertebra]);
      }
    }
    train_stats.loss = loss_sum / std::max(1, batches);
    res.log_rows.push_back(
        train_stats.row(epoch, strfmt("fold%d_train", fold)));

    EpochStats val_stats;
    eval_split(val_mods, val_set, val_stats);
    res.log_rows.push_back(val_stats.row(epoch, strfmt("fold%d_val", fold)));
    const double val_rmse = rmse(val_stats.preds, val_stats.targets);
    if (val_rmse < res.best_val_rmse) {
      res.best_val_rmse = val_rmse;
      try {
        res.best_val_r = pearson_r(val_stats.preds, val_stats.targets);
      } catch (const UsageError&) {
        res.best_val_r = 0;
      }
      res.best_epoch = epoch;
      best_params.clear();
      for (auto* p : params) best_params.push_back(p->value);
    }
  }

  for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];

  // fold the target standardization into the output heads: w2 <- w2*sd,
  // b2 <- b2*sd + mean, so the saved model and all later predictions are in
  // BMD units without carrying the affine around
  auto fold_affine = [&](Parameter<float>& w2, Parameter<float>& b2) {
    for (auto& v : w2.value.v) v = (float)(v * tsd);
    b2.value.v[0] = (float)(b2.value.v[0] * tsd + tmean);
  };
  fold_affine(model.glob_w2, model.glob_b2);
  for (auto& lr : model.locals) fold_affine(lr.w2, lr.b2);

  res.checkpoint_path =
      (fs::path(out_dir) / strfmt("fold%d.ckpt", fold)).string();
  save_checkpoint(model, res.checkpoint_path);

  // held-out predictions with the best parameters (global output only)
  if (!test_idx.empty() && test_modalities) {
    for (size_t start = 0; start < test_idx.size(); start += (size_t)tcfg.batch) {
      const int bs = (int)std::min((size_t)tcfg.batch, test_idx.size() - start);
      TensorData<float> mb({bs * M, S, S});
      std::copy_n(test_modalities->v.data() + start * (size_t)M * S * S,
                  (size_t)bs * M * S * S, mb.v.data());
      Graph<float> g(false);
      BatchOutput out = model_forward(g, model, mb, bs);
      for (int b = 0; b < bs; ++b)
        res.test_pred.push_back(g.val(out.global).v[(size_t)b]);
    }
  }
  return res;
}

std::vector<double> ensemble_predict(const std::vector<FoldResult>& folds) {
  if (folds.empty()) throw UsageError("ensemble_predict: no fold models");
  const size_t n = folds.front().test_pred.size();
  for (const auto& f : folds)
    if (f.test_pred.size() != n)
      throw UsageError("ensemble_predict: fold prediction counts differ");
  std::vector<double> out(n, 0.0);
  for (const auto& f : folds)
    for (size_t i = 0; i < n; ++i) out[i] += f.test_pred[i];
  for (auto& v : out) v /= (double)folds.size();
  return out;
}

std::vector<double> predict(Model<float>& m, const Corpus& corpus,
                            const std::vector<int>& indices,
                            const RoiGeometry& geo, int batch) {
  const int M = m.cfg.modalities(), S = m.cfg.input_size;
  std::vector<double> preds;
  for (size_t start = 0; start < indices.size(); start += (size_t)batch) {
    const int bs = (int)std::min((size_t)batch, indices.size() - start);
    TensorData<float> mb({bs * M, S, S});
    for (int b = 0; b < bs; ++b) {
      const int idx = indices[start + (size_t)b];
      fill_batch(mb, b, make_modalities(corpus.images[(size_t)idx],
                                        corpus.landmarks[(size_t)idx], m.cfg, geo));
    }
    Graph<float> g(false);
    BatchOutput out = model_forward(g, m, mb, bs);
    for (int b = 0; b < bs; ++b) preds.push_back(g.val(out.global).v[(size_t)b]);
  }
  return preds;
}

std::vector<VertebraResult> run_training(const Corpus& corpus,
                                         const ModelConfig& mcfg,
                                         const RoiGeometry& geo,
                                         const TrainConfig& tcfg,
                                         const std::vector<int>& vertebrae,
                                         const std::string& out_dir) {
  std::vector<int> trainval, test;
  split_test(corpus.records, tcfg.test_fraction, tcfg.seed, trainval, test);
  std::vector<PatientRecord> tv_records;
  for (int i : trainval) tv_records.push_back(corpus.records[(size_t)i]);
  std::vector<int> fold_of = split_folds(tv_records, tcfg.folds, tcfg.seed);

  // test modalities are augmentation-free and shared by every job
  const int M = mcfg.modalities(), S = mcfg.input_size;
  TensorData<float> test_mods;
  if (!test.empty()) {
    test_mods = TensorData<float>({(int)test.size() * M, S, S});
    for (size_t i = 0; i < test.size(); ++i)
      fill_batch(test_mods, (int)i,
                 make_modalities(corpus.images[(size_t)test[i]],
                                 corpus.landmarks[(size_t)test[i]], mcfg, geo));
  }

  struct Job {
    int vertebra, fold;
  };
  std::vector<Job> jobs;
  for (int v : vertebrae)
    for (int f = 0; f < tcfg.folds; ++f) jobs.push_back({v, f});

  std::vector<VertebraResult> results(vertebrae.size());
  for (size_t i = 0; i < vertebrae.size(); ++i) {
    results[i].vertebra = vertebrae[(size_t)i];
    results[i].folds.resize((size_t)tcfg.folds);
    results[i].test_indices = test;
    fs::create_directories(fs::path(out_dir) / vertebra_name(vertebrae[(size_t)i]));
  }

  std::mutex mu;
  size_t next_job = 0;
  std::exception_ptr failure;
  auto worker = [&]() {
    for (;;) {
      size_t j;
      {
        std::lock_guard<std::mutex> lk(mu);
        if (failure || next_job >= jobs.size()) return;
        j = next_job++;
      }
      try {
        const Job job = jobs[j];
        size_t vi = 0;
        while (vertebrae[vi] != job.vertebra) ++vi;
        const std::string vdir =
            (fs::path(out_dir) / vertebra_name(job.vertebra)).string();
        FoldResult fr = train_fold(corpus, trainval, fold_of, job.fold, test,
                                   test.empty() ? nullptr : &test_mods,
                                   job.vertebra, mcfg, geo, tcfg, vdir);
        std::lock_guard<std::mutex> lk(mu);
        results[vi].folds[(size_t)job.fold] = std::move(fr);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const int nthreads = std::max(1, std::min((int)jobs.size(), tcfg.workers));
  std::vector<std::thread> pool;
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (auto& vr : results) {
    // merged per-vertebra training log, folds in order
    const fs::path vdir = fs::path(out_dir) / vertebra_name(vr.vertebra);
    std::ofstream log(vdir / "train_log.csv");
    if (!log) throw IoError("cannot write train log under " + vdir.string());
    log << "epoch,split,loss,rmse,r\n";
    for (const auto& f : vr.folds)
      for (const auto& row : f.log_rows) log << row << "\n";
    if (!test.empty()) vr.ensemble_pred = ensemble_predict(vr.folds);
  }
  return results;
}

}  // namespace amr
