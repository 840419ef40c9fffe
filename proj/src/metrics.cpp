#include "amr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace amr {

namespace {

void require_paired(const std::vector<double>& a, const std::vector<double>& b,
                    size_t min_len, const char* who) {
  if (a.size() != b.size())
    throw UsageError(strfmt("%s: length mismatch (%zu vs %zu)", who, a.size(),
                            b.size()));
  if (a.size() < min_len)
    throw UsageError(strfmt("%s: need at least %zu samples", who, min_len));
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / (double)v.size();
}

}  // namespace

double pearson_r(const std::vector<double>& pred,
                 const std::vector<double>& truth) {
  require_paired(pred, truth, 2, "pearson_r");
  const double mp = mean_of(pred), mt = mean_of(truth);
  double cov = 0, vp = 0, vt = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double dp = pred[i] - mp, dt = truth[i] - mt;
    cov += dp * dt;
    vp += dp * dp;
    vt += dt * dt;
  }
  if (vp == 0 || vt == 0)
    throw UsageError("pearson_r: undefined for constant input");
  return cov / std::sqrt(vp * vt);
}

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  require_paired(pred, truth, 1, "rmse");
  double s = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return std::sqrt(s / (double)pred.size());
}

LinearFit linear_fit(const std::vector<double>& pred,
                     const std::vector<double>& truth) {
  require_paired(pred, truth, 2, "linear_fit");
  const double mp = mean_of(pred), mt = mean_of(truth);
  double cov = 0, vt = 0, vp = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    cov += (truth[i] - mt) * (pred[i] - mp);
    vt += (truth[i] - mt) * (truth[i] - mt);
    vp += (pred[i] - mp) * (pred[i] - mp);
  }
  if (vt == 0) throw UsageError("linear_fit: undefined for constant truth");
  LinearFit f;
  f.slope = cov / vt;
  f.intercept = mp - f.slope * mt;
  double ss_res = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - (f.slope * truth[i] + f.intercept);
    ss_res += e * e;
  }
  f.r2 = vp == 0 ? 1.0 : 1.0 - ss_res / vp;
  return f;
}

BlandAltman bland_altman(const std::vector<double>& pred,
                         const std::vector<double>& truth) {
  require_paired(pred, truth, 2, "bland_altman");
  BlandAltman ba;
  const size_t n = pred.size();
  std::vector<double> diff(n);
  for (size_t i = 0; i < n; ++i) diff[i] = pred[i] - truth[i];
  ba.mean_diff = mean_of(diff);
  double ss = 0;
  for (double d : diff) ss += (d - ba.mean_diff) * (d - ba.mean_diff);
  ba.sd_diff = std::sqrt(ss / (double)(n - 1));
  ba.lo = ba.mean_diff - 1.96 * ba.sd_diff;
  ba.hi = ba.mean_diff + 1.96 * ba.sd_diff;
  for (double d : diff)
    if (d < ba.lo || d > ba.hi) ++ba.outliers;
  return ba;
}

TScoreRefs TScoreRefs::from(const RunConfig& cfg) {
  TScoreRefs r;
  auto m = cfg.real_list("gen.tref_mean");
  auto s = cfg.real_list("gen.tref_sd");
  if (m.size() != kVertebrae || s.size() != kVertebrae)
    throw ConfigError("gen.tref_mean/gen.tref_sd: expected 4 values");
  for (int v = 0; v < kVertebrae; ++v) {
    r.mean[(size_t)v] = m[(size_t)v];
    r.sd[(size_t)v] = s[(size_t)v];
  }
  return r;
}

double to_t_score(double bmd, int vertebra, const TScoreRefs& refs) {
  if (vertebra < 0 || vertebra >= kVertebrae)
    throw ConfigError("to_t_score: no reference for vertebra index");
  if (!(refs.sd[(size_t)vertebra] > 0))
    throw ConfigError("to_t_score: reference SD must be positive");
  return (bmd - refs.mean[(size_t)vertebra]) / refs.sd[(size_t)vertebra];
}

std::vector<double> midranks(const std::vector<double>& values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * (double)(i + 1 + j + 1);  // average of 1-based ranks
    for (size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw UsageError("roc_auc: length mismatch");
  size_t np = 0, nn = 0;
  for (int l : labels) (l ? np : nn)++;
  if (np == 0 || nn == 0)
    throw UsageError("roc_auc: undefined with a single class");
  const auto rank = midranks(scores);
  double rank_sum = 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) rank_sum += rank[i];
  const double u = rank_sum - 0.5 * (double)np * ((double)np + 1);
  return u / ((double)np * (double)nn);
}

std::vector<ThresholdPolicy> policies_from(const RunConfig& cfg) {
  std::vector<ThresholdPolicy> out;
  for (double t : cfg.real_list("policy.unified")) {
    ThresholdPolicy p;
    p.name = strfmt("unified%g", t);
    p.thr = {t, t, t, t};
    out.push_back(p);
  }
  auto flex = cfg.real_list("policy.flex");
  if (flex.size() != kVertebrae)
    throw ConfigError("policy.flex: expected 4 thresholds");
  ThresholdPolicy p;
  p.name = "flex";
  for (int v = 0; v < kVertebrae; ++v) p.thr[(size_t)v] = flex[(size_t)v];
  out.push_back(p);
  return out;
}

SensSpec sens_spec(const std::vector<double>& pred_t,
                   const std::vector<double>& truth_t, double threshold) {
  require_paired(pred_t, truth_t, 1, "sens_spec");
  int tp = 0, fn = 0, tn = 0, fp = 0;
  for (size_t i = 0; i < pred_t.size(); ++i) {
    const bool pos = truth_t[i] < kOsteoporosisT;
    const bool pred_pos = pred_t[i] < threshold;
    if (pos)
      (pred_pos ? tp : fn)++;
    else
      (pred_pos ? fp : tn)++;
  }
  SensSpec out;
  out.sens = (tp + fn) ? Rate::of((double)tp / (tp + fn)) : Rate::undefined();
  out.spec = (tn + fp) ? Rate::of((double)tn / (tn + fp)) : Rate::undefined();
  return out;
}

PatientLevel patient_level(const std::vector<std::array<double, 4>>& pred_t,
                           const std::vector<std::array<double, 4>>& truth_t,
                           const ThresholdPolicy& policy) {
  if (pred_t.size() != truth_t.size())
    throw UsageError("patient_level: length mismatch");
  PatientLevel out;
  int po_tp = 0, po_fn = 0, po_tn = 0, po_fp = 0;
  int pe_tp = 0, pe_fn = 0, pe_tn = 0, pe_fp = 0;
  for (size_t i = 0; i < pred_t.size(); ++i) {
    bool complete = true;
    for (int v = 0; v < kVertebrae; ++v)
      complete = complete && std::isfinite(pred_t[i][(size_t)v]) &&
                 std::isfinite(truth_t[i][(size_t)v]);
    if (!complete) {
      ++out.skipped;
      continue;
    }
    bool gt_osteo = false, gt_below1 = false;
    bool pd_osteo = false, pd_below1 = false;
    for (int v = 0; v < kVertebrae; ++v) {
      gt_osteo = gt_osteo || truth_t[i][(size_t)v] < kOsteoporosisT;
      gt_below1 = gt_below1 || truth_t[i][(size_t)v] < kOsteopeniaT;
      pd_osteo = pd_osteo || pred_t[i][(size_t)v] < policy.thr[(size_t)v];
      pd_below1 = pd_below1 || pred_t[i][(size_t)v] < kOsteopeniaT;
    }
    const bool gt_pen = !gt_osteo && gt_below1;
    const bool pd_pen = !pd_osteo && pd_below1;
    if (gt_osteo)
      (pd_osteo ? po_tp : po_fn)++;
    else
      (pd_osteo ? po_fp : po_tn)++;
    if (gt_pen)
      (pd_pen ? pe_tp : pe_fn)++;
    else
      (pd_pen ? pe_fp : pe_tn)++;
  }
  auto rate = [](int num, int den) {
    return den ? Rate::of((double)num / den) : Rate::undefined();
  };
  out.osteoporosis.sens = rate(po_tp, po_tp + po_fn);
  out.osteoporosis.spec = rate(po_tn, po_tn + po_fp);
  out.osteopenia.sens = rate(pe_tp, pe_tp + pe_fn);
  out.osteopenia.spec = rate(pe_tn, pe_tn + pe_fp);
  return out;
}

}  // namespace amr
