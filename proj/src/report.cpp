#include "amr/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace amr {

bool PredictionSet::has_vertebra(int v) const {
  if (pred_bmd[(size_t)v].size() != patient_ids.size()) return false;
  for (double p : pred_bmd[(size_t)v])
    if (!std::isfinite(p)) return false;
  return !patient_ids.empty();
}

EvalReport build_report(const PredictionSet& preds, const TScoreRefs& refs,
                        const std::vector<ThresholdPolicy>& policies) {
  EvalReport rep;
  std::vector<std::array<double, 4>> pat_pred(preds.size()),
      pat_truth(preds.size());
  for (size_t i = 0; i < preds.size(); ++i)
    for (int v = 0; v < kVertebrae; ++v) {
      pat_pred[i][(size_t)v] = std::nan("");
      pat_truth[i][(size_t)v] = std::nan("");
    }

  for (int v = 0; v < kVertebrae; ++v) {
    if (!preds.has_vertebra(v)) continue;
    VertebraEval& e = rep.vert[(size_t)v];
    e.present = true;
    const auto& p = preds.pred_bmd[(size_t)v];
    const auto& t = preds.truth_bmd[(size_t)v];
    e.r = pearson_r(p, t);
    e.rmse = rmse(p, t);
    e.fit = linear_fit(p, t);
    e.ba = bland_altman(p, t);

    std::vector<double> pred_t(p.size()), truth_t(p.size()), score(p.size());
    std::vector<int> label(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
      pred_t[i] = to_t_score(p[i], v, refs);
      truth_t[i] = to_t_score(t[i], v, refs);
      score[i] = -pred_t[i];  // higher score = more osteoporotic
      label[i] = truth_t[i] < kOsteoporosisT ? 1 : 0;
      pat_pred[i][(size_t)v] = pred_t[i];
      pat_truth[i][(size_t)v] = truth_t[i];
    }
    try {
      e.auc = Rate::of(roc_auc(score, label));
    } catch (const UsageError&) {
      e.auc = Rate::undefined();
    }
    for (const auto& pol : policies)
      e.per_policy.push_back(
          {pol.name, sens_spec(pred_t, truth_t, pol.thr[(size_t)v])});
  }

  bool all4 = true;
  for (int v = 0; v < kVertebrae; ++v) all4 = all4 && rep.vert[(size_t)v].present;
  if (all4 && !preds.patient_ids.empty()) {
    rep.patient_present = true;
    for (const auto& pol : policies)
      rep.patient.push_back({pol.name, patient_level(pat_pred, pat_truth, pol)});
  }
  return rep;
}

namespace {

std::string rate_str(const Rate& r) {
  return r.defined ? strfmt("%.6f", r.value) : "undefined";
}

}  // namespace

void write_report_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open report for writing: " + path);
  f << "vertebra,metric,policy,value\n";
  for (int v = 0; v < kVertebrae; ++v) {
    const VertebraEval& e = rep.vert[(size_t)v];
    if (!e.present) continue;
    const char* vn = vertebra_name(v);
    f << vn << strfmt(",r_value,-,%.6f\n", e.r);
    f << vn << strfmt(",rmse,-,%.6f\n", e.rmse);
    f << vn << strfmt(",fit_slope,-,%.6f\n", e.fit.slope);
    f << vn << strfmt(",fit_intercept,-,%.6f\n", e.fit.intercept);
    f << vn << strfmt(",r_squared,-,%.6f\n", e.fit.r2);
    f << vn << strfmt(",ba_mean_diff,-,%.6f\n", e.ba.mean_diff);
    f << vn << strfmt(",ba_sd_diff,-,%.6f\n", e.ba.sd_diff);
    f << vn << strfmt(",ba_lo,-,%.6f\n", e.ba.lo);
    f << vn << strfmt(",ba_hi,-,%.6f\n", e.ba.hi);
    f << vn << strfmt(",ba_outliers,-,%d\n", e.ba.outliers);
    f << vn << ",auc,-," << rate_str(e.auc) << "\n";
    for (const auto& [pol, ss] : e.per_policy) {
      f << vn << ",sensitivity," << pol << "," << rate_str(ss.sens) << "\n";
      f << vn << ",specificity," << pol << "," << rate_str(ss.spec) << "\n";
    }
  }
  if (rep.patient_present) {
    for (const auto& [pol, pl] : rep.patient) {
      f << "patient,osteoporosis_sensitivity," << pol << ","
        << rate_str(pl.osteoporosis.sens) << "\n";
      f << "patient,osteoporosis_specificity," << pol << ","
        << rate_str(pl.osteoporosis.spec) << "\n";
      f << "patient,osteopenia_sensitivity," << pol << ","
        << rate_str(pl.osteopenia.sens) << "\n";
      f << "patient,osteopenia_specificity," << pol << ","
        << rate_str(pl.osteopenia.spec) << "\n";
    }
    f << "patient,skipped_patients,-,"
      << (rep.patient.empty() ? 0 : rep.patient.front().second.skipped) << "\n";
  }
  if (!f) throw IoError("short write on report: " + path);
}

void write_predictions_csv(const PredictionSet& preds, const TScoreRefs& refs,
                           const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open predictions for writing: " + path);
  f << "patient_id,vertebra,truth_bmd,pred_bmd,truth_t,pred_t\n";
  for (size_t i = 0; i < preds.size(); ++i)
    for (int v = 0; v < kVertebrae; ++v) {
      const double p = preds.pred_bmd[(size_t)v][i];
      const double t = preds.truth_bmd[(size_t)v][i];
      if (!std::isfinite(p)) continue;
      f << preds.patient_ids[i] << ',' << vertebra_name(v)
        << strfmt(",%.6f,%.6f,%.6f,%.6f\n", t, p, to_t_score(t, v, refs),
                  to_t_score(p, v, refs));
    }
  if (!f) throw IoError("short write on predictions: " + path);
}

PredictionSet load_predictions_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open predictions file: " + path);
  std::string line;
  if (!std::getline(f, line) ||
      line != "patient_id,vertebra,truth_bmd,pred_bmd,truth_t,pred_t")
    throw IoError(path + ": bad predictions header");
  PredictionSet out;
  std::map<std::string, size_t> index;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id, vn, field;
    if (!std::getline(ss, id, ',') || !std::getline(ss, vn, ','))
      throw IoError(strfmt("%s: malformed row at line %d", path.c_str(), lineno));
    int v = -1;
    for (int k = 0; k < kVertebrae; ++k)
      if (vn == vertebra_name(k)) v = k;
    if (v < 0)
      throw IoError(strfmt("%s: unknown vertebra '%s' at line %d", path.c_str(),
                           vn.c_str(), lineno));
    double vals[4];
    for (double& d : vals) {
      if (!std::getline(ss, field, ','))
        throw IoError(strfmt("%s: missing field at line %d", path.c_str(), lineno));
      d = std::strtod(field.c_str(), nullptr);
    }
    auto [it, fresh] = index.try_emplace(id, out.patient_ids.size());
    if (fresh) {
      out.patient_ids.push_back(id);
      for (int k = 0; k < kVertebrae; ++k) {
        out.pred_bmd[(size_t)k].push_back(std::nan(""));
        out.truth_bmd[(size_t)k].push_back(std::nan(""));
      }
    }
    out.truth_bmd[(size_t)v][it->second] = vals[0];
    out.pred_bmd[(size_t)v][it->second] = vals[1];
  }
  return out;
}

namespace {

struct Panel {
  double x0, y0, w, h;           // pixel rect
  double vx0, vx1, vy0, vy1;     // value ranges
  double px(double v) const { return x0 + (v - vx0) / (vx1 - vx0) * w; }
  double py(double v) const { return y0 + h - (v - vy0) / (vy1 - vy0) * h; }
};

void svg_header(std::ofstream& f, int w, int h) {
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
    << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void panel_frame(std::ofstream& f, const Panel& p, const std::string& title) {
  f << strfmt("<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
              "fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n",
              p.x0, p.y0, p.w, p.h);
  f << strfmt("<text x=\"%.1f\" y=\"%.1f\" font-size=\"13\" "
              "font-family=\"sans-serif\">%s</text>\n",
              p.x0 + 4, p.y0 - 6, title.c_str());
}

Panel make_panel(int idx, double vx0, double vx1, double vy0, double vy1) {
  const double cell = 440, margin = 50, pad = 30;
  const int r = idx / 2, c = idx % 2;
  Panel p;
  p.x0 = margin + c * (cell + pad);
  p.y0 = margin + r * (cell + pad);
  p.w = cell;
  p.h = cell;
  p.vx0 = vx0;
  p.vx1 = vx1;
  p.vy0 = vy0;
  p.vy1 = vy1;
  return p;
}

void value_range(const std::vector<double>& a, const std::vector<double>& b,
                 double& lo, double& hi) {
  lo = 1e300;
  hi = -1e300;
  for (double v : a) { lo = std::min(lo, v); hi = std::max(hi, v); }
  for (double v : b) { lo = std::min(lo, v); hi = std::max(hi, v); }
  const double m = 0.05 * (hi - lo + 1e-9);
  lo -= m;
  hi += m;
}

}  // namespace

void write_scatter_svg(const PredictionSet& preds, const EvalReport& rep,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open svg for writing: " + path);
  svg_header(f, 1010, 1010);
  for (int v = 0; v < kVertebrae; ++v) {
    if (!rep.vert[(size_t)v].present) continue;
    const auto& p = preds.pred_bmd[(size_t)v];
    const auto& t = preds.truth_bmd[(size_t)v];
    double lo, hi;
    value_range(p, t, lo, hi);
    Panel pn = make_panel(v, lo, hi, lo, hi);
    const auto& e = rep.vert[(size_t)v];
    panel_frame(f, pn, strfmt("%s  A=%.3f B=%.3f R2=%.3f", vertebra_name(v),
                              e.fit.slope, e.fit.intercept, e.fit.r2));
    // identity and least-squares lines
    f << strfmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                "stroke=\"#bbbbbb\" stroke-width=\"1\"/>\n",
                pn.px(lo), pn.py(lo), pn.px(hi), pn.py(hi));
    f << strfmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                "stroke=\"#d62728\" stroke-width=\"1.5\"/>\n",
                pn.px(lo), pn.py(e.fit.slope * lo + e.fit.intercept), pn.px(hi),
                pn.py(e.fit.slope * hi + e.fit.intercept));
    for (size_t i = 0; i < p.size(); ++i)
      f << strfmt("<circle cx=\"%.1f\" cy=\"%.1f\" r=\"1.5\" fill=\"#1f77b4\" "
                  "fill-opacity=\"0.5\"/>\n", pn.px(t[i]), pn.py(p[i]));
  }
  f << "</svg>\n";
  if (!f) throw IoError("short write on svg: " + path);
}

void write_bland_altman_svg(const PredictionSet& preds, const EvalReport& rep,
                            const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open svg for writing: " + path);
  svg_header(f, 1010, 1010);
  for (int v = 0; v < kVertebrae; ++v) {
    if (!rep.vert[(size_t)v].present) continue;
    const auto& p = preds.pred_bmd[(size_t)v];
    const auto& t = preds.truth_bmd[(size_t)v];
    const auto& ba = rep.vert[(size_t)v].ba;
    std::vector<double> means(p.size()), diffs(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
      means[i] = 0.5 * (p[i] + t[i]);
      diffs[i] = p[i] - t[i];
    }
    double xlo, xhi, ylo, yhi;
    value_range(means, means, xlo, xhi);
    value_range(diffs, diffs, ylo, yhi);
    ylo = std::min(ylo, ba.lo - 0.02);
    yhi = std::max(yhi, ba.hi + 0.02);
    Panel pn = make_panel(v, xlo, xhi, ylo, yhi);
    panel_frame(f, pn, strfmt("%s  mean=%.3f sd=%.3f outliers=%d",
                              vertebra_name(v), ba.mean_diff, ba.sd_diff,
                              ba.outliers));
    for (double yv : {ba.mean_diff, ba.lo, ba.hi})
      f << strfmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"#d62728\" stroke-width=\"1\" "
                  "stroke-dasharray=\"5,3\"/>\n",
                  pn.px(xlo), pn.py(yv), pn.px(xhi), pn.py(yv));
    for (size_t i = 0; i < p.size(); ++i)
      f << strfmt("<circle cx=\"%.1f\" cy=\"%.1f\" r=\"1.5\" fill=\"#1f77b4\" "
                  "fill-opacity=\"0.5\"/>\n", pn.px(means[i]), pn.py(diffs[i]));
  }
  f << "</svg>\n";
  if (!f) throw IoError("short write on svg: " + path);
}

}  // namespace amr
