#include "amr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "amr/rng.hpp"

namespace fs = std::filesystem;

namespace amr {

GenConfig GenConfig::from(const RunConfig& cfg) {
  GenConfig g;
  g.n_patients = cfg.integer("gen.n_patients");
  g.image_size = cfg.integer("gen.image_size");
  g.spacing = cfg.real("gen.spacing");
  auto fill4 = [&](const char* key, double* dst) {
    auto v = cfg.real_list(key);
    if (v.size() != kVertebrae)
      throw ConfigError(strfmt("%s: expected 4 values", key));
    std::copy(v.begin(), v.end(), dst);
  };
  fill4("gen.bmd_mean", g.bmd_mean);
  fill4("gen.bmd_sd", g.bmd_sd);
  fill4("gen.tref_mean", g.tref_mean);
  fill4("gen.tref_sd", g.tref_sd);
  g.latent_corr = cfg.real("gen.latent_corr");
  g.background = cfg.real("gen.background");
  g.noise_sd = cfg.real("gen.noise_sd");
  g.struct_contrast = cfg.real("gen.struct_contrast");
  g.tex_base = cfg.real("gen.tex_base");
  g.tex_slope = cfg.real("gen.tex_slope");
  g.occlusion_prob = cfg.real("gen.occlusion_prob");
  g.confounder_amp = cfg.real("gen.confounder_amp");
  g.jitter = cfg.real("gen.jitter");
  g.offset_jitter = cfg.real("gen.offset_jitter");
  g.scale_jitter = cfg.real("gen.scale_jitter");
  g.seed = (uint64_t)cfg.integer("seed");
  g.validate();
  return g;
}

void GenConfig::validate() const {
  if (n_patients < 0) throw ConfigError("gen.n_patients must be >= 0");
  if (image_size < 32) throw ConfigError("gen.image_size must be >= 32");
  if (!(latent_corr > 0 && latent_corr <= 1))
    throw ConfigError("gen.latent_corr must be in (0,1]");
  if (!(occlusion_prob >= 0 && occlusion_prob < 1))
    throw ConfigError("gen.occlusion_prob must be in [0,1)");
  for (int v = 0; v < kVertebrae; ++v) {
    if (bmd_mean[v] <= 0 || bmd_sd[v] <= 0 || tref_sd[v] <= 0)
      throw ConfigError("gen: per-vertebra means/SDs must be positive");
  }
}

namespace {

constexpr double kLatentBound = 2.8;

struct Region {
  // capsule between a and b (disk when a==b), with soft radial falloff
  Vec2 a, b;
  double radius;
};

double region_weight(const Region& r, double x, double y) {
  const double vx = r.b.x - r.a.x, vy = r.b.y - r.a.y;
  const double len2 = vx * vx + vy * vy;
  double t = 0;
  if (len2 > 0) {
    t = ((x - r.a.x) * vx + (y - r.a.y) * vy) / len2;
    t = std::min(1.0, std::max(0.0, t));
  }
  const double dx = x - (r.a.x + t * vx), dy = y - (r.a.y + t * vy);
  const double d2 = (dx * dx + dy * dy) / (r.radius * r.radius);
  return d2 >= 1.0 ? 0.0 : 1.0 - d2;
}

// The 14 texture regions, aligned with the crop layout: 2+2 clavicle
// segments, 4+4 ribcage disks, cervical and lumbar disks.
std::vector<Region> texture_regions(const LandmarkSet& lm, int size) {
  const double s = size;
  std::vector<Region> regions;
  auto clav = [&](int base) {
    regions.push_back({lm[base], lm[base + 1], 0.045 * s});
    regions.push_back({lm[base + 1], lm[base + 2], 0.045 * s});
  };
  clav(LandmarkSet::kClavicleLeft);
  clav(LandmarkSet::kClavicleRight);
  for (int i = 0; i < 4; ++i) {
    const Vec2& p = lm[LandmarkSet::kRibcageLeft + i];
    regions.push_back({p, p, 0.075 * s});
  }
  for (int i = 0; i < 4; ++i) {
    const Vec2& p = lm[LandmarkSet::kRibcageRight + i];
    regions.push_back({p, p, 0.075 * s});
  }
  regions.push_back({lm[LandmarkSet::kC7], lm[LandmarkSet::kC7], 0.07 * s});
  regions.push_back({lm[LandmarkSet::kT12], lm[LandmarkSet::kT12], 0.07 * s});
  return regions;
}

LandmarkSet layout_anatomy(int size, Rng& rng, double jitter, double offset_jit,
                           double scale_jit) {
  // base layout in unit coordinates, mirrored for the right side
  const Vec2 clav_l[3] = {{0.40, 0.205}, {0.28, 0.180}, {0.17, 0.195}};
  const Vec2 rib_l[4] = {{0.185, 0.38}, {0.150, 0.50}, {0.150, 0.62}, {0.195, 0.74}};
  const Vec2 c7{0.5, 0.13}, t12{0.5, 0.78};

  const double dx = rng.uniform(-offset_jit, offset_jit);
  const double dy = rng.uniform(-offset_jit, offset_jit);
  const double sc = 1.0 + rng.uniform(-scale_jit, scale_jit);

  LandmarkSet lm;
  auto place = [&](Vec2 base) {
    const double jx = rng.normal(0, jitter), jy = rng.normal(0, jitter);
    double ux = 0.5 + sc * (base.x - 0.5) + dx + jx;
    double uy = 0.5 + sc * (base.y - 0.5) + dy + jy;
    return Vec2{std::min(size - 3.0, std::max(2.0, ux * size)),
                std::min(size - 3.0, std::max(2.0, uy * size))};
  };
  auto mirror = [](Vec2 p) { return Vec2{1.0 - p.x, p.y}; };

  for (int i = 0; i < 3; ++i) lm[LandmarkSet::kClavicleLeft + i] = place(clav_l[i]);
  for (int i = 0; i < 3; ++i)
    lm[LandmarkSet::kClavicleRight + i] = place(mirror(clav_l[i]));
  for (int i = 0; i < 4; ++i) lm[LandmarkSet::kRibcageLeft + i] = place(rib_l[i]);
  for (int i = 0; i < 4; ++i)
    lm[LandmarkSet::kRibcageRight + i] = place(mirror(rib_l[i]));
  lm[LandmarkSet::kC7] = place(c7);
  lm[LandmarkSet::kT12] = place(t12);
  return lm;
}

double quantize6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

GeneratedSample generate_patient(const GenConfig& cfg, int index) {
  Rng rng = Rng(cfg.seed).child(0xDA7A).child((uint64_t)index);
  Rng rng_label = rng.child(1);
  Rng rng_anatomy = rng.child(2);
  Rng rng_pixels = rng.child(3);
  Rng rng_meta = rng.child(4);

  GeneratedSample out;
  const int size = cfg.image_size;

  // labels: one latent density factor, vertebra-specific affine + noise
  const double z = rng_label.truncated_normal(kLatentBound);
  out.latent = z;
  const double rho = cfg.latent_corr;
  const double noise_mix = std::sqrt(1.0 - rho * rho);
  for (int v = 0; v < kVertebrae; ++v) {
    const double eps = rng_label.truncated_normal(kLatentBound);
    double bmd = cfg.bmd_mean[v] + cfg.bmd_sd[v] * (rho * z + noise_mix * eps);
    bmd = std::max(0.05, bmd);
    out.record.bmd[v] = quantize6(bmd);
    out.record.t_score[v] =
        (out.record.bmd[v] - cfg.tref_mean[v]) / cfg.tref_sd[v];
  }
  out.record.patient_id = strfmt("p%06d", index);
  out.record.sex = rng_meta.bernoulli(0.55) ? 'F' : 'M';
  out.record.age = 40 + (int)rng_meta.uniform_int(51);

  // anatomy and regions
  out.landmarks = layout_anatomy(size, rng_anatomy, cfg.jitter,
                                 cfg.offset_jitter, cfg.scale_jitter);
  const auto regions = texture_regions(out.landmarks, size);
  std::vector<char> occluded(regions.size(), 0);
  for (size_t i = 0; i < regions.size(); ++i)
    occluded[i] = rng_anatomy.bernoulli(cfg.occlusion_prob) ? 1 : 0;

  // global confounder, independent of the latent
  const double conf_offset = rng_anatomy.uniform(-1, 1) * cfg.confounder_amp;
  const double conf_theta = rng_anatomy.uniform(0, 6.283185307179586);
  const double conf_slope = rng_anatomy.uniform(0, cfg.confounder_amp);
  const double cth = std::cos(conf_theta), sth = std::sin(conf_theta);

  const double tex_amp =
      cfg.tex_base * (1.0 + cfg.tex_slope * z);  // z bounded, stays positive

  std::vector<double> canvas((size_t)size * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = ((x * cth + y * sth) / size - 0.5 * (cth + sth));
      canvas[(size_t)y * size + x] = cfg.background + conf_offset +
                                     2.0 * conf_slope * u +
                                     cfg.noise_sd * rng_pixels.normal();
    }

  // faint spinal column connecting c7 and t12 (fixed, anatomy context)
  {
    Region spine{out.landmarks[LandmarkSet::kC7], out.landmarks[LandmarkSet::kT12],
                 0.045 * size};
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double w = region_weight(spine, x, y);
        if (w > 0) canvas[(size_t)y * size + x] += 0.06 * w;
      }
  }

  // per-region bone ridge (fixed contrast) + density texture (amplitude
  // monotone in the latent); occluded regions get haze instead of texture
  for (size_t ri = 0; ri < regions.size(); ++ri) {
    const Region& r = regions[ri];
    const int x0 = std::max(0, (int)std::floor(std::min(r.a.x, r.b.x) - r.radius));
    const int x1 = std::min(size - 1, (int)std::ceil(std::max(r.a.x, r.b.x) + r.radius));
    const int y0 = std::max(0, (int)std::floor(std::min(r.a.y, r.b.y) - r.radius));
    const int y1 = std::min(size - 1, (int)std::ceil(std::max(r.a.y, r.b.y) + r.radius));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double w = region_weight(r, x, y);
        if (w <= 0) continue;
        double& px = canvas[(size_t)y * size + x];
        px += cfg.struct_contrast * w;
        if (occluded[ri])
          px += 0.5 * cfg.struct_contrast * w;  // washed-out haze, no texture
        else
          px += tex_amp * w * rng_pixels.normal();
      }
  }

  out.image = Image2D(size, size, (float)cfg.spacing);
  for (size_t i = 0; i < canvas.size(); ++i)
    out.image.pixels[i] = (float)std::min(1.0, std::max(0.0, canvas[i]));
  return out;
}

std::string generate_corpus(const GenConfig& cfg, const std::string& out_dir) {
  fs::path dir(out_dir);
  if (dir.has_parent_path() && !dir.parent_path().empty() &&
      !fs::exists(dir.parent_path()))
    throw IoError("parent directory does not exist: " +
                  dir.parent_path().string());
  std::error_code ec;
  fs::create_directory(dir, ec);
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "landmarks");

  std::vector<PatientRecord> records;
  std::ofstream latents((dir / "latents.tsv").string());
  if (!latents) throw IoError("cannot write latents.tsv under " + out_dir);
  latents << "patient_id\tlatent\n";
  for (int i = 0; i < cfg.n_patients; ++i) {
    GeneratedSample s = generate_patient(cfg, i);
    s.record.image_path = "images/" + s.record.patient_id + ".img";
    s.record.landmark_path = "landmarks/" + s.record.patient_id + ".txt";
    save_image(s.image, (dir / s.record.image_path).string());
    save_landmarks(s.landmarks, (dir / s.record.landmark_path).string());
    latents << s.record.patient_id << '\t' << strfmt("%.6f", s.latent) << '\n';
    records.push_back(std::move(s.record));
  }
  latents.close();
  const std::string manifest = (dir / "manifest.tsv").string();
  save_manifest(records, manifest);
  return manifest;
}

std::vector<std::pair<std::string, double>> load_latents(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open latents file: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "patient_id\tlatent")
    throw IoError(path + ": bad latents header");
  std::vector<std::pair<std::string, double>> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) throw IoError(path + ": malformed latents row");
    out.push_back({line.substr(0, tab), std::strtod(line.c_str() + tab + 1, nullptr)});
  }
  return out;
}

}  // namespace amr
