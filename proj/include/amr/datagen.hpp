#pragma once

#include <string>
#include <vector>

#include "amr/config.hpp"
#include "amr/image.hpp"
#include "amr/landmarks.hpp"
#include "amr/records.hpp"

namespace amr {

// Everything the generator needs, resolved from a RunConfig. One latent bone
// density factor per patient drives L1..L4 BMD labels (vertebra-specific
// affine maps plus independent noise) and the texture amplitude rendered in
// every anatomical region. A global brightness/gradient confounder is drawn
// independently of the latent, and each region can be independently occluded
// (texture suppressed, hazy overlay) so that no single region is sufficient.
struct GenConfig {
  int n_patients = 2000;
  int image_size = 64;
  double spacing = 0.16;
  double bmd_mean[kVertebrae] = {0.89, 0.95, 1.03, 1.04};
  double bmd_sd[kVertebrae] = {0.15, 0.15, 0.16, 0.16};
  double latent_corr = 0.95;
  double tref_mean[kVertebrae] = {1.00, 1.07, 1.14, 1.13};
  double tref_sd[kVertebrae] = {0.121, 0.125, 0.126, 0.130};
  double background = 0.38;
  double noise_sd = 0.012;
  double struct_contrast = 0.18;
  double tex_base = 0.10;
  double tex_slope = 0.30;
  double occlusion_prob = 0.25;
  double confounder_amp = 0.12;
  double jitter = 0.012;
  double offset_jitter = 0.05;
  double scale_jitter = 0.06;
  uint64_t seed = 42;

  static GenConfig from(const RunConfig& cfg);
  void validate() const;
};

// Sample-level output of the generator, also used by the augmentation
// pipeline (same anatomy, transformed).
struct GeneratedSample {
  Image2D image;
  LandmarkSet landmarks;
  PatientRecord record;
  double latent = 0;
};

// Renders one patient deterministically from the config and index.
GeneratedSample generate_patient(const GenConfig& cfg, int index);

// Writes images/, landmarks/, manifest.tsv and latents.tsv under out_dir.
// Returns the manifest path. Byte-for-byte deterministic in the config.
std::string generate_corpus(const GenConfig& cfg, const std::string& out_dir);

// latents.tsv reader: patient_id -> latent factor (generator diagnostics).
std::vector<std::pair<std::string, double>> load_latents(const std::string& path);

}  // namespace amr
