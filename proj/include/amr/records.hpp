#pragma once

#include <string>
#include <vector>

#include "amr/common.hpp"

namespace amr {

constexpr int kVertebrae = 4;  // L1..L4
inline const char* vertebra_name(int v) {
  static const char* n[kVertebrae] = {"l1", "l2", "l3", "l4"};
  return n[v];
}

struct PatientRecord {
  std::string patient_id;
  std::string image_path;      // relative to the manifest directory
  std::string landmark_path;
  double bmd[kVertebrae] = {0, 0, 0, 0};
  double t_score[kVertebrae] = {0, 0, 0, 0};
  char sex = 'F';
  int age = 0;
};

// Manifest: UTF-8 TSV with the fixed header below; reals printed with six
// decimals; paths relative to the manifest location.
extern const char* kManifestHeader;

void save_manifest(const std::vector<PatientRecord>& records,
                   const std::string& path);
std::vector<PatientRecord> load_manifest(const std::string& path);

// Partition indices into k folds grouped by patient_id (duplicate ids stay
// together), fold sizes differing by at most one, deterministic in seed.
std::vector<int> split_folds(const std::vector<PatientRecord>& records, int k,
                             uint64_t seed);

// Patient-grouped held-out test split: returns (trainval indices, test
// indices), deterministic in seed. `fraction` of patients go to test.
void split_test(const std::vector<PatientRecord>& records, double fraction,
                uint64_t seed, std::vector<int>& trainval, std::vector<int>& test);

}  // namespace amr
