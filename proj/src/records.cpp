#include "amr/records.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "amr/rng.hpp"

namespace amr {

const char* kManifestHeader =
    "patient_id\timage\tlandmarks\tbmd_l1\tbmd_l2\tbmd_l3\tbmd_l4"
    "\tt_l1\tt_l2\tt_l3\tt_l4\tsex\tage";

void save_manifest(const std::vector<PatientRecord>& records,
                   const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open manifest for writing: " + path);
  f << kManifestHeader << '\n';
  for (const auto& r : records) {
    f << r.patient_id << '\t' << r.image_path << '\t' << r.landmark_path;
    for (int v = 0; v < kVertebrae; ++v) f << strfmt("\t%.6f", r.bmd[v]);
    for (int v = 0; v < kVertebrae; ++v) f << strfmt("\t%.6f", r.t_score[v]);
    f << '\t' << r.sex << '\t' << r.age << '\n';
  }
  if (!f) throw IoError("short write on manifest: " + path);
}

std::vector<PatientRecord> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(f, line) || line != kManifestHeader)
    throw IoError(path + ": bad or missing manifest header (line 1)");
  std::vector<PatientRecord> out;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    PatientRecord r;
    std::string field;
    auto next = [&](const char* what) {
      if (!std::getline(ss, field, '\t'))
        throw IoError(strfmt("%s: missing %s at line %d", path.c_str(), what, lineno));
      return field;
    };
    r.patient_id = next("patient_id");
    r.image_path = next("image");
    r.landmark_path = next("landmarks");
    for (int v = 0; v < kVertebrae; ++v) {
      r.bmd[v] = std::strtod(next("bmd").c_str(), nullptr);
      if (!(r.bmd[v] > 0))
        throw IoError(strfmt("%s: non-positive bmd at line %d", path.c_str(), lineno));
    }
    for (int v = 0; v < kVertebrae; ++v)
      r.t_score[v] = std::strtod(next("t_score").c_str(), nullptr);
    std::string sex = next("sex");
    if (sex != "F" && sex != "M")
      throw IoError(strfmt("%s: bad sex field at line %d", path.c_str(), lineno));
    r.sex = sex[0];
    r.age = (int)std::strtol(next("age").c_str(), nullptr, 10);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<int> split_folds(const std::vector<PatientRecord>& records, int k,
                             uint64_t seed) {
  if (k < 2) throw UsageError("split_folds: need at least 2 folds");
  if (records.empty()) throw UsageError("split_folds: no records");

  // group indices by patient_id, preserving first-seen order
  std::vector<std::string> ids;
  std::map<std::string, std::vector<int>> groups;
  for (size_t i = 0; i < records.size(); ++i) {
    auto [it, fresh] = groups.try_emplace(records[i].patient_id);
    if (fresh) ids.push_back(records[i].patient_id);
    it->second.push_back((int)i);
  }
  if ((int)ids.size() < k)
    throw UsageError(strfmt("split_folds: %zu patients for %d folds", ids.size(), k));

  Rng rng = Rng(seed).child(0x0f01d5);
  rng.shuffle(ids);
  std::vector<int> fold(records.size(), 0);
  for (size_t i = 0; i < ids.size(); ++i)
    for (int idx : groups[ids[i]]) fold[(size_t)idx] = (int)(i % (size_t)k);
  return fold;
}

void split_test(const std::vector<PatientRecord>& records, double fraction,
                uint64_t seed, std::vector<int>& trainval,
                std::vector<int>& test) {
  if (fraction < 0 || fraction >= 1)
    throw ConfigError("test fraction must be in [0,1)");
  std::vector<std::string> ids;
  std::map<std::string, std::vector<int>> groups;
  for (size_t i = 0; i < records.size(); ++i) {
    auto [it, fresh] = groups.try_emplace(records[i].patient_id);
    if (fresh) ids.push_back(records[i].patient_id);
    it->second.push_back((int)i);
  }
  Rng rng = Rng(seed).child(0x7e57);
  rng.shuffle(ids);
  const size_t n_test = (size_t)(fraction * (double)ids.size() + 0.5);
  trainval.clear();
  test.clear();
  for (size_t i = 0; i < ids.size(); ++i) {
    auto& dst = i < n_test ? test : trainval;
    for (int idx : groups[ids[i]]) dst.push_back(idx);
  }
  std::sort(trainval.begin(), trainval.end());
  std::sort(test.begin(), test.end());
}

}  // namespace amr
