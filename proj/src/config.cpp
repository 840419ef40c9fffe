#include "amr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace amr {

namespace {

const std::map<std::string, std::string>& registry() {
  static const std::map<std::string, std::string> defaults = {
      {"seed", "42"},

      {"gen.n_patients", "2000"},
      {"gen.image_size", "64"},
      {"gen.spacing", "0.16"},
      {"gen.bmd_mean", "0.89,0.95,1.03,1.04"},
      {"gen.bmd_sd", "0.15,0.15,0.16,0.16"},
      {"gen.latent_corr", "0.95"},
      {"gen.tref_mean", "1.00,1.07,1.14,1.13"},
      {"gen.tref_sd", "0.121,0.125,0.126,0.130"},
      {"gen.background", "0.38"},
      {"gen.noise_sd", "0.012"},
      {"gen.struct_contrast", "0.18"},
      {"gen.tex_base", "0.10"},
      {"gen.tex_slope", "0.30"},
      {"gen.occlusion_prob", "0.25"},
      {"gen.confounder_amp", "0.12"},
      {"gen.jitter", "0.012"},
      {"gen.offset_jitter", "0.05"},
      {"gen.scale_jitter", "0.06"},

      {"data.test_fraction", "0.2"},
      {"data.folds", "4"},

      {"roi.crop_size", "24"},
      {"roi.margin", "0.25"},
      {"roi.rib_box", "0.18"},
      {"roi.spine_box", "0.15"},
      {"roi.std_eps", "1e-6"},

      {"model.variant", "attmultiroi"},
      {"model.patch_n", "3"},
      {"model.dim", "32"},
      {"model.heads", "4"},
      {"model.layers", "2"},
      {"model.mlp_hidden", "64"},
      {"model.reg_hidden", "16"},
      {"model.widths", "6,12,24"},

      {"train.lr", "0.0001"},
      {"train.weight_decay", "0.0004"},
      {"train.momentum", "0"},
      {"train.epochs", "100"},
      {"train.batch", "8"},
      {"train.local_loss_weight", "1"},
      {"train.workers", "2"},
      {"train.aug_scale", "0.10"},
      {"train.aug_rotate", "5.0"},
      {"train.aug_translate", "0.05"},
      {"train.aug_flip_prob", "0.5"},

      {"policy.flex", "-2.2,-2.1,-2.0,-1.9"},
      {"policy.unified", "-1.75,-2.0,-2.25,-2.5"},

      {"ablate.patch_sweep", "2,3,4"},
      {"ablate.sweep_vertebra", "l1"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() : kv_(registry()) {}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(strfmt("%s:%d: expected key=value", path.c_str(), lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!kv_.count(key))
      throw ConfigError(strfmt("%s:%d: unknown key '%s'", path.c_str(), lineno,
                               key.c_str()));
    kv_[key] = value;
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!kv_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  kv_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

const std::string& RunConfig::str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::integer(const std::string& key) const {
  const std::string& s = str(key);
  char* end = nullptr;
  long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(strfmt("config %s: '%s' is not an integer", key.c_str(),
                             s.c_str()));
  return (int)v;
}

double RunConfig::real(const std::string& key) const {
  const std::string& s = str(key);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(strfmt("config %s: '%s' is not a number", key.c_str(),
                             s.c_str()));
  return v;
}

std::vector<double> RunConfig::real_list(const std::string& key) const {
  std::vector<double> out;
  std::istringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    out.push_back(std::strtod(item.c_str(), &end));
    if (end == item.c_str())
      throw ConfigError(strfmt("config %s: bad list entry '%s'", key.c_str(),
                               item.c_str()));
  }
  if (out.empty()) throw ConfigError("config " + key + ": empty list");
  return out;
}

std::vector<int> RunConfig::int_list(const std::string& key) const {
  std::vector<int> out;
  for (double v : real_list(key)) out.push_back((int)v);
  return out;
}

void RunConfig::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open config for writing: " + path);
  for (const auto& [k, v] : kv_) f << k << "=" << v << "\n";
  if (!f) throw IoError("short write on config: " + path);
}

}  // namespace amr
