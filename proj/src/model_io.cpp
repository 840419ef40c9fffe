#include <cstring>
#include <fstream>
#include <json.hpp>

#include "amr/model.hpp"

namespace amr {

using nlohmann::json;

Variant variant_from(const std::string& name) {
  if (name == "base") return Variant::kBase;
  if (name == "multipatch") return Variant::kMultiPatch;
  if (name == "attmultipatch") return Variant::kAttMultiPatch;
  if (name == "multiroi") return Variant::kMultiRoi;
  if (name == "attmultiroi") return Variant::kAttMultiRoi;
  throw ConfigError("unknown model variant '" + name + "'");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kBase: return "base";
    case Variant::kMultiPatch: return "multipatch";
    case Variant::kAttMultiPatch: return "attmultipatch";
    case Variant::kMultiRoi: return "multiroi";
    case Variant::kAttMultiRoi: return "attmultiroi";
  }
  return "?";
}

int ModelConfig::modalities() const {
  switch (variant) {
    case Variant::kBase: return 1;
    case Variant::kMultiPatch:
    case Variant::kAttMultiPatch: return patch_n * patch_n;
    case Variant::kMultiRoi:
    case Variant::kAttMultiRoi: return 15;
  }
  return 0;
}

void ModelConfig::validate() const {
  if (dim <= 0 || heads <= 0 || layers <= 0 || mlp_hidden <= 0 || reg_hidden <= 0)
    throw ConfigError("model: all dimensions must be positive");
  if (dim % heads != 0)
    throw ConfigError(strfmt("model.dim %d not divisible by model.heads %d",
                             dim, heads));
  if (patch_n < 1) throw ConfigError("model.patch_n must be >= 1");
  if (widths.empty()) throw ConfigError("model.widths must not be empty");
  int side = input_size;
  for (size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] <= 0) throw ConfigError("model.widths entries must be positive");
    if (side < 2)
      throw ConfigError("model: input size too small for extractor depth");
    side /= 2;
  }
  if (side < 1) throw ConfigError("model: input size too small for extractor depth");
}

ModelConfig ModelConfig::from(const RunConfig& cfg) {
  ModelConfig m;
  m.variant = variant_from(cfg.str("model.variant"));
  m.patch_n = cfg.integer("model.patch_n");
  m.input_size = cfg.integer("roi.crop_size");
  m.widths = cfg.int_list("model.widths");
  m.dim = cfg.integer("model.dim");
  m.heads = cfg.integer("model.heads");
  m.layers = cfg.integer("model.layers");
  m.mlp_hidden = cfg.integer("model.mlp_hidden");
  m.reg_hidden = cfg.integer("model.reg_hidden");
  m.validate();
  return m;
}

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                        (unsigned char)(v >> 16 & 0xff), (unsigned char)(v >> 24)};
  f.write((const char*)b, 4);
}

}  // namespace

void save_checkpoint(Model<float>& m, const std::string& path) {
  json hdr;
  hdr["format"] = "AMRW";
  hdr["variant"] = variant_name(m.cfg.variant);
  hdr["config"] = {{"patch_n", m.cfg.patch_n},
                   {"input_size", m.cfg.input_size},
                   {"widths", m.cfg.widths},
                   {"dim", m.cfg.dim},
                   {"heads", m.cfg.heads},
                   {"layers", m.cfg.layers},
                   {"mlp_hidden", m.cfg.mlp_hidden},
                   {"reg_hidden", m.cfg.reg_hidden}};
  json dir = json::array();
  uint64_t offset = 0;
  auto params = m.parameters();
  for (auto* p : params) {
    dir.push_back({{"name", p->name}, {"shape", p->value.shape},
                   {"offset", offset}, {"decay", p->decay}});
    offset += (uint64_t)p->value.size() * 4;
  }
  hdr["tensors"] = dir;
  const std::string header = hdr.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write("AMRW", 4);
  put_u32(f, (uint32_t)header.size());
  f.write(header.data(), (std::streamsize)header.size());
  for (auto* p : params)
    f.write((const char*)p->value.v.data(), (std::streamsize)p->value.size() * 4);
  if (!f) throw IoError("short write on checkpoint: " + path);
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "AMRW", 4) != 0)
    throw IoError("bad magic in checkpoint: " + path);
  unsigned char lb[4];
  f.read((char*)lb, 4);
  const uint32_t hlen = (uint32_t)lb[0] | (uint32_t)lb[1] << 8 |
                        (uint32_t)lb[2] << 16 | (uint32_t)lb[3] << 24;
  if (!f || hlen == 0 || hlen > (1u << 24))
    throw IoError("bad header length in checkpoint: " + path);
  std::string header(hlen, '\0');
  f.read(header.data(), hlen);
  if (!f) throw IoError("truncated checkpoint header: " + path);

  json hdr;
  try {
    hdr = json::parse(header);
  } catch (const json::exception& e) {
    throw IoError(strfmt("%s: malformed checkpoint header: %s", path.c_str(),
                         e.what()));
  }
  ModelConfig cfg;
  try {
    cfg.variant = variant_from(hdr.at("variant").get<std::string>());
    const json& c = hdr.at("config");
    cfg.patch_n = c.at("patch_n").get<int>();
    cfg.input_size = c.at("input_size").get<int>();
    cfg.widths = c.at("widths").get<std::vector<int>>();
    cfg.dim = c.at("dim").get<int>();
    cfg.heads = c.at("heads").get<int>();
    cfg.layers = c.at("layers").get<int>();
    cfg.mlp_hidden = c.at("mlp_hidden").get<int>();
    cfg.reg_hidden = c.at("reg_hidden").get<int>();
  } catch (const json::exception& e) {
    throw IoError(strfmt("%s: incomplete checkpoint config: %s", path.c_str(),
                         e.what()));
  }
  Model<float> m = init_model<float>(cfg, 0);
  auto params = m.parameters();
  const json& dir = hdr.at("tensors");
  if (dir.size() != params.size())
    throw IoError(strfmt("%s: checkpoint lists %zu tensors, model has %zu",
                         path.c_str(), dir.size(), params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const json& e = dir[i];
    if (e.at("name").get<std::string>() != params[i]->name ||
        e.at("shape").get<std::vector<int>>() != params[i]->value.shape)
      throw IoError(strfmt("%s: tensor %zu mismatch (%s)", path.c_str(), i,
                           params[i]->name.c_str()));
    f.read((char*)params[i]->value.v.data(),
           (std::streamsize)params[i]->value.size() * 4);
    if (!f)
      throw IoError(strfmt("%s: truncated payload at tensor %s", path.c_str(),
                           params[i]->name.c_str()));
  }
  return m;
}

}  // namespace amr
