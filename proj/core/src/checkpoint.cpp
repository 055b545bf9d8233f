#include "padprobe/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace padprobe {

using nlohmann::json;

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["backbone"] = {{"padding_mode", to_string(cfg.backbone.padding_mode)},
                   {"padding_size", cfg.backbone.padding_size},
                   {"use_bias", cfg.backbone.use_bias},
                   {"input_mode", to_string(cfg.backbone.input_mode)},
                   {"feature_channels", cfg.backbone.feature_channels},
                   {"downsample_factor", cfg.backbone.downsample_factor}};
  j["frame_w"] = cfg.frame_w;
  j["frame_h"] = cfg.frame_h;
  j["roi_size"] = cfg.roi_size;
  j["cin_hidden"] = cfg.cin_hidden;
  j["t_ref"] = cfg.t_ref;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig cfg;
  const json& b = j.at("backbone");
  cfg.backbone.padding_mode = padding_mode_from_string(b.at("padding_mode").get<std::string>());
  cfg.backbone.padding_size = b.at("padding_size").get<int>();
  cfg.backbone.use_bias = b.at("use_bias").get<bool>();
  cfg.backbone.input_mode = input_mode_from_string(b.at("input_mode").get<std::string>());
  cfg.backbone.feature_channels = b.at("feature_channels").get<int>();
  cfg.backbone.downsample_factor = b.at("downsample_factor").get<int>();
  cfg.frame_w = j.at("frame_w").get<int>();
  cfg.frame_h = j.at("frame_h").get<int>();
  cfg.roi_size = j.at("roi_size").get<int>();
  cfg.cin_hidden = j.at("cin_hidden").get<int>();
  cfg.t_ref = j.at("t_ref").get<int>();
  cfg.validate();
  return cfg;
}

namespace {

constexpr char kMagic[8] = {'P', 'P', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ofstream& f, uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
uint64_t read_u64(std::ifstream& f) {
  uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

template <typename T>
void write_record(std::ofstream& f, const std::string& name, const std::vector<T>& v) {
  write_u32(f, static_cast<uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u64(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_record(std::ifstream& f, const std::string& expected_name, std::vector<T>& v) {
  const uint32_t nl = read_u32(f);
  std::string name(nl, '\0');
  f.read(name.data(), nl);
  if (name != expected_name)
    throw std::runtime_error("checkpoint: expected record " + expected_name + ", found " + name);
  const uint64_t count = read_u64(f);
  if (count != v.size())
    throw std::runtime_error("checkpoint: record " + name + " holds " + std::to_string(count) +
                             " values, model expects " + std::to_string(v.size()));
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (!f) throw std::runtime_error("checkpoint: truncated record " + name);
}

std::ifstream open_and_check(const std::string& path, uint32_t expected_width,
                             std::string& meta_out, std::vector<double>* curve) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t width = read_u32(f);
  if (expected_width != 0 && width != expected_width)
    throw std::runtime_error("checkpoint: element width " + std::to_string(width) +
                             " does not match requested " + std::to_string(expected_width));
  const uint64_t meta_len = read_u64(f);
  meta_out.assign(meta_len, '\0');
  f.read(meta_out.data(), static_cast<std::streamsize>(meta_len));
  const uint64_t curve_len = read_u64(f);
  if (curve) {
    curve->assign(curve_len, 0.0);
    f.read(reinterpret_cast<char*>(curve->data()),
           static_cast<std::streamsize>(curve_len * sizeof(double)));
  } else {
    f.seekg(static_cast<std::streamoff>(curve_len * sizeof(double)), std::ios::cur);
  }
  if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);
  return f;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params,
                     const std::string& meta_json, const std::vector<double>& loss_curve) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(kMagic, 8);
  write_u32(f, sizeof(T));
  write_u64(f, meta_json.size());
  f.write(meta_json.data(), static_cast<std::streamsize>(meta_json.size()));
  write_u64(f, loss_curve.size());
  f.write(reinterpret_cast<const char*>(loss_curve.data()),
          static_cast<std::streamsize>(loss_curve.size() * sizeof(double)));

  uint32_t n = 0;
  auto& p = const_cast<ModelParams<T>&>(params);  // visit reads only
  visit_model(
      p, static_cast<ModelGrads<T>*>(nullptr),
      [&](const char*, ConvLayer<T>&, ConvGrad<T>*) { n += 2; },
      [&](const char*, AffineLayer<T>&, AffineGrad<T>*) { n += 2; });
  write_u32(f, n);
  visit_model(
      p, static_cast<ModelGrads<T>*>(nullptr),
      [&](const char* name, ConvLayer<T>& l, ConvGrad<T>*) {
        write_record(f, std::string(name) + ".W", l.W);
        write_record(f, std::string(name) + ".b", l.b);
      },
      [&](const char* name, AffineLayer<T>& l, AffineGrad<T>*) {
        write_record(f, std::string(name) + ".A", l.A);
        write_record(f, std::string(name) + ".b", l.b);
      });
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::string peek_checkpoint_meta(const std::string& path) {
  std::string meta;
  open_and_check(path, 0, meta, nullptr);
  return meta;
}

template <typename T>
std::string load_checkpoint(const std::string& path, ModelParams<T>& params,
                            std::vector<double>* loss_curve) {
  std::string meta;
  std::ifstream f = open_and_check(path, sizeof(T), meta, loss_curve);
  const uint32_t n = read_u32(f);
  uint32_t expected = 0;
  visit_model(
      params, static_cast<ModelGrads<T>*>(nullptr),
      [&](const char*, ConvLayer<T>&, ConvGrad<T>*) { expected += 2; },
      [&](const char*, AffineLayer<T>&, AffineGrad<T>*) { expected += 2; });
  if (n != expected)
    throw std::runtime_error("checkpoint: holds " + std::to_string(n) + " records, model expects " +
                             std::to_string(expected));
  visit_model(
      params, static_cast<ModelGrads<T>*>(nullptr),
      [&](const char* name, ConvLayer<T>& l, ConvGrad<T>*) {
        read_record(f, std::string(name) + ".W", l.W);
        read_record(f, std::string(name) + ".b", l.b);
      },
      [&](const char* name, AffineLayer<T>& l, AffineGrad<T>*) {
        read_record(f, std::string(name) + ".A", l.A);
        read_record(f, std::string(name) + ".b", l.b);
      });
  return meta;
}

#define PADPROBE_CKPT_INSTANTIATE(T)                                                       \
  template void save_checkpoint<T>(const std::string&, const ModelParams<T>&,              \
                                   const std::string&, const std::vector<double>&);        \
  template std::string load_checkpoint<T>(const std::string&, ModelParams<T>&,             \
                                          std::vector<double>*);

PADPROBE_CKPT_INSTANTIATE(float)
PADPROBE_CKPT_INSTANTIATE(double)
#undef PADPROBE_CKPT_INSTANTIATE

}  // namespace padprobe
