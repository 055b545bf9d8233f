#include "padprobe/probe.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "padprobe/png_io.hpp"
#include "padprobe/render.hpp"

namespace padprobe {

template <typename T>
UniformityStats uniformity(const Tensor<T>& map, double tolerance) {
  if (map.size() == 0) throw std::invalid_argument("uniformity: empty map");
  UniformityStats st;
  st.channel_dev.resize(static_cast<size_t>(map.c));
  const size_t plane = static_cast<size_t>(map.h) * map.w;
  double var_acc = 0.0;
  bool uniform = true;
  for (int c = 0; c < map.c; ++c) {
    const T* p = map.data() + c * plane;
    double mean = 0.0, scale = 0.0;
    for (size_t q = 0; q < plane; ++q) {
      const double v = static_cast<double>(p[q]);
      if (!std::isfinite(v)) throw std::invalid_argument("uniformity: non-finite map");
      mean += v;
      scale = std::max(scale, std::abs(v));
    }
    mean /= static_cast<double>(plane);
    double dev = 0.0, var = 0.0;
    for (size_t q = 0; q < plane; ++q) {
      const double d = static_cast<double>(p[q]) - mean;
      dev = std::max(dev, std::abs(d));
      var += d * d;
    }
    var /= static_cast<double>(plane);
    st.channel_dev[static_cast<size_t>(c)] = dev;
    var_acc += var;
    const double rel = dev / std::max(scale, 1e-30);
    st.max_rel_dev = std::max(st.max_rel_dev, rel);
    if (rel > tolerance) uniform = false;
  }
  st.mean_variance = var_acc / map.c;
  st.is_uniform = uniform;
  return st;
}

bool expected_uniform(InputMode im, PaddingMode pm, bool use_bias) {
  const bool halo_consistent = pm == PaddingMode::Reflect || pm == PaddingMode::Replicate ||
                               pm == PaddingMode::Circular;
  if (im == InputMode::AllZeros)
    return halo_consistent || (pm == PaddingMode::Zero && !use_bias);
  if (im == InputMode::AllOnes) return halo_consistent;
  return false;
}

namespace {

const InputMode kMatrixInputs[] = {InputMode::Visual, InputMode::AllZeros, InputMode::AllOnes,
                                   InputMode::FixedRandom, InputMode::Random};
const PaddingMode kMatrixPads[] = {PaddingMode::Zero, PaddingMode::Reflect,
                                   PaddingMode::Replicate, PaddingMode::Circular};

// Four rendered frames of a seeded plain-table video, stacked for the head.
template <typename T>
Tensor<T> matrix_visual_frames(const ModelConfig& cfg, uint64_t seed) {
  const EnvContext env = make_plain_env();
  const std::vector<WorldState> states = simulate(seed, env, cfg.t_ref);
  Tensor<T> frames(3 * cfg.t_ref, cfg.frame_h, cfg.frame_w);
  for (int t = 0; t < cfg.t_ref; ++t) {
    const Image img = render_frame(states[static_cast<size_t>(t)]);
    for (int y = 0; y < cfg.frame_h; ++y)
      for (int x = 0; x < cfg.frame_w; ++x) {
        const uint8_t* p = img.px(x, y);
        for (int c = 0; c < 3; ++c) frames.at(3 * t + c, y, x) = static_cast<T>(p[c] / 255.0);
      }
  }
  return frames;
}

}  // namespace

std::vector<MatrixCell> uniformity_matrix(uint64_t seed, int padding_size) {
  std::vector<MatrixCell> cells;
  cells.reserve(40);
  Tensor<float> visual_frames;
  int cell_index = 0;
  for (bool bias : {true, false})
    for (InputMode im : kMatrixInputs)
      for (PaddingMode pm : kMatrixPads) {
        ModelConfig cfg;
        cfg.backbone.padding_mode = pm;
        cfg.backbone.padding_size = padding_size;
        cfg.backbone.use_bias = bias;
        cfg.backbone.input_mode = im;
        Model<float> model(cfg, seed);
        if (im == InputMode::Visual && visual_frames.size() == 0)
          visual_frames = matrix_visual_frames<float>(cfg, Rng::mix(seed, 0xF7A3E5UL));

        Rng input_rng(Rng::mix(seed, static_cast<uint64_t>(1000 + cell_index)));
        Workspace<float> ws;
        const Tensor<float>* frames = im == InputMode::Visual ? &visual_frames : nullptr;
        Tensor<float> map = model.backbone_forward(frames, input_rng, nullptr, ws);
        UniformityStats st = uniformity(map, kUniformityTol);

        MatrixCell cell;
        cell.input_mode = im;
        cell.padding_mode = pm;
        cell.use_bias = bias;
        cell.is_uniform = st.is_uniform;
        cell.max_rel_dev = st.max_rel_dev;
        cells.push_back(cell);
        ++cell_index;
      }
  return cells;
}

std::string format_matrix(const std::vector<MatrixCell>& cells) {
  std::ostringstream os;
  for (bool bias : {true, false}) {
    os << (bias ? "bias on\n" : "bias off\n");
    os << "input         ";
    for (PaddingMode pm : kMatrixPads) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%-11s", to_string(pm).c_str());
      os << buf;
    }
    os << '\n';
    for (InputMode im : kMatrixInputs) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%-14s", to_string(im).c_str());
      os << buf;
      for (PaddingMode pm : kMatrixPads) {
        const MatrixCell* found = nullptr;
        for (const MatrixCell& c : cells)
          if (c.input_mode == im && c.padding_mode == pm && c.use_bias == bias) found = &c;
        if (!found) throw std::logic_error("format_matrix: missing cell");
        std::snprintf(buf, sizeof buf, "%-11s", found->is_uniform ? "uniform" : "varied");
        os << buf;
      }
      os << '\n';
    }
    os << '\n';
  }
  return os.str();
}

BoxSeq<double> constant_prediction_oracle(const Dataset& train) {
  const std::vector<WindowRef> windows = eval_windows(train);
  if (windows.empty()) throw std::runtime_error("oracle: no eval windows in train split");
  const double iw = 1.0 / train.env().width;
  const double ih = 1.0 / train.env().height;

  BoxSeq<double> mean(kEvalHorizon);
  for (auto& step : mean)
    for (auto& b : step) b = {0.0, 0.0, 0.0, 0.0};

  for (const WindowRef& r : windows) {
    const VideoMeta& vm = train.videos[static_cast<size_t>(r.video)];
    for (int s = 0; s < kEvalHorizon; ++s) {
      const auto& boxes = vm.boxes[static_cast<size_t>(r.start + kRefFrames + s)];
      for (int i = 0; i < kNumBalls; ++i) {
        mean[static_cast<size_t>(s)][0][0] += boxes[i].cx() * iw;
        mean[static_cast<size_t>(s)][0][1] += boxes[i].cy() * ih;
        mean[static_cast<size_t>(s)][0][2] += boxes[i].w() * iw;
        mean[static_cast<size_t>(s)][0][3] += boxes[i].h() * ih;
      }
    }
  }
  const double inv = 1.0 / (static_cast<double>(windows.size()) * kNumBalls);
  for (int s = 0; s < kEvalHorizon; ++s) {
    for (int j = 0; j < 4; ++j) mean[static_cast<size_t>(s)][0][j] *= inv;
    // one optimal constant per step, shared by the (exchangeable) balls
    mean[static_cast<size_t>(s)][1] = mean[static_cast<size_t>(s)][0];
    mean[static_cast<size_t>(s)][2] = mean[static_cast<size_t>(s)][0];
  }
  return mean;
}

template <typename T>
int export_feature_figures(const Tensor<T>& map, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const size_t plane = static_cast<size_t>(map.h) * map.w;
  for (int c = 0; c < map.c; ++c) {
    const T* p = map.data() + c * plane;
    double lo = static_cast<double>(p[0]), hi = lo;
    for (size_t q = 1; q < plane; ++q) {
      const double v = static_cast<double>(p[q]);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    Image img(map.w, map.h);
    const bool flat = !(hi > lo);
    const double scale = flat ? 0.0 : 255.0 / (hi - lo);
    for (int y = 0; y < map.h; ++y)
      for (int x = 0; x < map.w; ++x) {
        const double v = static_cast<double>(p[static_cast<size_t>(y) * map.w + x]);
        const uint8_t g =
            flat ? 128 : static_cast<uint8_t>(std::lround((v - lo) * scale));
        uint8_t* px = img.px(x, y);
        px[0] = px[1] = px[2] = g;
      }
    char name[32];
    std::snprintf(name, sizeof name, "channel_%03d.png", c);
    write_png(out_dir / name, img);
  }
  return map.c;
}

#define PADPROBE_PROBE_INSTANTIATE(T)                                  \
  template UniformityStats uniformity<T>(const Tensor<T>&, double);    \
  template int export_feature_figures<T>(const Tensor<T>&, const std::filesystem::path&);

PADPROBE_PROBE_INSTANTIATE(float)
PADPROBE_PROBE_INSTANTIATE(double)
#undef PADPROBE_PROBE_INSTANTIATE

}  // namespace padprobe
