#include "padprobe/trainer.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace padprobe {

void TrainConfig::validate() const {
  if (iterations <= 0) throw std::invalid_argument("iterations must be positive");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (horizon <= 0) throw std::invalid_argument("horizon must be positive");
}

int tier_iterations(const std::string& tier) {
  if (tier == "smoke") return 500;
  if (tier == "desk") return 20000;
  if (tier == "paper") return 200000;
  throw std::invalid_argument("unknown tier: " + tier);
}

TrainDiverged::TrainDiverged(int it)
    : std::runtime_error("training diverged: non-finite loss at iteration " + std::to_string(it)),
      iteration(it) {}

template <typename T>
double window_loss(const BoxSeq<T>& pred, const BoxSeq<T>& target, BoxSeq<T>* dpred,
                   T grad_scale) {
  if (pred.size() != target.size()) throw std::invalid_argument("loss: horizon mismatch");
  const size_t S = pred.size();
  if (S == 0) throw std::invalid_argument("loss: empty sequences");
  if (dpred) dpred->assign(S, {});

  const double inv = 1.0 / (static_cast<double>(S) * kNumBalls);
  double acc = 0.0;
  for (size_t s = 0; s < S; ++s)
    for (int i = 0; i < kNumBalls; ++i)
      for (int j = 0; j < 4; ++j) {
        const double d = static_cast<double>(pred[s][i][j]) - target[s][i][j];
        acc += d * d * inv;
        if (dpred)
          (*dpred)[s][i][j] = static_cast<T>(2.0 * d * inv * static_cast<double>(grad_scale));
      }
  return acc;
}

template <typename T>
WindowInput<T> make_window_input(const Dataset& ds, int video, int start, int horizon,
                                 const ModelConfig& cfg) {
  const VideoMeta& vm = ds.videos.at(static_cast<size_t>(video));
  const int last = start + cfg.t_ref + horizon - 1;
  if (start < 0 || last >= static_cast<int>(vm.boxes.size()))
    throw std::out_of_range("window exceeds video length");

  WindowInput<T> in;
  if (cfg.backbone.input_mode == InputMode::Visual) {
    if (!ds.has_frames()) throw std::runtime_error("visual input needs frames loaded");
    const auto& vf = ds.frames.at(static_cast<size_t>(video));
    in.frames.resize(3 * cfg.t_ref, cfg.frame_h, cfg.frame_w);
    for (int t = 0; t < cfg.t_ref; ++t) {
      const Image& img = vf.at(static_cast<size_t>(start + t));
      if (img.width != cfg.frame_w || img.height != cfg.frame_h)
        throw std::runtime_error("frame resolution does not match model config");
      for (int y = 0; y < cfg.frame_h; ++y)
        for (int x = 0; x < cfg.frame_w; ++x) {
          const uint8_t* p = img.px(x, y);
          for (int c = 0; c < 3; ++c)
            in.frames.at(3 * t + c, y, x) = static_cast<T>(p[c] / 255.0);
        }
    }
  }
  for (int t = 0; t < cfg.t_ref; ++t) in.ref_boxes[t] = vm.boxes[static_cast<size_t>(start + t)];

  in.targets.resize(static_cast<size_t>(horizon));
  const double iw = 1.0 / cfg.frame_w, ih = 1.0 / cfg.frame_h;
  for (int s = 0; s < horizon; ++s)
    for (int i = 0; i < kNumBalls; ++i) {
      const Box& b = vm.boxes[static_cast<size_t>(start + cfg.t_ref + s)][i];
      in.targets[static_cast<size_t>(s)][i] = {static_cast<T>(b.cx() * iw),
                                               static_cast<T>(b.cy() * ih),
                                               static_cast<T>(b.w() * iw),
                                               static_cast<T>(b.h() * ih)};
    }
  return in;
}

namespace {

// Adam moments in double regardless of the parameter type.
template <typename T>
struct AdamSlot {
  std::vector<T>* p = nullptr;
  std::vector<T>* g = nullptr;
  std::vector<double> m, v;
};

template <typename T>
std::vector<AdamSlot<T>> adam_slots(ModelParams<T>& p, ModelGrads<T>& g) {
  std::vector<AdamSlot<T>> slots;
  auto add = [&](std::vector<T>& pv, std::vector<T>& gv) {
    AdamSlot<T> s;
    s.p = &pv;
    s.g = &gv;
    s.m.assign(pv.size(), 0.0);
    s.v.assign(pv.size(), 0.0);
    slots.push_back(std::move(s));
  };
  visit_model(
      p, &g,
      [&](const char*, ConvLayer<T>& l, ConvGrad<T>* gr) {
        add(l.W, gr->dW);
        if (l.bias) add(l.b, gr->db);
      },
      [&](const char*, AffineLayer<T>& l, AffineGrad<T>* gr) {
        add(l.A, gr->dA);
        add(l.b, gr->db);
      });
  return slots;
}

template <typename T>
void adam_step(std::vector<AdamSlot<T>>& slots, double lr, double b1, double b2, double eps,
               int t) {
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (auto& s : slots) {
    const size_t n = s.p->size();
    for (size_t i = 0; i < n; ++i) {
      const double gi = static_cast<double>((*s.g)[i]);
      s.m[i] = b1 * s.m[i] + (1.0 - b1) * gi;
      s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
      const double mh = s.m[i] / c1;
      const double vh = s.v[i] / c2;
      (*s.p)[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps));
    }
  }
}

}  // namespace

template <typename T>
TrainResult train_model(Model<T>& model, const Dataset& train, const TrainConfig& cfg,
                        const std::function<void(int, double)>& progress) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  const InputMode mode = mc.backbone.input_mode;
  const std::vector<WindowRef> windows = train_windows(train);
  if (windows.empty()) throw std::runtime_error("train: dataset has no usable windows");

  Rng sample_rng(Rng::mix(cfg.seed, 0x5a3c9bUL));
  Rng input_rng(Rng::mix(cfg.seed, 0x91f04dUL));  // Random-mode feature draws

  ModelGrads<T> g;
  g.match(model.params());
  std::vector<AdamSlot<T>> slots = adam_slots(model.params(), g);

  const bool window_free_input =
      !cfg.disable_fast_paths && (mode == InputMode::AllZeros || mode == InputMode::AllOnes ||
                                  mode == InputMode::FixedRandom);
  const T inv_batch = static_cast<T>(1.0 / cfg.batch_size);

  TrainResult res;
  res.loss_curve.reserve(static_cast<size_t>(cfg.iterations));

  std::vector<WindowInput<T>> ins(static_cast<size_t>(cfg.batch_size));
  BoxSeq<T> dpred, dsum;

  for (int it = 0; it < cfg.iterations; ++it) {
    const double lr_t =
        cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * it / cfg.iterations));
    g.zero();

    for (int w = 0; w < cfg.batch_size; ++w) {
      const WindowRef& ref =
          windows[static_cast<size_t>(sample_rng.uniform_int(static_cast<uint64_t>(windows.size())))];
      ins[static_cast<size_t>(w)] =
          make_window_input<T>(train, ref.video, ref.start, cfg.horizon, mc);
    }

    double batch_loss = 0.0;
    if (window_free_input) {
      // one backbone pass serves the whole batch; its gradient accumulates
      WindowTape<T> bb_tape;
      Tensor<T> map = model.backbone_forward(nullptr, input_rng, &bb_tape, bb_tape.ws);
      std::vector<T> cvals;
      Tensor<T> dmap;
      if (per_channel_constant(map, cvals)) {
        // uniform features make the rollout box-independent: one window's
        // forward stands for all, and gradient linearity in dpred lets the
        // per-window loss gradients sum before a single reverse pass
        WindowTape<T> tape;
        BoxSeq<T> pred = model.rollout_given_map(map, ins[0], cfg.horizon, &tape);
        for (int w = 0; w < cfg.batch_size; ++w) {
          batch_loss +=
              window_loss(pred, ins[static_cast<size_t>(w)].targets, &dpred, inv_batch) /
              cfg.batch_size;
          if (w == 0) {
            dsum = dpred;
          } else {
            for (size_t s = 0; s < dsum.size(); ++s)
              for (int i = 0; i < kNumBalls; ++i)
                for (int j = 0; j < 4; ++j) dsum[s][i][j] += dpred[s][i][j];
          }
        }
        model.backward_rollout(tape, dsum, g, dmap);
      } else {
        for (int w = 0; w < cfg.batch_size; ++w) {
          WindowTape<T> tape;
          BoxSeq<T> pred =
              model.rollout_given_map(map, ins[static_cast<size_t>(w)], cfg.horizon, &tape);
          batch_loss +=
              window_loss(pred, ins[static_cast<size_t>(w)].targets, &dpred, inv_batch) /
              cfg.batch_size;
          model.backward_rollout(tape, dpred, g, dmap);
        }
      }
      model.backward_backbone(bb_tape, dmap, g);
    } else {
      for (int w = 0; w < cfg.batch_size; ++w) {
        WindowTape<T> tape;
        BoxSeq<T> pred =
            model.rollout(ins[static_cast<size_t>(w)], cfg.horizon, input_rng, &tape);
        batch_loss +=
            window_loss(pred, ins[static_cast<size_t>(w)].targets, &dpred, inv_batch) /
            cfg.batch_size;
        model.backward(ins[static_cast<size_t>(w)], tape, dpred, g);
      }
    }

    if (!std::isfinite(batch_loss)) throw TrainDiverged(it);
    adam_step(slots, lr_t, cfg.beta1, cfg.beta2, cfg.adam_eps, it + 1);
    res.loss_curve.push_back(batch_loss);

    if (progress && ((it + 1) % 50 == 0 || it + 1 == cfg.iterations)) {
      const size_t tail = std::min<size_t>(50, res.loss_curve.size());
      double s = 0.0;
      for (size_t q = res.loss_curve.size() - tail; q < res.loss_curve.size(); ++q)
        s += res.loss_curve[q];
      progress(it + 1, s / static_cast<double>(tail));
    }
  }
  res.final_loss = res.loss_curve.back();
  return res;
}

#define PADPROBE_TRAINER_INSTANTIATE(T)                                                      \
  template double window_loss<T>(const BoxSeq<T>&, const BoxSeq<T>&, BoxSeq<T>*, T);         \
  template WindowInput<T> make_window_input<T>(const Dataset&, int, int, int,                \
                                               const ModelConfig&);                          \
  template TrainResult train_model<T>(Model<T>&, const Dataset&, const TrainConfig&,         \
                                      const std::function<void(int, double)>&);

PADPROBE_TRAINER_INSTANTIATE(float)
PADPROBE_TRAINER_INSTANTIATE(double)
#undef PADPROBE_TRAINER_INSTANTIATE

}  // namespace padprobe
