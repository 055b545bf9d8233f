#include "padprobe/model.hpp"

#include <cmath>
#include <stdexcept>

namespace padprobe {

std::string to_string(InputMode m) {
  switch (m) {
    case InputMode::Visual: return "visual";
    case InputMode::AllZeros: return "all-zeros";
    case InputMode::AllOnes: return "all-ones";
    case InputMode::FixedRandom: return "fixed-random";
    case InputMode::Random: return "random";
  }
  return "?";
}

InputMode input_mode_from_string(const std::string& s) {
  if (s == "visual") return InputMode::Visual;
  if (s == "all-zeros") return InputMode::AllZeros;
  if (s == "all-ones") return InputMode::AllOnes;
  if (s == "fixed-random") return InputMode::FixedRandom;
  if (s == "random") return InputMode::Random;
  throw std::invalid_argument("unknown input mode: " + s);
}

void BackboneConfig::validate() const {
  // kernel 3 shrinks dims at padding 0 and the crop rule only restores p >= 1
  if (padding_size < 1 || padding_size > 8)
    throw std::invalid_argument("padding_size must be in [1, 8]");
  if (feature_channels <= 0 || feature_channels % 2 != 0)
    throw std::invalid_argument("feature_channels must be positive and even");
  if (downsample_factor != 4)
    throw std::invalid_argument("downsample_factor is fixed at 4 (two stride-2 blocks)");
}

void ModelConfig::validate() const {
  backbone.validate();
  if (frame_w % 32 != 0 || frame_h % 32 != 0)
    throw std::invalid_argument("frame dims must be divisible by 32 (head stride * 3 pools)");
  if (roi_size < 1) throw std::invalid_argument("roi_size must be >= 1");
  if (cin_hidden < 1) throw std::invalid_argument("cin_hidden must be >= 1");
  if (t_ref != kRefFrames) throw std::invalid_argument("t_ref is fixed at 4");
}

template <typename T>
void ModelGrads<T>::match(const ModelParams<T>& p) {
  head1.c1.match(p.head1.c1);
  head1.c2.match(p.head1.c2);
  head1.skip.match(p.head1.skip);
  head2.c1.match(p.head2.c1);
  head2.c2.match(p.head2.c2);
  head2.skip.match(p.head2.skip);
  for (int i = 0; i < 7; ++i) hg[i].match(p.hg[i]);
  fo1.match(p.fo1);
  fo2.match(p.fo2);
  fr1.match(p.fr1);
  fr2.match(p.fr2);
  fa1.match(p.fa1);
  fa2.match(p.fa2);
  fz1.match(p.fz1);
  fz2.match(p.fz2);
  fp1.match(p.fp1);
  fp2.match(p.fp2);
  dec.dA.assign(p.dec.A.size(), T(0));
  dec.db.assign(p.dec.b.size(), T(0));
}

template <typename T>
void ModelGrads<T>::zero() {
  auto z = [](std::vector<T>& v) { std::fill(v.begin(), v.end(), T(0)); };
  for (ConvGrad<T>* g : {&head1.c1, &head1.c2, &head1.skip, &head2.c1, &head2.c2, &head2.skip,
                         &hg[0], &hg[1], &hg[2], &hg[3], &hg[4], &hg[5], &hg[6], &fo1, &fo2, &fr1,
                         &fr2, &fa1, &fa2, &fz1, &fz2, &fp1, &fp2}) {
    z(g->dW);
    z(g->db);
  }
  z(dec.dA);
  z(dec.db);
}

template <typename T>
void init_params(const ModelConfig& cfg, uint64_t seed, ModelParams<T>& p) {
  const auto& bb = cfg.backbone;
  const int fc = bb.feature_channels;
  const int half = fc / 2;
  const bool hb = bb.use_bias;

  p.head1.c1.setup(3 * cfg.t_ref, half, 3, 2, 1, PaddingMode::Zero, hb);
  p.head1.c2.setup(half, half, 3, 1, 1, PaddingMode::Zero, hb);
  p.head1.skip.setup(3 * cfg.t_ref, half, 1, 2, 0, PaddingMode::Zero, hb);
  p.head2.c1.setup(half, fc, 3, 2, 1, PaddingMode::Zero, hb);
  p.head2.c2.setup(fc, fc, 3, 1, 1, PaddingMode::Zero, hb);
  p.head2.skip.setup(half, fc, 1, 2, 0, PaddingMode::Zero, hb);
  for (auto& l : p.hg) l.setup(fc, fc, 3, 1, bb.padding_size, bb.padding_mode, hb);

  const int hid = cfg.cin_hidden;
  p.fo1.setup(fc, hid, 3, 1, 1, PaddingMode::Zero, true);
  p.fo2.setup(hid, fc, 3, 1, 1, PaddingMode::Zero, true);
  p.fr1.setup(2 * fc, hid, 3, 1, 1, PaddingMode::Zero, true);
  p.fr2.setup(hid, fc, 3, 1, 1, PaddingMode::Zero, true);
  p.fa1.setup(fc, hid, 3, 1, 1, PaddingMode::Zero, true);
  p.fa2.setup(hid, fc, 3, 1, 1, PaddingMode::Zero, true);
  p.fz1.setup(2 * fc, hid, 3, 1, 1, PaddingMode::Zero, true);
  p.fz2.setup(hid, fc, 3, 1, 1, PaddingMode::Zero, true);
  p.fp1.setup(cfg.t_ref * fc, hid, 3, 1, 1, PaddingMode::Zero, true);
  p.fp2.setup(hid, fc, 3, 1, 1, PaddingMode::Zero, true);
  p.dec.setup(fc, 4);

  Rng rng(Rng::mix(seed, 0xC0DEull));
  visit_model(
      p, static_cast<ModelGrads<T>*>(nullptr),
      [&rng](const char*, ConvLayer<T>& l, ConvGrad<T>*) { l.init(rng); },
      [&rng](const char*, AffineLayer<T>& l, AffineGrad<T>*) { l.init(rng); });
  // start box sizes in the small-box regime; centers stay unbiased
  p.dec.b[0] = T(0);
  p.dec.b[1] = T(0);
  p.dec.b[2] = T(-2.7);
  p.dec.b[3] = T(-2.7);
}

template <typename T>
size_t active_param_count(ModelParams<T>& p) {
  size_t n = 0;
  visit_model(
      p, static_cast<ModelGrads<T>*>(nullptr),
      [&n](const char*, ConvLayer<T>& l, ConvGrad<T>*) { n += l.param_count(); },
      [&n](const char*, AffineLayer<T>& l, AffineGrad<T>*) { n += l.param_count(); });
  return n;
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, uint64_t trial_seed) : cfg_(cfg), trial_seed_(trial_seed) {
  cfg_.validate();
  init_params(cfg_, trial_seed, p_);
  if (cfg_.backbone.input_mode == InputMode::FixedRandom) {
    Rng rng(Rng::mix(trial_seed, 0xF17Eull));
    fixed_random_.resize(cfg_.backbone.feature_channels, cfg_.map_h(), cfg_.map_w());
    for (auto& v : fixed_random_.v) v = static_cast<T>(rng.uniform());
  }
}

// ---- shared block helpers ----

namespace {

template <typename T>
std::vector<const Tensor<T>*> ptrs(const std::vector<Tensor<T>>& v) {
  std::vector<const Tensor<T>*> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = &v[i];
  return out;
}

// ys = L2(relu(L1(xs))); xs is consumed into the tape when recording
template <typename T>
void block_forward(const ConvLayer<T>& l1, const ConvLayer<T>& l2, std::vector<Tensor<T>>&& xs,
                   std::vector<Tensor<T>>& ys, BlockTape<T>* tape, Workspace<T>& ws) {
  std::vector<Tensor<T>> hidden;
  conv_forward_batch(l1, ptrs(xs), hidden, ws);
  for (auto& h : hidden) relu(h);
  conv_forward_batch(l2, ptrs(hidden), ys, ws);
  if (tape) {
    tape->x = std::move(xs);
    tape->a = std::move(hidden);
  }
}

// dxs are allocated+zeroed here when need_dx
template <typename T>
void block_backward(const ConvLayer<T>& l1, const ConvLayer<T>& l2, ConvGrad<T>& g1,
                    ConvGrad<T>& g2, const BlockTape<T>& tape,
                    const std::vector<const Tensor<T>*>& dys, std::vector<Tensor<T>>& dxs,
                    bool need_dx, Workspace<T>& ws) {
  const size_t n = tape.x.size();
  std::vector<Tensor<T>> da(n);
  std::vector<Tensor<T>*> dap(n);
  for (size_t i = 0; i < n; ++i) {
    da[i].resize(tape.a[i].c, tape.a[i].h, tape.a[i].w);
    dap[i] = &da[i];
  }
  conv_backward_batch(l2, ptrs(tape.a), dys, dap, g2, ws);
  for (size_t i = 0; i < n; ++i) relu_backward(tape.a[i], da[i]);

  std::vector<Tensor<T>*> dxp(n, nullptr);
  if (need_dx) {
    dxs.resize(n);
    for (size_t i = 0; i < n; ++i) {
      dxs[i].resize(tape.x[i].c, tape.x[i].h, tape.x[i].w);
      dxp[i] = &dxs[i];
    }
  }
  conv_backward_batch(l1, ptrs(tape.x), ptrs(da), dxp, g1, ws);
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

}  // namespace

// ---- backbone ----

template <typename T>
Tensor<T> Model<T>::head_downsample(const Tensor<T>& frames, HeadTape<T>* tape,
                                    Workspace<T>& ws) const {
  if (frames.c != 3 * cfg_.t_ref || frames.h != cfg_.frame_h || frames.w != cfg_.frame_w)
    throw std::invalid_argument("head_downsample: frame stack shape mismatch");

  auto res_block = [&ws](const ResBlockP<T>& blk, const Tensor<T>& x, Tensor<T>& pre_out,
                         Tensor<T>& out) {
    Tensor<T> c1;
    conv_forward(blk.c1, x, c1, ws);
    relu(c1);
    Tensor<T> c2;
    conv_forward(blk.c2, c1, c2, ws);
    Tensor<T> sk;
    conv_forward(blk.skip, x, sk, ws);
    add_inplace(c2, sk);
    relu(c2);
    pre_out = std::move(c1);
    out = std::move(c2);
  };

  Tensor<T> b1_pre, b1_out, b2_pre, b2_out;
  res_block(p_.head1, frames, b1_pre, b1_out);
  res_block(p_.head2, b1_out, b2_pre, b2_out);
  if (tape) {
    tape->x = frames;
    tape->b1_pre = std::move(b1_pre);
    tape->b1_out = std::move(b1_out);
    tape->b2_pre = std::move(b2_pre);
    tape->b2_out = b2_out;
  }
  return b2_out;
}

template <typename T>
Tensor<T> Model<T>::make_hourglass_input(const Tensor<T>* head_out, Rng& rng) const {
  const int fc = cfg_.backbone.feature_channels;
  switch (cfg_.backbone.input_mode) {
    case InputMode::Visual: {
      if (!head_out) throw std::invalid_argument("visual mode needs the head output");
      if (head_out->c != fc || head_out->h != cfg_.map_h() || head_out->w != cfg_.map_w())
        throw std::invalid_argument("head output dims mismatch");
      return *head_out;
    }
    case InputMode::AllZeros:
      return Tensor<T>(fc, cfg_.map_h(), cfg_.map_w());
    case InputMode::AllOnes: {
      Tensor<T> t(fc, cfg_.map_h(), cfg_.map_w());
      std::fill(t.v.begin(), t.v.end(), T(1));
      return t;
    }
    case InputMode::FixedRandom:
      return fixed_random_;
    case InputMode::Random: {
      Tensor<T> t(fc, cfg_.map_h(), cfg_.map_w());
      for (auto& v : t.v) v = static_cast<T>(rng.uniform());
      return t;
    }
  }
  throw std::logic_error("bad input mode");
}

template <typename T>
Tensor<T> Model<T>::hourglass_refine(const Tensor<T>& input, HourglassTape<T>* tape,
                                     Workspace<T>& ws) const {
  const int fc = cfg_.backbone.feature_channels;
  if (input.c != fc) throw std::invalid_argument("hourglass input channel mismatch");
  const int margin = cfg_.backbone.padding_size - 1;

  auto stage = [&](int idx, const Tensor<T>& x) {
    Tensor<T> raw;
    conv_forward(p_.hg[idx], x, raw, ws);
    Tensor<T> out;
    crop_center(raw, margin, out);
    relu(out);
    return out;
  };

  std::array<Tensor<T>, 7> in;
  std::array<Tensor<T>, 7> post;
  std::array<std::vector<uint8_t>, 3> arg;

  in[0] = input;
  post[0] = stage(0, in[0]);
  maxpool2(post[0], in[1], arg[0]);
  post[1] = stage(1, in[1]);
  maxpool2(post[1], in[2], arg[1]);
  post[2] = stage(2, in[2]);
  maxpool2(post[2], in[3], arg[2]);
  post[3] = stage(3, in[3]);

  upsample2(post[3], in[4]);
  add_inplace(in[4], post[2]);
  post[4] = stage(4, in[4]);
  upsample2(post[4], in[5]);
  add_inplace(in[5], post[1]);
  post[5] = stage(5, in[5]);
  upsample2(post[5], in[6]);
  add_inplace(in[6], post[0]);
  post[6] = stage(6, in[6]);

  Tensor<T> out = post[6];
  if (tape) {
    tape->in = std::move(in);
    tape->post = std::move(post);
    tape->pool_arg = std::move(arg);
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::backbone_forward(const Tensor<T>* frames, Rng& rng, WindowTape<T>* tape,
                                     Workspace<T>& ws) const {
  Tensor<T> head_out;
  const Tensor<T>* head_ptr = nullptr;
  if (cfg_.backbone.input_mode == InputMode::Visual) {
    if (!frames) throw std::invalid_argument("visual mode needs frames");
    head_out = head_downsample(*frames, tape ? &tape->head : nullptr, ws);
    head_ptr = &head_out;
    if (tape) tape->used_head = true;
  } else if (tape) {
    tape->used_head = false;
  }
  Tensor<T> u0 = make_hourglass_input(head_ptr, rng);
  return hourglass_refine(u0, tape ? &tape->hg : nullptr, ws);
}

// ---- interaction ----

template <typename T>
Tensor<T> Model<T>::roi_pool(const Tensor<T>& map, const Box& box_px,
                             std::vector<int32_t>* argmax) const {
  const int k = cfg_.roi_size;
  const double ds = cfg_.backbone.downsample_factor;
  double x0 = box_px.x0 / ds, x1 = box_px.x1 / ds;
  double y0 = box_px.y0 / ds, y1 = box_px.y1 / ds;
  if (!(x1 > x0) || !(y1 > y0)) {
    // zero-area after scaling: snap to the single cell under the box center
    ++degenerate_roi_;
    const int cx = std::min(std::max(static_cast<int>(std::floor(0.5 * (x0 + x1))), 0), map.w - 1);
    const int cy = std::min(std::max(static_cast<int>(std::floor(0.5 * (y0 + y1))), 0), map.h - 1);
    x0 = cx;
    x1 = cx + 1.0;
    y0 = cy;
    y1 = cy + 1.0;
  }

  Tensor<T> out(map.c, k, k);
  if (argmax) argmax->assign(static_cast<size_t>(map.c) * k * k, 0);

  for (int by = 0; by < k; ++by) {
    const double lo_y = y0 + (y1 - y0) * by / k;
    const double hi_y = y0 + (y1 - y0) * (by + 1) / k;
    int cy0 = std::min(std::max(static_cast<int>(std::floor(lo_y)), 0), map.h - 1);
    int cy1 = std::max(std::min(static_cast<int>(std::ceil(hi_y)), map.h), cy0 + 1);
    for (int bx = 0; bx < k; ++bx) {
      const double lo_x = x0 + (x1 - x0) * bx / k;
      const double hi_x = x0 + (x1 - x0) * (bx + 1) / k;
      int cx0 = std::min(std::max(static_cast<int>(std::floor(lo_x)), 0), map.w - 1);
      int cx1 = std::max(std::min(static_cast<int>(std::ceil(hi_x)), map.w), cx0 + 1);
      for (int c = 0; c < map.c; ++c) {
        T best = map.at(c, cy0, cx0);
        int32_t bi = cy0 * map.w + cx0;
        for (int yy = cy0; yy < cy1; ++yy)
          for (int xx = cx0; xx < cx1; ++xx) {
            const T v = map.at(c, yy, xx);
            if (v > best) {
              best = v;
              bi = yy * map.w + xx;
            }
          }
        out.at(c, by, bx) = best;
        if (argmax) (*argmax)[(static_cast<size_t>(c) * k + by) * k + bx] = bi;
      }
    }
  }
  return out;
}

template <typename T>
void Model<T>::cin_step(const std::array<Tensor<T>, kNumBalls>& b,
                        std::array<Tensor<T>, kNumBalls>& e, std::array<Tensor<T>, kNumBalls>& z,
                        CinTape<T>* tape, Workspace<T>& ws) const {
  // self dynamics
  std::vector<Tensor<T>> xo(kNumBalls);
  for (int i = 0; i < kNumBalls; ++i) xo[i] = b[i];
  std::vector<Tensor<T>> o;
  block_forward(p_.fo1, p_.fo2, std::move(xo), o, tape ? &tape->fo : nullptr, ws);

  // ordered pairs (i, j), i != j: (0,1),(0,2),(1,0),(1,2),(2,0),(2,1)
  std::vector<Tensor<T>> xr;
  xr.reserve(6);
  for (int i = 0; i < kNumBalls; ++i)
    for (int j = 0; j < kNumBalls; ++j)
      if (j != i) xr.push_back(concat_channels(b[i], b[j]));
  std::vector<Tensor<T>> r;
  block_forward(p_.fr1, p_.fr2, std::move(xr), r, tape ? &tape->fr : nullptr, ws);

  std::vector<Tensor<T>> s(kNumBalls);
  for (int i = 0; i < kNumBalls; ++i) {
    s[i] = std::move(o[i]);
    add_inplace(s[i], r[2 * i]);
    add_inplace(s[i], r[2 * i + 1]);
  }
  std::vector<Tensor<T>> ev;
  block_forward(p_.fa1, p_.fa2, std::move(s), ev, tape ? &tape->fa : nullptr, ws);

  std::vector<Tensor<T>> xz(kNumBalls);
  for (int i = 0; i < kNumBalls; ++i) xz[i] = concat_channels(b[i], ev[i]);
  std::vector<Tensor<T>> zv;
  block_forward(p_.fz1, p_.fz2, std::move(xz), zv, tape ? &tape->fz : nullptr, ws);

  for (int i = 0; i < kNumBalls; ++i) {
    e[i] = std::move(ev[i]);
    z[i] = std::move(zv[i]);
  }
}

template <typename T>
void Model<T>::predict_next(const std::array<Tensor<T>, kNumBalls>* z_hist,
                            std::array<Tensor<T>, kNumBalls>& bnext,
                            std::array<std::array<T, 4>, kNumBalls>& boxes, BlockTape<T>* tape,
                            Workspace<T>& ws) const {
  // z_hist[0..t_ref-1], oldest first; f_P consumes newest-first stacking
  std::vector<Tensor<T>> xp(kNumBalls);
  for (int i = 0; i < kNumBalls; ++i) {
    Tensor<T> acc = z_hist[cfg_.t_ref - 1][i];
    for (int q = cfg_.t_ref - 2; q >= 0; --q) acc = concat_channels(acc, z_hist[q][i]);
    xp[i] = std::move(acc);
  }
  std::vector<Tensor<T>> bn;
  block_forward(p_.fp1, p_.fp2, std::move(xp), bn, tape, ws);
  for (int i = 0; i < kNumBalls; ++i) {
    std::vector<T> y;
    gap_affine_forward(p_.dec, bn[i], y);
    for (int j = 0; j < 4; ++j) boxes[i][j] = sigmoid(y[j]);
    bnext[i] = std::move(bn[i]);
  }
}

template <typename T>
BoxSeq<T> Model<T>::rollout_given_map(const Tensor<T>& map, const WindowInput<T>& in, int horizon,
                                      WindowTape<T>* tape) const {
  WindowTape<T> local;
  WindowTape<T>& tp = tape ? *tape : local;
  Workspace<T>& ws = tp.ws;

  for (int t = 0; t < cfg_.t_ref; ++t)
    for (int i = 0; i < kNumBalls; ++i)
      tp.bf[t][i] = roi_pool(map, in.ref_boxes[t][i], &tp.roi_arg[t][i]);

  tp.z.clear();
  tp.z.resize(cfg_.t_ref);
  std::array<Tensor<T>, kNumBalls> e;
  for (int t = 0; t < cfg_.t_ref; ++t) cin_step(tp.bf[t], e, tp.z[t], &tp.ref_cin[t], ws);

  BoxSeq<T> pred(horizon);
  tp.steps.resize(horizon);
  for (int s = 0; s < horizon; ++s) {
    StepTape<T>& st = tp.steps[s];
    predict_next(&tp.z[s], st.bnext, st.pred, &st.fp, ws);
    pred[s] = st.pred;
    st.has_cin = false;
    if (s + 1 < horizon) {
      tp.z.emplace_back();
      cin_step(st.bnext, e, tp.z.back(), &st.cin, ws);
      st.has_cin = true;
    }
  }
  return pred;
}

template <typename T>
BoxSeq<T> Model<T>::rollout(const WindowInput<T>& in, int horizon, Rng& rng,
                            WindowTape<T>* tape) const {
  WindowTape<T> local;
  WindowTape<T>& tp = tape ? *tape : local;
  const Tensor<T>* frames = cfg_.backbone.input_mode == InputMode::Visual ? &in.frames : nullptr;
  Tensor<T> map = backbone_forward(frames, rng, &tp, tp.ws);
  return rollout_given_map(map, in, horizon, &tp);
}

template <typename T>
void Model<T>::cin_backward(const CinTape<T>& tape, const std::array<Tensor<T>, kNumBalls>& dz,
                            std::array<Tensor<T>, kNumBalls>& db, ModelGrads<T>& g,
                            Workspace<T>& ws) const {
  const int fc = cfg_.backbone.feature_channels;
  const int k = cfg_.roi_size;
  const size_t half = static_cast<size_t>(fc) * k * k;

  // f_Z: inputs concat(b_i, e_i)
  std::vector<const Tensor<T>*> dzp(kNumBalls);
  for (int i = 0; i < kNumBalls; ++i) dzp[i] = &dz[i];
  std::vector<Tensor<T>> dxz;
  block_backward(p_.fz1, p_.fz2, g.fz1, g.fz2, tape.fz, dzp, dxz, true, ws);
  std::array<Tensor<T>, kNumBalls> de;
  for (int i = 0; i < kNumBalls; ++i) {
    for (size_t q = 0; q < half; ++q) db[i].v[q] += dxz[i].v[q];
    de[i].resize(fc, k, k);
    std::copy(dxz[i].v.begin() + half, dxz[i].v.end(), de[i].v.begin());
  }

  // f_A: inputs s_i
  std::vector<const Tensor<T>*> dep(kNumBalls);
  for (int i = 0; i < kNumBalls; ++i) dep[i] = &de[i];
  std::vector<Tensor<T>> ds;
  block_backward(p_.fa1, p_.fa2, g.fa1, g.fa2, tape.fa, dep, ds, true, ws);

  // f_O: ds flows straight through the sum
  std::vector<const Tensor<T>*> dsp(kNumBalls);
  for (int i = 0; i < kNumBalls; ++i) dsp[i] = &ds[i];
  std::vector<Tensor<T>> dbo;
  block_backward(p_.fo1, p_.fo2, g.fo1, g.fo2, tape.fo, dsp, dbo, true, ws);
  for (int i = 0; i < kNumBalls; ++i) add_inplace(db[i], dbo[i]);

  // f_R: pair p = (i, j) receives ds_i; concat grad splits to both balls
  std::vector<const Tensor<T>*> drp(6);
  for (int i = 0; i < kNumBalls; ++i) {
    drp[2 * i] = &ds[i];
    drp[2 * i + 1] = &ds[i];
  }
  std::vector<Tensor<T>> dxr;
  block_backward(p_.fr1, p_.fr2, g.fr1, g.fr2, tape.fr, drp, dxr, true, ws);
  int pair = 0;
  for (int i = 0; i < kNumBalls; ++i)
    for (int j = 0; j < kNumBalls; ++j) {
      if (j == i) continue;
      for (size_t q = 0; q < half; ++q) {
        db[i].v[q] += dxr[pair].v[q];
        db[j].v[q] += dxr[pair].v[half + q];
      }
      ++pair;
    }
}

template <typename T>
void Model<T>::backward_rollout(WindowTape<T>& tape, const BoxSeq<T>& dpred, ModelGrads<T>& g,
                                Tensor<T>& dmap) const {
  Workspace<T>& ws = tape.ws;
  const int fc = cfg_.backbone.feature_channels;
  const int k = cfg_.roi_size;
  const int horizon = static_cast<int>(dpred.size());
  const int n_z = static_cast<int>(tape.z.size());
  if (dmap.c != fc || dmap.h != cfg_.map_h() || dmap.w != cfg_.map_w())
    dmap.resize(fc, cfg_.map_h(), cfg_.map_w());

  std::vector<std::array<Tensor<T>, kNumBalls>> dz(n_z);
  for (auto& arr : dz)
    for (auto& t : arr) t.resize(fc, k, k);

  for (int s = horizon - 1; s >= 0; --s) {
    StepTape<T>& st = tape.steps[s];
    // decoder + sigmoid
    std::array<Tensor<T>, kNumBalls> dbnext;
    for (int i = 0; i < kNumBalls; ++i) {
      dbnext[i].resize(fc, k, k);
      std::vector<T> dy(4);
      for (int j = 0; j < 4; ++j) {
        const T p = st.pred[i][j];
        dy[j] = dpred[s][i][j] * p * (T(1) - p);
      }
      gap_affine_backward(p_.dec, st.bnext[i], dy, &dbnext[i], g.dec);
    }
    // cin at this step consumed bnext and produced z[t_ref + s]
    if (st.has_cin) cin_backward(st.cin, dz[cfg_.t_ref + s], dbnext, g, ws);

    // f_P consumed z[s..s+3] stacked newest-first
    std::vector<const Tensor<T>*> dbp(kNumBalls);
    for (int i = 0; i < kNumBalls; ++i) dbp[i] = &dbnext[i];
    std::vector<Tensor<T>> dxp;
    block_backward(p_.fp1, p_.fp2, g.fp1, g.fp2, st.fp, dbp, dxp, true, ws);
    const size_t half = static_cast<size_t>(fc) * k * k;
    for (int i = 0; i < kNumBalls; ++i)
      for (int q = 0; q < cfg_.t_ref; ++q) {
        // channel block q holds z[s + t_ref - 1 - q]
        auto& dst = dz[s + cfg_.t_ref - 1 - q][i];
        const T* src = dxp[i].v.data() + static_cast<size_t>(q) * half;
        for (size_t u = 0; u < half; ++u) dst.v[u] += src[u];
      }
  }

  // reference cin steps + RoI scatter (accumulates into dmap)
  for (int t = cfg_.t_ref - 1; t >= 0; --t) {
    std::array<Tensor<T>, kNumBalls> dbf;
    for (auto& d : dbf) d.resize(fc, k, k);
    cin_backward(tape.ref_cin[t], dz[t], dbf, g, ws);
    for (int i = 0; i < kNumBalls; ++i) {
      const auto& arg = tape.roi_arg[t][i];
      for (int c = 0; c < fc; ++c)
        for (int u = 0; u < k * k; ++u)
          dmap.v[static_cast<size_t>(c) * dmap.plane() +
                 arg[static_cast<size_t>(c) * k * k + u]] +=
              dbf[i].v[static_cast<size_t>(c) * k * k + u];
    }
  }
}

template <typename T>
void Model<T>::backward_backbone(WindowTape<T>& tape, Tensor<T>& dmap, ModelGrads<T>& g) const {
  Workspace<T>& ws = tape.ws;

  // hourglass
  const int margin = cfg_.backbone.padding_size - 1;
  std::array<Tensor<T>, 7> dpost;
  dpost[6] = std::move(dmap);
  auto stage_back = [&](int idx, Tensor<T>& dout, bool need_dx) -> Tensor<T> {
    relu_backward(tape.hg.post[idx], dout);
    Tensor<T> draw;
    crop_center_backward(dout, margin, draw);
    Tensor<T> dx;
    if (need_dx) dx.resize(tape.hg.in[idx].c, tape.hg.in[idx].h, tape.hg.in[idx].w);
    conv_backward(p_.hg[idx], tape.hg.in[idx], draw, need_dx ? &dx : nullptr, g.hg[idx], ws);
    return dx;
  };

  for (int c = 0; c < 3; ++c) {
    dpost[c].resize(tape.hg.post[c].c, tape.hg.post[c].h, tape.hg.post[c].w);
  }
  dpost[3].resize(tape.hg.post[3].c, tape.hg.post[3].h, tape.hg.post[3].w);
  dpost[4].resize(tape.hg.post[4].c, tape.hg.post[4].h, tape.hg.post[4].w);
  dpost[5].resize(tape.hg.post[5].c, tape.hg.post[5].h, tape.hg.post[5].w);

  // decoder side: in6 = up(post5) + post0, in5 = up(post4) + post1, in4 = up(post3) + post2
  {
    Tensor<T> din6 = stage_back(6, dpost[6], true);
    upsample2_backward(din6, dpost[5]);
    add_inplace(dpost[0], din6);
  }
  {
    Tensor<T> din5 = stage_back(5, dpost[5], true);
    upsample2_backward(din5, dpost[4]);
    add_inplace(dpost[1], din5);
  }
  {
    Tensor<T> din4 = stage_back(4, dpost[4], true);
    upsample2_backward(din4, dpost[3]);
    add_inplace(dpost[2], din4);
  }
  // encoder side: in3 = pool(post2), in2 = pool(post1), in1 = pool(post0)
  {
    Tensor<T> din3 = stage_back(3, dpost[3], true);
    maxpool2_backward(din3, tape.hg.pool_arg[2], dpost[2]);
  }
  {
    Tensor<T> din2 = stage_back(2, dpost[2], true);
    maxpool2_backward(din2, tape.hg.pool_arg[1], dpost[1]);
  }
  {
    Tensor<T> din1 = stage_back(1, dpost[1], true);
    maxpool2_backward(din1, tape.hg.pool_arg[0], dpost[0]);
  }
  const bool need_input_grad = tape.used_head;
  Tensor<T> dhg_in = stage_back(0, dpost[0], need_input_grad);

  if (!tape.used_head) return;

  // head blocks, reverse order
  auto res_back = [&](const ResBlockP<T>& blk, ResBlockG<T>& gb, const Tensor<T>& x,
                      const Tensor<T>& pre, const Tensor<T>& out, Tensor<T>& dout,
                      bool need_dx) -> Tensor<T> {
    relu_backward(out, dout);
    Tensor<T> dx;
    if (need_dx) dx.resize(x.c, x.h, x.w);
    Tensor<T> dpre(pre.c, pre.h, pre.w);
    conv_backward(blk.c2, pre, dout, &dpre, gb.c2, ws);
    conv_backward(blk.skip, x, dout, need_dx ? &dx : nullptr, gb.skip, ws);
    relu_backward(pre, dpre);
    conv_backward(blk.c1, x, dpre, need_dx ? &dx : nullptr, gb.c1, ws);
    return dx;
  };

  Tensor<T> dh1 = res_back(p_.head2, g.head2, tape.head.b1_out, tape.head.b2_pre,
                           tape.head.b2_out, dhg_in, true);
  res_back(p_.head1, g.head1, tape.head.x, tape.head.b1_pre, tape.head.b1_out, dh1, false);
}

template <typename T>
void Model<T>::backward(const WindowInput<T>&, WindowTape<T>& tape, const BoxSeq<T>& dpred,
                        ModelGrads<T>& g) const {
  Tensor<T> dmap;
  backward_rollout(tape, dpred, g, dmap);
  backward_backbone(tape, dmap, g);
}

#define PADPROBE_MODEL_INSTANTIATE(T)                              \
  template struct ModelGrads<T>;                                   \
  template class Model<T>;                                         \
  template void init_params<T>(const ModelConfig&, uint64_t, ModelParams<T>&); \
  template size_t active_param_count<T>(ModelParams<T>&);

PADPROBE_MODEL_INSTANTIATE(float)
PADPROBE_MODEL_INSTANTIATE(double)
#undef PADPROBE_MODEL_INSTANTIATE

}  // namespace padprobe
