#include "padprobe/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace padprobe {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapRM = Eigen::Map<const RowMat<T>>;

// map[kk * S + s] = source spatial index in x, or -1 inside a zero halo
void build_map(PaddingMode mode, int h, int w, int k, int stride, int pad, int oh, int ow,
               std::vector<int32_t>& map) {
  map.resize(static_cast<size_t>(k) * k * oh * ow);
  const int S = oh * ow;
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx) {
      int32_t* row = map.data() + static_cast<size_t>(ky * k + kx) * S;
      for (int oy = 0; oy < oh; ++oy) {
        const int sy = pad_source_index(mode, oy * stride - pad + ky, h);
        for (int ox = 0; ox < ow; ++ox) {
          const int sx = pad_source_index(mode, ox * stride - pad + kx, w);
          row[oy * ow + ox] = (sy < 0 || sx < 0) ? -1 : sy * w + sx;
        }
      }
    }
}

// Col is (in_c*k*k) x (N*S), row-major
template <typename T>
void im2col(const ConvLayer<T>& l, const std::vector<const Tensor<T>*>& xs, int S,
            const std::vector<int32_t>& map, std::vector<T>& col) {
  const int N = static_cast<int>(xs.size());
  const int kk = l.k * l.k;
  const size_t cols = static_cast<size_t>(N) * S;
  col.resize(static_cast<size_t>(l.in_c) * kk * cols);
  for (int ci = 0; ci < l.in_c; ++ci)
    for (int t = 0; t < kk; ++t) {
      T* dst = col.data() + (static_cast<size_t>(ci) * kk + t) * cols;
      const int32_t* m = map.data() + static_cast<size_t>(t) * S;
      for (int n = 0; n < N; ++n) {
        const T* src = xs[n]->data() + static_cast<size_t>(ci) * xs[n]->plane();
        T* d = dst + static_cast<size_t>(n) * S;
        for (int s = 0; s < S; ++s) d[s] = m[s] >= 0 ? src[m[s]] : T(0);
      }
    }
}

}  // namespace

std::string to_string(PaddingMode m) {
  switch (m) {
    case PaddingMode::Zero: return "zero";
    case PaddingMode::Reflect: return "reflect";
    case PaddingMode::Replicate: return "replicate";
    case PaddingMode::Circular: return "circular";
  }
  return "?";
}

PaddingMode padding_mode_from_string(const std::string& s) {
  if (s == "zero") return PaddingMode::Zero;
  if (s == "reflect") return PaddingMode::Reflect;
  if (s == "replicate") return PaddingMode::Replicate;
  if (s == "circular") return PaddingMode::Circular;
  throw std::invalid_argument("unknown padding mode: " + s);
}

int pad_source_index(PaddingMode mode, int q, int n) {
  if (q >= 0 && q < n) return q;
  switch (mode) {
    case PaddingMode::Zero:
      return -1;
    case PaddingMode::Replicate:
      return q < 0 ? 0 : n - 1;
    case PaddingMode::Reflect: {
      // fold repeatedly; matches edge-excluding reflection for any pad
      if (n == 1) return 0;
      const int period = 2 * (n - 1);
      int r = q % period;
      if (r < 0) r += period;
      return r < n ? r : period - r;
    }
    case PaddingMode::Circular: {
      int r = q % n;
      if (r < 0) r += n;
      return r;
    }
  }
  return -1;
}

template <typename T>
void ConvLayer<T>::setup(int in, int out, int kernel, int stride_, int pad_, PaddingMode m,
                         bool bias_) {
  in_c = in;
  out_c = out;
  k = kernel;
  stride = stride_;
  pad = pad_;
  mode = m;
  bias = bias_;
  W.assign(static_cast<size_t>(out) * in * kernel * kernel, T(0));
  b.assign(out, T(0));
}

template <typename T>
void ConvLayer<T>::init(Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(in_c) * k * k);
  for (auto& v : W) v = static_cast<T>(rng.uniform(-s, s));
  if (bias)
    for (auto& v : b) v = static_cast<T>(rng.uniform(-s, s));
}

template <typename T>
void conv_out_shape(const ConvLayer<T>& l, int h, int w, int& oh, int& ow) {
  oh = (h + 2 * l.pad - l.k) / l.stride + 1;
  ow = (w + 2 * l.pad - l.k) / l.stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv output would be empty");
}

template <typename T>
void conv_forward_batch(const ConvLayer<T>& l, const std::vector<const Tensor<T>*>& xs,
                        std::vector<Tensor<T>>& ys, Workspace<T>& ws) {
  const int N = static_cast<int>(xs.size());
  if (N == 0) return;
  const int h = xs[0]->h, w = xs[0]->w;
  int oh, ow;
  conv_out_shape(l, h, w, oh, ow);
  const int S = oh * ow;
  const int K = l.in_c * l.k * l.k;
  const size_t cols = static_cast<size_t>(N) * S;

  build_map(l.mode, h, w, l.k, l.stride, l.pad, oh, ow, ws.map);
  im2col(l, xs, S, ws.map, ws.col);

  ys.resize(N);
  CMapRM<T> Wm(l.W.data(), l.out_c, K);
  CMapRM<T> Cm(ws.col.data(), K, static_cast<Eigen::Index>(cols));
  if (N == 1) {
    ys[0].resize(l.out_c, oh, ow);
    MapRM<T> Ym(ys[0].data(), l.out_c, S);
    Ym.noalias() = Wm * Cm;
    if (l.bias)
      for (int co = 0; co < l.out_c; ++co) Ym.row(co).array() += l.b[co];
    return;
  }
  ws.dcol.resize(static_cast<size_t>(l.out_c) * cols);  // reuse as Y scratch
  MapRM<T> Ym(ws.dcol.data(), l.out_c, static_cast<Eigen::Index>(cols));
  Ym.noalias() = Wm * Cm;
  for (int n = 0; n < N; ++n) {
    ys[n].resize(l.out_c, oh, ow);
    T* dst = ys[n].data();
    for (int co = 0; co < l.out_c; ++co) {
      const T* src = ws.dcol.data() + static_cast<size_t>(co) * cols + static_cast<size_t>(n) * S;
      const T add = l.bias ? l.b[co] : T(0);
      T* d = dst + static_cast<size_t>(co) * S;
      for (int s = 0; s < S; ++s) d[s] = src[s] + add;
    }
  }
}

template <typename T>
bool per_channel_constant(const Tensor<T>& x, std::vector<T>& c) {
  c.resize(static_cast<size_t>(x.c));
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  for (int ci = 0; ci < x.c; ++ci) {
    const T* p = x.data() + ci * plane;
    const T v0 = p[0];
    for (size_t s = 1; s < plane; ++s)
      if (p[s] != v0) return false;
    c[static_cast<size_t>(ci)] = v0;
  }
  return true;
}

template <typename T>
void conv_forward(const ConvLayer<T>& l, const Tensor<T>& x, Tensor<T>& y, Workspace<T>& ws) {
  // Constant-input fast path. When every input channel is a bitwise constant
  // and the halo reproduces that constant (any non-zero padding mode, or zero
  // padding with an all-zero input), every output cell of channel co equals
  //   sum_ci c[ci] * wsum(co, ci) + b[co]
  // computed once and broadcast. This keeps uniform fields bitwise uniform
  // through the net instead of merely equal to rounding error, so downstream
  // invariance checks can compare exact bits.
  std::vector<T> cvals;
  if (per_channel_constant(x, cvals)) {
    bool halo_ok = l.mode != PaddingMode::Zero;
    if (!halo_ok) {
      halo_ok = true;
      for (const T v : cvals)
        if (v != T(0)) {
          halo_ok = false;
          break;
        }
    }
    if (halo_ok) {
      int oh, ow;
      conv_out_shape(l, x.h, x.w, oh, ow);
      y.resize(l.out_c, oh, ow);
      const int kk = l.k * l.k;
      for (int co = 0; co < l.out_c; ++co) {
        T acc = l.bias ? l.b[static_cast<size_t>(co)] : T(0);
        for (int ci = 0; ci < l.in_c; ++ci) {
          const T* wp = l.W.data() + (static_cast<size_t>(co) * l.in_c + ci) * kk;
          T wsum = T(0);
          for (int t = 0; t < kk; ++t) wsum += wp[t];
          acc += cvals[static_cast<size_t>(ci)] * wsum;
        }
        T* out = y.data() + static_cast<size_t>(co) * oh * ow;
        std::fill(out, out + static_cast<size_t>(oh) * ow, acc);
      }
      return;
    }
  }
  std::vector<const Tensor<T>*> xs{&x};
  std::vector<Tensor<T>> ys;
  conv_forward_batch(l, xs, ys, ws);
  y = std::move(ys[0]);
}

template <typename T>
void conv_backward_batch(const ConvLayer<T>& l, const std::vector<const Tensor<T>*>& xs,
                         const std::vector<const Tensor<T>*>& dys,
                         const std::vector<Tensor<T>*>& dxs, ConvGrad<T>& g, Workspace<T>& ws) {
  const int N = static_cast<int>(xs.size());
  if (N == 0) return;
  const int h = xs[0]->h, w = xs[0]->w;
  int oh, ow;
  conv_out_shape(l, h, w, oh, ow);
  const int S = oh * ow;
  const int K = l.in_c * l.k * l.k;
  const int kk = l.k * l.k;
  const size_t cols = static_cast<size_t>(N) * S;

  build_map(l.mode, h, w, l.k, l.stride, l.pad, oh, ow, ws.map);
  im2col(l, xs, S, ws.map, ws.col);

  // gather dY; N == 1 maps straight onto the caller's buffer
  std::vector<T> dybuf;
  const T* dy_ptr;
  if (N == 1) {
    dy_ptr = dys[0]->data();
  } else {
    dybuf.resize(static_cast<size_t>(l.out_c) * cols);
    for (int n = 0; n < N; ++n) {
      const T* src = dys[n]->data();
      for (int co = 0; co < l.out_c; ++co)
        std::copy(src + static_cast<size_t>(co) * S, src + static_cast<size_t>(co + 1) * S,
                  dybuf.data() + static_cast<size_t>(co) * cols + static_cast<size_t>(n) * S);
    }
    dy_ptr = dybuf.data();
  }
  CMapRM<T> dYm(dy_ptr, l.out_c, static_cast<Eigen::Index>(cols));
  CMapRM<T> Cm(ws.col.data(), K, static_cast<Eigen::Index>(cols));
  MapRM<T> dWm(g.dW.data(), l.out_c, K);
  dWm.noalias() += dYm * Cm.transpose();
  if (l.bias) {
    // serial accumulation: Eigen's vectorized sum peels to an alignment
    // boundary, making the addition order depend on the buffer address;
    // training must be bitwise reproducible
    for (int co = 0; co < l.out_c; ++co) {
      const T* row = dy_ptr + static_cast<size_t>(co) * cols;
      T acc = T(0);
      for (size_t s = 0; s < cols; ++s) acc += row[s];
      g.db[co] += acc;
    }
  }

  bool need_dx = false;
  for (auto* p : dxs) need_dx |= (p != nullptr);
  if (!need_dx) return;

  ws.dcol.resize(static_cast<size_t>(K) * cols);
  MapRM<T> dCm(ws.dcol.data(), K, static_cast<Eigen::Index>(cols));
  CMapRM<T> Wm(l.W.data(), l.out_c, K);
  dCm.noalias() = Wm.transpose() * dYm;

  for (int n = 0; n < N; ++n) {
    if (!dxs[n]) continue;
    Tensor<T>& dx = *dxs[n];
    if (dx.v.empty()) dx.resize(xs[n]->c, h, w);
    if (!dx.same_shape(*xs[n])) throw std::invalid_argument("conv_backward: dx shape mismatch");
    for (int ci = 0; ci < l.in_c; ++ci) {
      T* dplane = dx.data() + static_cast<size_t>(ci) * dx.plane();
      for (int t = 0; t < kk; ++t) {
        const T* src =
            ws.dcol.data() + (static_cast<size_t>(ci) * kk + t) * cols + static_cast<size_t>(n) * S;
        const int32_t* m = ws.map.data() + static_cast<size_t>(t) * S;
        for (int s = 0; s < S; ++s)
          if (m[s] >= 0) dplane[m[s]] += src[s];
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvLayer<T>& l, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx,
                   ConvGrad<T>& g, Workspace<T>& ws) {
  std::vector<const Tensor<T>*> xs{&x};
  std::vector<const Tensor<T>*> dys{&dy};
  std::vector<Tensor<T>*> dxs{dx};
  conv_backward_batch(l, xs, dys, dxs, g, ws);
}

template <typename T>
void crop_center(const Tensor<T>& x, int margin, Tensor<T>& y) {
  if (margin == 0) {
    y = x;
    return;
  }
  const int oh = x.h - 2 * margin, ow = x.w - 2 * margin;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("crop larger than tensor");
  y.resize(x.c, oh, ow);
  for (int c = 0; c < x.c; ++c)
    for (int yy = 0; yy < oh; ++yy) {
      const T* src = x.data() + (static_cast<size_t>(c) * x.h + yy + margin) * x.w + margin;
      std::copy(src, src + ow, y.data() + (static_cast<size_t>(c) * oh + yy) * ow);
    }
}

template <typename T>
void crop_center_backward(const Tensor<T>& dy, int margin, Tensor<T>& dx) {
  if (margin == 0) {
    dx = dy;
    return;
  }
  dx.resize(dy.c, dy.h + 2 * margin, dy.w + 2 * margin);
  for (int c = 0; c < dy.c; ++c)
    for (int yy = 0; yy < dy.h; ++yy) {
      const T* src = dy.data() + (static_cast<size_t>(c) * dy.h + yy) * dy.w;
      std::copy(src, src + dy.w,
                dx.data() + (static_cast<size_t>(c) * dx.h + yy + margin) * dx.w + margin);
    }
}

template <typename T>
void relu(Tensor<T>& x) {
  for (auto& v : x.v)
    if (v < T(0)) v = T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& y, Tensor<T>& dy) {
  for (size_t i = 0; i < dy.v.size(); ++i)
    if (y.v[i] <= T(0)) dy.v[i] = T(0);
}

template <typename T>
void maxpool2(const Tensor<T>& x, Tensor<T>& y, std::vector<uint8_t>& argmax) {
  if ((x.h & 1) || (x.w & 1)) throw std::invalid_argument("maxpool2 needs even dims");
  const int oh = x.h / 2, ow = x.w / 2;
  y.resize(x.c, oh, ow);
  argmax.assign(static_cast<size_t>(x.c) * oh * ow, 0);
  for (int c = 0; c < x.c; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T best = x.at(c, 2 * oy, 2 * ox);
        uint8_t bi = 0;
        for (uint8_t t = 1; t < 4; ++t) {
          const T v = x.at(c, 2 * oy + (t >> 1), 2 * ox + (t & 1));
          if (v > best) {
            best = v;
            bi = t;
          }
        }
        y.at(c, oy, ox) = best;
        argmax[(static_cast<size_t>(c) * oh + oy) * ow + ox] = bi;
      }
}

template <typename T>
void maxpool2_backward(const Tensor<T>& dy, const std::vector<uint8_t>& argmax, Tensor<T>& dx) {
  if (dx.v.empty()) dx.resize(dy.c, dy.h * 2, dy.w * 2);
  for (int c = 0; c < dy.c; ++c)
    for (int oy = 0; oy < dy.h; ++oy)
      for (int ox = 0; ox < dy.w; ++ox) {
        const uint8_t t = argmax[(static_cast<size_t>(c) * dy.h + oy) * dy.w + ox];
        dx.at(c, 2 * oy + (t >> 1), 2 * ox + (t & 1)) += dy.at(c, oy, ox);
      }
}

template <typename T>
void upsample2(const Tensor<T>& x, Tensor<T>& y) {
  y.resize(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c)
    for (int yy = 0; yy < y.h; ++yy) {
      const T* src = x.data() + (static_cast<size_t>(c) * x.h + yy / 2) * x.w;
      T* dst = y.data() + (static_cast<size_t>(c) * y.h + yy) * y.w;
      for (int xx = 0; xx < y.w; ++xx) dst[xx] = src[xx / 2];
    }
}

template <typename T>
void upsample2_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  if (dx.v.empty()) dx.resize(dy.c, dy.h / 2, dy.w / 2);
  for (int c = 0; c < dx.c; ++c)
    for (int yy = 0; yy < dy.h; ++yy) {
      const T* src = dy.data() + (static_cast<size_t>(c) * dy.h + yy) * dy.w;
      T* dst = dx.data() + (static_cast<size_t>(c) * dx.h + yy / 2) * dx.w;
      for (int xx = 0; xx < dy.w; ++xx) dst[xx / 2] += src[xx];
    }
}

template <typename T>
void add_inplace(Tensor<T>& y, const Tensor<T>& x) {
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
}

template <typename T>
void AffineLayer<T>::setup(int in, int out_) {
  in_c = in;
  out = out_;
  A.assign(static_cast<size_t>(in) * out_, T(0));
  b.assign(out_, T(0));
}

template <typename T>
void AffineLayer<T>::init(Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(in_c));
  for (auto& v : A) v = static_cast<T>(rng.uniform(-s, s));
  for (auto& v : b) v = static_cast<T>(rng.uniform(-s, s));
}

template <typename T>
void gap_affine_forward(const AffineLayer<T>& l, const Tensor<T>& x, std::vector<T>& out) {
  const int S = x.plane();
  out.assign(l.out, T(0));
  std::vector<T> g(l.in_c, T(0));
  for (int c = 0; c < l.in_c; ++c) {
    const T* p = x.data() + static_cast<size_t>(c) * S;
    T acc = T(0);
    for (int s = 0; s < S; ++s) acc += p[s];
    g[c] = acc / static_cast<T>(S);
  }
  for (int j = 0; j < l.out; ++j) {
    T acc = l.b[j];
    const T* row = l.A.data() + static_cast<size_t>(j) * l.in_c;
    for (int c = 0; c < l.in_c; ++c) acc += row[c] * g[c];
    out[j] = acc;
  }
}

template <typename T>
void gap_affine_backward(const AffineLayer<T>& l, const Tensor<T>& x, const std::vector<T>& dout,
                         Tensor<T>* dx, AffineGrad<T>& g) {
  const int S = x.plane();
  std::vector<T> gap(l.in_c, T(0));
  for (int c = 0; c < l.in_c; ++c) {
    const T* p = x.data() + static_cast<size_t>(c) * S;
    T acc = T(0);
    for (int s = 0; s < S; ++s) acc += p[s];
    gap[c] = acc / static_cast<T>(S);
  }
  for (int j = 0; j < l.out; ++j) {
    g.db[j] += dout[j];
    T* row = g.dA.data() + static_cast<size_t>(j) * l.in_c;
    for (int c = 0; c < l.in_c; ++c) row[c] += dout[j] * gap[c];
  }
  if (dx) {
    if (dx->v.empty()) dx->resize(x.c, x.h, x.w);
    for (int c = 0; c < l.in_c; ++c) {
      T acc = T(0);
      for (int j = 0; j < l.out; ++j) acc += l.A[static_cast<size_t>(j) * l.in_c + c] * dout[j];
      acc /= static_cast<T>(S);
      T* p = dx->data() + static_cast<size_t>(c) * S;
      for (int s = 0; s < S; ++s) p[s] += acc;
    }
  }
}

template <typename T>
T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

#define PADPROBE_INSTANTIATE(T)                                                                   \
  template struct ConvLayer<T>;                                                                   \
  template struct AffineLayer<T>;                                                                 \
  template void conv_out_shape<T>(const ConvLayer<T>&, int, int, int&, int&);                     \
  template bool per_channel_constant<T>(const Tensor<T>&, std::vector<T>&);                       \
  template void conv_forward<T>(const ConvLayer<T>&, const Tensor<T>&, Tensor<T>&,                \
                                Workspace<T>&);                                                   \
  template void conv_backward<T>(const ConvLayer<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                 Tensor<T>*, ConvGrad<T>&, Workspace<T>&);                        \
  template void conv_forward_batch<T>(const ConvLayer<T>&, const std::vector<const Tensor<T>*>&,  \
                                      std::vector<Tensor<T>>&, Workspace<T>&);                    \
  template void conv_backward_batch<T>(const ConvLayer<T>&, const std::vector<const Tensor<T>*>&, \
                                       const std::vector<const Tensor<T>*>&,                      \
                                       const std::vector<Tensor<T>*>&, ConvGrad<T>&,              \
                                       Workspace<T>&);                                            \
  template void crop_center<T>(const Tensor<T>&, int, Tensor<T>&);                                \
  template void crop_center_backward<T>(const Tensor<T>&, int, Tensor<T>&);                       \
  template void relu<T>(Tensor<T>&);                                                              \
  template void relu_backward<T>(const Tensor<T>&, Tensor<T>&);                                   \
  template void maxpool2<T>(const Tensor<T>&, Tensor<T>&, std::vector<uint8_t>&);                 \
  template void maxpool2_backward<T>(const Tensor<T>&, const std::vector<uint8_t>&, Tensor<T>&);  \
  template void upsample2<T>(const Tensor<T>&, Tensor<T>&);                                       \
  template void upsample2_backward<T>(const Tensor<T>&, Tensor<T>&);                              \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);                                     \
  template void gap_affine_forward<T>(const AffineLayer<T>&, const Tensor<T>&, std::vector<T>&);  \
  template void gap_affine_backward<T>(const AffineLayer<T>&, const Tensor<T>&,                   \
                                       const std::vector<T>&, Tensor<T>*, AffineGrad<T>&);        \
  template T sigmoid<T>(T);

PADPROBE_INSTANTIATE(float)
PADPROBE_INSTANTIATE(double)
#undef PADPROBE_INSTANTIATE

}  // namespace padprobe
