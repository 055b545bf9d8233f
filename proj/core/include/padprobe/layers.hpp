#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "padprobe/rng.hpp"
#include "padprobe/tensor.hpp"

namespace padprobe {

enum class PaddingMode { Zero, Reflect, Replicate, Circular };

std::string to_string(PaddingMode m);
PaddingMode padding_mode_from_string(const std::string& s);

// Maps a padded coordinate q in [-pad, n+pad) to a source index, -1 for the
// zero-pad halo. Reflect mirrors without repeating the edge sample.
int pad_source_index(PaddingMode mode, int q, int n);

template <typename T>
struct ConvLayer {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
  PaddingMode mode = PaddingMode::Zero;
  bool bias = true;
  std::vector<T> W;  // [out_c][in_c][k][k]
  std::vector<T> b;  // [out_c], present even when bias is off (stays zero)

  void setup(int in, int out, int kernel, int stride_, int pad_, PaddingMode m, bool bias_);
  void init(Rng& rng);  // U(-s, s), s = 1/sqrt(in_c*k*k), bias included when on
  size_t param_count() const { return W.size() + (bias ? b.size() : 0); }
};

template <typename T>
struct ConvGrad {
  std::vector<T> dW;
  std::vector<T> db;
  void match(const ConvLayer<T>& l) {
    dW.assign(l.W.size(), T(0));
    db.assign(l.b.size(), T(0));
  }
};

// Scratch shared across conv calls; grows monotonically.
template <typename T>
struct Workspace {
  std::vector<T> col;
  std::vector<T> dcol;
  std::vector<int32_t> map;
};

template <typename T>
void conv_out_shape(const ConvLayer<T>& l, int h, int w, int& oh, int& ow);

// True when every channel plane is bitwise constant; c gets the channel values.
template <typename T>
bool per_channel_constant(const Tensor<T>& x, std::vector<T>& c);

// One sample. y gets the raw (uncropped) output extent.
template <typename T>
void conv_forward(const ConvLayer<T>& l, const Tensor<T>& x, Tensor<T>& y, Workspace<T>& ws);

// dx may be null to skip input gradients; grads accumulate (+=). An empty dx
// is sized and zeroed first, a pre-sized one is accumulated into.
template <typename T>
void conv_backward(const ConvLayer<T>& l, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx,
                   ConvGrad<T>& g, Workspace<T>& ws);

// N same-shaped samples share one im2col + GEMM; the per-ball 4x4 tensors are
// far too small to feed GEMM one at a time.
template <typename T>
void conv_forward_batch(const ConvLayer<T>& l, const std::vector<const Tensor<T>*>& xs,
                        std::vector<Tensor<T>>& ys, Workspace<T>& ws);
template <typename T>
void conv_backward_batch(const ConvLayer<T>& l, const std::vector<const Tensor<T>*>& xs,
                         const std::vector<const Tensor<T>*>& dys,
                         const std::vector<Tensor<T>*>& dxs, ConvGrad<T>& g, Workspace<T>& ws);

// Center crop by margin m per side; backward embeds dy in zeros.
template <typename T>
void crop_center(const Tensor<T>& x, int margin, Tensor<T>& y);
template <typename T>
void crop_center_backward(const Tensor<T>& dy, int margin, Tensor<T>& dx);

template <typename T>
void relu(Tensor<T>& x);
// mask from the forward output: dx = dy where y > 0
template <typename T>
void relu_backward(const Tensor<T>& y, Tensor<T>& dy);

// 2x2/stride-2 max pool; even input dims required. argmax in [0,4) per output.
// Both backward passes accumulate; an empty dx is sized and zeroed first.
template <typename T>
void maxpool2(const Tensor<T>& x, Tensor<T>& y, std::vector<uint8_t>& argmax);
template <typename T>
void maxpool2_backward(const Tensor<T>& dy, const std::vector<uint8_t>& argmax, Tensor<T>& dx);

template <typename T>
void upsample2(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void upsample2_backward(const Tensor<T>& dy, Tensor<T>& dx);

template <typename T>
void add_inplace(Tensor<T>& y, const Tensor<T>& x);

// Fully connected head over globally averaged features: out = A * gap(x) + b.
template <typename T>
struct AffineLayer {
  int in_c = 0, out = 0;
  std::vector<T> A;  // [out][in_c]
  std::vector<T> b;  // [out]
  void setup(int in, int out_);
  void init(Rng& rng);
  size_t param_count() const { return A.size() + b.size(); }
};

template <typename T>
struct AffineGrad {
  std::vector<T> dA, db;
  void match(const AffineLayer<T>& l) {
    dA.assign(l.A.size(), T(0));
    db.assign(l.b.size(), T(0));
  }
};

template <typename T>
void gap_affine_forward(const AffineLayer<T>& l, const Tensor<T>& x, std::vector<T>& out);
template <typename T>
void gap_affine_backward(const AffineLayer<T>& l, const Tensor<T>& x, const std::vector<T>& dout,
                         Tensor<T>* dx, AffineGrad<T>& g);

template <typename T>
T sigmoid(T v);

}  // namespace padprobe
