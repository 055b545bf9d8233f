#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "padprobe/dataset.hpp"
#include "padprobe/geometry.hpp"
#include "padprobe/layers.hpp"
#include "padprobe/rng.hpp"
#include "padprobe/tensor.hpp"

namespace padprobe {

enum class InputMode { Visual, AllZeros, AllOnes, FixedRandom, Random };

std::string to_string(InputMode m);
InputMode input_mode_from_string(const std::string& s);

struct BackboneConfig {
  PaddingMode padding_mode = PaddingMode::Zero;
  int padding_size = 1;  // >= 1; dims restored by post-conv crop
  bool use_bias = true;
  InputMode input_mode = InputMode::Visual;
  int feature_channels = 64;
  int downsample_factor = 4;  // fixed by the two stride-2 head blocks

  void validate() const;
};

struct ModelConfig {
  BackboneConfig backbone;
  int frame_w = 64;
  int frame_h = 64;
  int roi_size = 4;
  int cin_hidden = 16;
  int t_ref = kRefFrames;

  int map_w() const { return frame_w / backbone.downsample_factor; }
  int map_h() const { return frame_h / backbone.downsample_factor; }
  // head stride 4 and three pooling levels need /32 divisibility
  void validate() const;
};

template <typename T>
struct ResBlockP {
  ConvLayer<T> c1, c2, skip;  // c1 3x3/s2, c2 3x3/s1, skip 1x1/s2
};
template <typename T>
struct ResBlockG {
  ConvGrad<T> c1, c2, skip;
};

template <typename T>
struct ModelParams {
  ResBlockP<T> head1, head2;
  std::array<ConvLayer<T>, 7> hg;  // enc 0..3, dec 4..6
  // CIN blocks: two 3x3 zero-pad convs each, hidden ReLU, linear output
  ConvLayer<T> fo1, fo2, fr1, fr2, fa1, fa2, fz1, fz2, fp1, fp2;
  AffineLayer<T> dec;
};

template <typename T>
struct ModelGrads {
  ResBlockG<T> head1, head2;
  std::array<ConvGrad<T>, 7> hg;
  ConvGrad<T> fo1, fo2, fr1, fr2, fa1, fa2, fz1, fz2, fp1, fp2;
  AffineGrad<T> dec;

  void match(const ModelParams<T>& p);
  void zero();
};

// Fixed traversal order shared by Adam, checkpoints, and the gradient check.
// fc(name, ConvLayer&, ConvGrad*), fa(name, AffineLayer&, AffineGrad*).
template <typename T, typename FC, typename FA>
void visit_model(ModelParams<T>& p, ModelGrads<T>* g, FC&& fc, FA&& fa) {
  fc("head1.c1", p.head1.c1, g ? &g->head1.c1 : nullptr);
  fc("head1.c2", p.head1.c2, g ? &g->head1.c2 : nullptr);
  fc("head1.skip", p.head1.skip, g ? &g->head1.skip : nullptr);
  fc("head2.c1", p.head2.c1, g ? &g->head2.c1 : nullptr);
  fc("head2.c2", p.head2.c2, g ? &g->head2.c2 : nullptr);
  fc("head2.skip", p.head2.skip, g ? &g->head2.skip : nullptr);
  for (int i = 0; i < 7; ++i)
    fc(("hg" + std::to_string(i)).c_str(), p.hg[i], g ? &g->hg[i] : nullptr);
  fc("fo1", p.fo1, g ? &g->fo1 : nullptr);
  fc("fo2", p.fo2, g ? &g->fo2 : nullptr);
  fc("fr1", p.fr1, g ? &g->fr1 : nullptr);
  fc("fr2", p.fr2, g ? &g->fr2 : nullptr);
  fc("fa1", p.fa1, g ? &g->fa1 : nullptr);
  fc("fa2", p.fa2, g ? &g->fa2 : nullptr);
  fc("fz1", p.fz1, g ? &g->fz1 : nullptr);
  fc("fz2", p.fz2, g ? &g->fz2 : nullptr);
  fc("fp1", p.fp1, g ? &g->fp1 : nullptr);
  fc("fp2", p.fp2, g ? &g->fp2 : nullptr);
  fa("dec", p.dec, g ? &g->dec : nullptr);
}

// ---- tapes (saved activations for backward) ----

template <typename T>
struct HeadTape {
  Tensor<T> x;        // stacked frames
  Tensor<T> b1_pre;   // block1 post-relu of c1
  Tensor<T> b1_out;   // block1 output (post-relu)
  Tensor<T> b2_pre;
  Tensor<T> b2_out;
};

template <typename T>
struct HourglassTape {
  std::array<Tensor<T>, 7> in;    // input to conv i
  std::array<Tensor<T>, 7> post;  // relu(crop(conv_i(in)))
  std::array<std::vector<uint8_t>, 3> pool_arg;
};

// per-block saved state for a batched 2-layer conv block
template <typename T>
struct BlockTape {
  std::vector<Tensor<T>> x;  // conv1 inputs
  std::vector<Tensor<T>> a;  // post-relu hidden
};

template <typename T>
struct CinTape {
  BlockTape<T> fo;  // 3 samples
  BlockTape<T> fr;  // 6 ordered pairs: (0,1),(0,2),(1,0),(1,2),(2,0),(2,1)
  BlockTape<T> fa;  // inputs are s_i = o_i + sum_j r_ij
  BlockTape<T> fz;  // inputs are concat(b_i, e_i)
};

template <typename T>
struct StepTape {
  BlockTape<T> fp;                       // inputs: concat of 4 z (newest first)
  std::array<Tensor<T>, kNumBalls> bnext;
  std::array<std::array<T, 4>, kNumBalls> pred;  // sigmoid outputs
  CinTape<T> cin;                        // absent on the last step
  bool has_cin = false;
};

template <typename T>
struct WindowTape {
  bool used_head = false;
  HeadTape<T> head;
  HourglassTape<T> hg;  // in[0] is the hourglass input, post[6] the backbone output
  std::array<std::array<std::vector<int32_t>, kNumBalls>, kRefFrames> roi_arg;
  std::array<std::array<Tensor<T>, kNumBalls>, kRefFrames> bf;
  std::array<CinTape<T>, kRefFrames> ref_cin;
  std::vector<std::array<Tensor<T>, kNumBalls>> z;  // z[0..3] refs, then per step
  std::vector<StepTape<T>> steps;
  Workspace<T> ws;
};

// horizon x ball x (cx, cy, w, h), normalized
template <typename T>
using BoxSeq = std::vector<std::array<std::array<T, 4>, kNumBalls>>;

template <typename T>
struct WindowInput {
  Tensor<T> frames;  // 3*t_ref x H x W in [0,1]; empty unless Visual
  std::array<std::array<Box, kNumBalls>, kRefFrames> ref_boxes;  // pixel coords
  BoxSeq<T> targets;                                             // normalized
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t trial_seed);

  const ModelConfig& config() const { return cfg_; }
  uint64_t trial_seed() const { return trial_seed_; }
  ModelParams<T>& params() { return p_; }
  const ModelParams<T>& params() const { return p_; }

  // -- backbone --
  Tensor<T> head_downsample(const Tensor<T>& frames, HeadTape<T>* tape, Workspace<T>& ws) const;
  // head_out may be null unless input_mode == Visual
  Tensor<T> make_hourglass_input(const Tensor<T>* head_out, Rng& rng) const;
  Tensor<T> hourglass_refine(const Tensor<T>& input, HourglassTape<T>* tape,
                             Workspace<T>& ws) const;
  // frames null for synthetic modes; tape optional
  Tensor<T> backbone_forward(const Tensor<T>* frames, Rng& rng, WindowTape<T>* tape,
                             Workspace<T>& ws) const;

  // -- interaction --
  // argmax (size c*k*k, spatial cell per channel-bin) is written when non-null
  Tensor<T> roi_pool(const Tensor<T>& map, const Box& box_px, std::vector<int32_t>* argmax) const;
  void cin_step(const std::array<Tensor<T>, kNumBalls>& b, std::array<Tensor<T>, kNumBalls>& e,
                std::array<Tensor<T>, kNumBalls>& z, CinTape<T>* tape, Workspace<T>& ws) const;
  // z_hist: exactly t_ref states, newest last; returns next features + boxes
  void predict_next(const std::array<Tensor<T>, kNumBalls>* z_hist,
                    std::array<Tensor<T>, kNumBalls>& bnext,
                    std::array<std::array<T, 4>, kNumBalls>& boxes, BlockTape<T>* tape,
                    Workspace<T>& ws) const;

  // full forward; tape may be null (inference only)
  BoxSeq<T> rollout(const WindowInput<T>& in, int horizon, Rng& rng, WindowTape<T>* tape) const;
  // rollout from a precomputed backbone output; lets callers share one
  // backbone pass across windows when the input does not depend on the window
  BoxSeq<T> rollout_given_map(const Tensor<T>& map, const WindowInput<T>& in, int horizon,
                              WindowTape<T>* tape) const;

  // reverse pass; dpred is dLoss/dprediction, same shape as the rollout output
  void backward(const WindowInput<T>& in, WindowTape<T>& tape, const BoxSeq<T>& dpred,
                ModelGrads<T>& g) const;
  // reverse of rollout_given_map; accumulates the feature-map gradient into dmap
  void backward_rollout(WindowTape<T>& tape, const BoxSeq<T>& dpred, ModelGrads<T>& g,
                        Tensor<T>& dmap) const;
  // reverse of backbone_forward; dmap is consumed
  void backward_backbone(WindowTape<T>& tape, Tensor<T>& dmap, ModelGrads<T>& g) const;

  int64_t degenerate_roi_count() const { return degenerate_roi_; }

 private:
  ModelConfig cfg_;
  uint64_t trial_seed_ = 0;
  ModelParams<T> p_;
  Tensor<T> fixed_random_;
  mutable int64_t degenerate_roi_ = 0;

  void cin_backward(const CinTape<T>& tape, const std::array<Tensor<T>, kNumBalls>& dz,
                    std::array<Tensor<T>, kNumBalls>& db, ModelGrads<T>& g,
                    Workspace<T>& ws) const;
};

template <typename T>
void init_params(const ModelConfig& cfg, uint64_t seed, ModelParams<T>& p);

// flat parameter count over active vectors (bias vectors only when enabled)
template <typename T>
size_t active_param_count(ModelParams<T>& p);

}  // namespace padprobe
