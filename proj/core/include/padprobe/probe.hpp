#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "padprobe/dataset.hpp"
#include "padprobe/model.hpp"
#include "padprobe/tensor.hpp"

namespace padprobe {

// Deviation threshold is relative to each channel's value scale (max |v|);
// float accumulation across the hourglass rules out an absolute cutoff.
constexpr double kUniformityTol = 1e-5;

struct UniformityStats {
  std::vector<double> channel_dev;  // max over cells of |v - channel mean|
  double mean_variance = 0.0;       // mean over channels of spatial variance
  double max_rel_dev = 0.0;         // max over channels of dev / channel scale
  bool is_uniform = false;
};

template <typename T>
UniformityStats uniformity(const Tensor<T>& map, double tolerance);

struct MatrixCell {
  InputMode input_mode = InputMode::Visual;
  PaddingMode padding_mode = PaddingMode::Zero;
  bool use_bias = true;
  bool is_uniform = false;
  double max_rel_dev = 0.0;
};

// 5 inputs x 4 paddings x 2 bias settings on an untrained seeded backbone.
// Visual cells run real rendered frames through the head.
std::vector<MatrixCell> uniformity_matrix(uint64_t seed, int padding_size = 1);

// The reference pattern the matrix must reproduce: uniform for
// {AllZeros, AllOnes} x {Reflect, Replicate, Circular}, plus AllZeros x Zero
// when bias is off.
bool expected_uniform(InputMode im, PaddingMode pm, bool use_bias);

std::string format_matrix(const std::vector<MatrixCell>& cells);

// Per-step constant box minimizing squared error over the train split's eval
// windows (the per-step mean over windows and balls), kEvalHorizon steps.
BoxSeq<double> constant_prediction_oracle(const Dataset& train);

// Per-channel grayscale heatmaps, min-max normalized; constant channels
// render mid-gray. Writes channel_%03d.png, returns file count.
template <typename T>
int export_feature_figures(const Tensor<T>& map, const std::filesystem::path& out_dir);

}  // namespace padprobe
