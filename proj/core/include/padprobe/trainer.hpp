#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "padprobe/dataset.hpp"
#include "padprobe/model.hpp"

namespace padprobe {

struct TrainConfig {
  int iterations = 500;
  int batch_size = 8;
  double learning_rate = 1e-3;  // cosine-decayed to 0 over the run
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int horizon = kPredHorizon;
  uint64_t seed = 0;
  // Force the one-rollout-per-window reference path. The shared-backbone and
  // uniform-map shortcuts are algebraically equal to it (the loss is linear in
  // the per-window gradients); tests compare both ways.
  bool disable_fast_paths = false;

  void validate() const;
};

// Budget presets: smoke 500, desk 20000, paper 200000 iterations.
int tier_iterations(const std::string& tier);

// Non-finite batch loss. Carries the offending iteration (0-based).
struct TrainDiverged : std::runtime_error {
  int iteration;
  explicit TrainDiverged(int it);
};

struct TrainResult {
  std::vector<double> loss_curve;  // one entry per iteration
  double final_loss = 0.0;
};

// Mean over steps and balls of the squared l2 distance between predicted and
// target (cx, cy, w, h). When dpred is non-null it receives dLoss/dpred
// scaled by grad_scale (callers fold in 1/batch).
template <typename T>
double window_loss(const BoxSeq<T>& pred, const BoxSeq<T>& target, BoxSeq<T>* dpred,
                   T grad_scale = T(1));

// Assembles frames (Visual only), pixel reference boxes, and normalized
// targets for the window starting at `start`.
template <typename T>
WindowInput<T> make_window_input(const Dataset& ds, int video, int start, int horizon,
                                 const ModelConfig& cfg);

// Adam + deterministic sequential batch accumulation. progress(iteration,
// smoothed loss) fires every 50 iterations when set.
template <typename T>
TrainResult train_model(Model<T>& model, const Dataset& train, const TrainConfig& cfg,
                        const std::function<void(int, double)>& progress = {});

}  // namespace padprobe
