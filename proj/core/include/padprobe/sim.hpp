#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "padprobe/geometry.hpp"
#include "padprobe/rng.hpp"

namespace padprobe {

struct SimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class EnvKind { Plain, Border, Split };

constexpr int kNumBalls = 3;
constexpr int kFramesPerVideo = 100;
constexpr int kSubstepsPerFrame = 4;
constexpr int kMaxResolveIters = 8;
constexpr double kSpeedMin = 1.0;  // px per frame
constexpr double kSpeedMax = 3.0;
constexpr int kBarWidth = 5;  // px, Split only

// Static arena description. Width/height are fixed per kind; border_size and
// bar_center_x are sampled per video by the dataset generator.
struct EnvContext {
  EnvKind kind = EnvKind::Plain;
  int width = 64;
  int height = 64;
  int border_size = 0;    // Border only
  int bar_center_x = 0;   // Split only

  double ball_radius() const { return kind == EnvKind::Plain ? 2.0 : 3.0; }
  // free-space extents for ball centers
  double min_x() const { return inset() + ball_radius(); }
  double max_x() const { return width - inset() - ball_radius(); }
  double min_y() const { return inset() + ball_radius(); }
  double max_y() const { return height - inset() - ball_radius(); }
  double inset() const { return kind == EnvKind::Border ? border_size : 0; }
  double bar_left() const { return bar_center_x - 0.5 * kBarWidth; }
  double bar_right() const { return bar_center_x + 0.5 * kBarWidth; }

  void validate() const;
};

EnvContext make_plain_env();
EnvContext make_border_env(int border_size);
EnvContext make_split_env(int bar_center_x);

struct BallState {
  Vec2 pos;
  Vec2 vel;  // px per frame
};

struct WorldState {
  EnvContext env;
  std::array<BallState, kNumBalls> balls;
  int frame_index = 0;
};

// Rejection-sampled non-overlapping placement; throws SimError if the arena
// cannot host the balls.
WorldState init_world(uint64_t seed, const EnvContext& env);

// One rendered-frame step (kSubstepsPerFrame substeps, collisions resolved
// walls first then pairs in ascending index order).
WorldState step(const WorldState& s);

// States at frame boundaries; result[0] is the initial state, size n_frames.
std::vector<WorldState> simulate(uint64_t seed, const EnvContext& env, int n_frames);

double kinetic_energy(const WorldState& s);

// Tight box around a ball, clipped to the image rectangle.
Box ball_box(const WorldState& s, int ball);

struct StateViolations {
  int containment = 0;  // ball center outside its legal interval
  int overlap = 0;      // pair closer than 2r
};
StateViolations validate_state(const WorldState& s, double tol = 1e-9);

}  // namespace padprobe
