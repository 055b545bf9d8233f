#include "padprobe/sim.hpp"

#include <cmath>

namespace padprobe {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSeparationEps = 1e-7;   // post-resolution pair clearance
constexpr double kPlacementGap = 1e-3;    // extra spacing at init
constexpr int kPlacementAttempts = 10000;

bool in_bar_band(const EnvContext& env, double x, double margin) {
  return x > env.bar_left() - env.ball_radius() - margin &&
         x < env.bar_right() + env.ball_radius() + margin;
}

// Mirror reflection keeps |v| bit-exact, so kinetic energy is conserved to
// rounding of the position mirror only.
bool resolve_walls(const EnvContext& env, BallState& b) {
  bool changed = false;
  const double lo_x = env.min_x(), hi_x = env.max_x();
  const double lo_y = env.min_y(), hi_y = env.max_y();
  if (b.pos.x < lo_x) {
    b.pos.x = 2.0 * lo_x - b.pos.x;
    if (b.vel.x < 0) b.vel.x = -b.vel.x;
    changed = true;
  } else if (b.pos.x > hi_x) {
    b.pos.x = 2.0 * hi_x - b.pos.x;
    if (b.vel.x > 0) b.vel.x = -b.vel.x;
    changed = true;
  }
  if (b.pos.y < lo_y) {
    b.pos.y = 2.0 * lo_y - b.pos.y;
    if (b.vel.y < 0) b.vel.y = -b.vel.y;
    changed = true;
  } else if (b.pos.y > hi_y) {
    b.pos.y = 2.0 * hi_y - b.pos.y;
    if (b.vel.y > 0) b.vel.y = -b.vel.y;
    changed = true;
  }
  if (env.kind == EnvKind::Split && in_bar_band(env, b.pos.x, 0.0)) {
    const double r = env.ball_radius();
    if (b.pos.x < env.bar_center_x) {
      const double bound = env.bar_left() - r;
      b.pos.x = 2.0 * bound - b.pos.x;
      if (b.vel.x > 0) b.vel.x = -b.vel.x;
    } else {
      const double bound = env.bar_right() + r;
      b.pos.x = 2.0 * bound - b.pos.x;
      if (b.vel.x < 0) b.vel.x = -b.vel.x;
    }
    changed = true;
  }
  return changed;
}

// Equal masses: elastic contact swaps the normal velocity components.
// The positional push is symmetric and leaves velocities (hence energy) alone.
bool resolve_pair(const EnvContext& env, BallState& a, BallState& b) {
  const double min_d = 2.0 * env.ball_radius();
  const Vec2 d = b.pos - a.pos;
  const double d2 = norm2(d);
  if (d2 >= min_d * min_d) return false;
  const double dist = std::sqrt(d2);
  const Vec2 n = dist > 1e-12 ? d * (1.0 / dist) : Vec2{1.0, 0.0};
  const double push = 0.5 * (min_d - dist) + kSeparationEps;
  a.pos = a.pos - n * push;
  b.pos = b.pos + n * push;
  const double rel_n = dot(b.vel - a.vel, n);
  if (rel_n < 0) {
    const double an = dot(a.vel, n);
    const double bn = dot(b.vel, n);
    a.vel = a.vel + n * (bn - an);
    b.vel = b.vel + n * (an - bn);
  }
  return true;
}

void resolve(WorldState& s) {
  for (int iter = 0; iter < kMaxResolveIters; ++iter) {
    bool any = false;
    for (auto& b : s.balls) any |= resolve_walls(s.env, b);
    for (int i = 0; i < kNumBalls; ++i)
      for (int j = i + 1; j < kNumBalls; ++j)
        any |= resolve_pair(s.env, s.balls[i], s.balls[j]);
    if (!any) return;
  }
  // Safety clamp; with substep moves ≤ 0.75 px the loop above converges long
  // before the iteration cap, so this is dead weight in practice.
  for (auto& b : s.balls) {
    b.pos.x = std::fmin(std::fmax(b.pos.x, s.env.min_x()), s.env.max_x());
    b.pos.y = std::fmin(std::fmax(b.pos.y, s.env.min_y()), s.env.max_y());
  }
}

}  // namespace

void EnvContext::validate() const {
  switch (kind) {
    case EnvKind::Plain:
      if (width != 64 || height != 64 || border_size != 0)
        throw std::invalid_argument("plain env must be 64x64 with no border");
      break;
    case EnvKind::Border:
      if (width != 192 || height != 96)
        throw std::invalid_argument("border env must be 192x96");
      if (border_size < 0 || border_size > 15)
        throw std::invalid_argument("border_size out of range [0,15]");
      break;
    case EnvKind::Split:
      if (width != 192 || height != 96)
        throw std::invalid_argument("split env must be 192x96");
      if (bar_center_x < 64 || bar_center_x > 128)
        throw std::invalid_argument("bar_center_x out of range [64,128]");
      break;
  }
}

EnvContext make_plain_env() { return EnvContext{EnvKind::Plain, 64, 64, 0, 0}; }

EnvContext make_border_env(int border_size) {
  EnvContext e{EnvKind::Border, 192, 96, border_size, 0};
  e.validate();
  return e;
}

EnvContext make_split_env(int bar_center_x) {
  EnvContext e{EnvKind::Split, 192, 96, 0, bar_center_x};
  e.validate();
  return e;
}

WorldState init_world(uint64_t seed, const EnvContext& env) {
  env.validate();
  Rng rng(seed);
  WorldState s;
  s.env = env;
  const double min_d = 2.0 * env.ball_radius() + kPlacementGap;
  for (int i = 0; i < kNumBalls; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const double x = rng.uniform(env.min_x(), env.max_x());
      const double y = rng.uniform(env.min_y(), env.max_y());
      if (env.kind == EnvKind::Split && in_bar_band(env, x, kPlacementGap)) continue;
      bool clear = true;
      for (int j = 0; j < i; ++j) {
        const Vec2 d = Vec2{x, y} - s.balls[j].pos;
        if (norm2(d) < min_d * min_d) {
          clear = false;
          break;
        }
      }
      if (clear) {
        s.balls[i].pos = {x, y};
        placed = true;
      }
    }
    if (!placed) throw SimError("could not place ball without overlap");
  }
  for (int i = 0; i < kNumBalls; ++i) {
    const double speed = rng.uniform(kSpeedMin, kSpeedMax);
    const double angle = rng.uniform(0.0, 2.0 * kPi);
    s.balls[i].vel = {speed * std::cos(angle), speed * std::sin(angle)};
  }
  return s;
}

WorldState step(const WorldState& in) {
  WorldState s = in;
  const double dt = 1.0 / kSubstepsPerFrame;
  for (int sub = 0; sub < kSubstepsPerFrame; ++sub) {
    for (auto& b : s.balls) b.pos = b.pos + b.vel * dt;
    resolve(s);
  }
  s.frame_index = in.frame_index + 1;
  return s;
}

std::vector<WorldState> simulate(uint64_t seed, const EnvContext& env, int n_frames) {
  std::vector<WorldState> out;
  out.reserve(n_frames);
  out.push_back(init_world(seed, env));
  for (int f = 1; f < n_frames; ++f) out.push_back(step(out.back()));
  return out;
}

double kinetic_energy(const WorldState& s) {
  double e = 0.0;
  for (const auto& b : s.balls) e += 0.5 * norm2(b.vel);
  return e;
}

Box ball_box(const WorldState& s, int ball) {
  const double r = s.env.ball_radius();
  const auto& p = s.balls[ball].pos;
  Box b{p.x - r, p.y - r, p.x + r, p.y + r};
  b.x0 = std::fmax(b.x0, 0.0);
  b.y0 = std::fmax(b.y0, 0.0);
  b.x1 = std::fmin(b.x1, static_cast<double>(s.env.width));
  b.y1 = std::fmin(b.y1, static_cast<double>(s.env.height));
  return b;
}

StateViolations validate_state(const WorldState& s, double tol) {
  StateViolations v;
  const auto& env = s.env;
  const double r = env.ball_radius();
  for (const auto& b : s.balls) {
    bool ok = b.pos.x >= env.min_x() - tol && b.pos.x <= env.max_x() + tol &&
              b.pos.y >= env.min_y() - tol && b.pos.y <= env.max_y() + tol;
    if (ok && env.kind == EnvKind::Split) {
      ok = b.pos.x <= env.bar_left() - r + tol || b.pos.x >= env.bar_right() + r - tol;
    }
    if (!ok) ++v.containment;
  }
  const double min_d = 2.0 * r;
  for (int i = 0; i < kNumBalls; ++i)
    for (int j = i + 1; j < kNumBalls; ++j) {
      if (norm2(s.balls[j].pos - s.balls[i].pos) < (min_d - tol) * (min_d - tol)) ++v.overlap;
    }
  return v;
}

}  // namespace padprobe
