#include <doctest.h>

#include <cmath>
#include <vector>

#include "padprobe/rng.hpp"
#include "padprobe/sim.hpp"

using namespace padprobe;

namespace {

// Independent energy accounting in extended precision; the simulator itself
// never computes energy during stepping, so this is a genuine cross-check.
long double exact_energy(const WorldState& s) {
  long double e = 0.0L;
  for (const BallState& b : s.balls) {
    const long double vx = b.vel.x, vy = b.vel.y;
    e += 0.5L * (vx * vx + vy * vy);
  }
  return e;
}

}  // namespace

TEST_CASE("kinetic energy is conserved across 1e5 random steps") {
  Rng seeds(2024);
  int steps_done = 0;
  long double worst = 0.0L;
  while (steps_done < 100000) {
    EnvContext env;
    switch (seeds.uniform_int(0, 2)) {
      case 0: env = make_plain_env(); break;
      case 1: env = make_border_env(seeds.uniform_int(0, 15)); break;
      default: env = make_split_env(seeds.uniform_int(64, 128)); break;
    }
    WorldState s = init_world(seeds.next_u64(), env);
    long double e0 = exact_energy(s);
    for (int t = 0; t < 200 && steps_done < 100000; ++t, ++steps_done) {
      s = step(s);
      const long double e = exact_energy(s);
      const long double rel = std::fabs((e - e0) / e0);
      worst = std::max(worst, rel);
      e0 = e;  // per-step drift bound
    }
  }
  CHECK(worst <= 1e-9L);
}

TEST_CASE("no containment or overlap violations over 1000 videos") {
  Rng seeds(31);
  int cont = 0, over = 0;
  for (int v = 0; v < 1000; ++v) {
    EnvContext env;
    switch (v % 3) {
      case 0: env = make_plain_env(); break;
      case 1: env = make_border_env(seeds.uniform_int(0, 15)); break;
      default: env = make_split_env(seeds.uniform_int(64, 128)); break;
    }
    const std::vector<WorldState> states = simulate(seeds.next_u64(), env, kFramesPerVideo);
    REQUIRE(states.size() == kFramesPerVideo);
    for (const WorldState& s : states) {
      const StateViolations viol = validate_state(s);
      cont += viol.containment;
      over += viol.overlap;
    }
  }
  CHECK(cont == 0);
  CHECK(over == 0);
}

TEST_CASE("equal seeds give identical trajectories") {
  const EnvContext env = make_border_env(9);
  const auto a = simulate(555, env, 50);
  const auto b = simulate(555, env, 50);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    for (int k = 0; k < kNumBalls; ++k) {
      CHECK(a[i].balls[(size_t)k].pos.x == b[i].balls[(size_t)k].pos.x);
      CHECK(a[i].balls[(size_t)k].pos.y == b[i].balls[(size_t)k].pos.y);
      CHECK(a[i].balls[(size_t)k].vel.x == b[i].balls[(size_t)k].vel.x);
      CHECK(a[i].balls[(size_t)k].vel.y == b[i].balls[(size_t)k].vel.y);
    }
}

TEST_CASE("different seeds diverge") {
  const EnvContext env = make_plain_env();
  const auto a = simulate(1, env, 2);
  const auto b = simulate(2, env, 2);
  bool differs = false;
  for (int k = 0; k < kNumBalls; ++k)
    if (a[0].balls[(size_t)k].pos.x != b[0].balls[(size_t)k].pos.x) differs = true;
  CHECK(differs);
}

TEST_CASE("initial speeds respect the sampling interval") {
  Rng seeds(77);
  for (int i = 0; i < 200; ++i) {
    const WorldState s = init_world(seeds.next_u64(), make_plain_env());
    for (const BallState& b : s.balls) {
      const double speed = std::hypot(b.vel.x, b.vel.y);
      CHECK(speed >= kSpeedMin - 1e-12);
      CHECK(speed <= kSpeedMax + 1e-12);
    }
  }
}

TEST_CASE("split bar separates the two chambers") {
  // Balls starting left of the bar must stay left of it, and vice versa.
  Rng seeds(13);
  for (int trial = 0; trial < 30; ++trial) {
    const EnvContext env = make_split_env(seeds.uniform_int(64, 128));
    const auto states = simulate(seeds.next_u64(), env, kFramesPerVideo);
    for (int k = 0; k < kNumBalls; ++k) {
      const bool left0 = states[0].balls[(size_t)k].pos.x < env.bar_left();
      for (const WorldState& s : states) {
        const double x = s.balls[(size_t)k].pos.x;
        if (left0)
          CHECK(x <= env.bar_left() - env.ball_radius() + 1e-9);
        else
          CHECK(x >= env.bar_right() + env.ball_radius() - 1e-9);
      }
    }
  }
}

TEST_CASE("ball_box is tight and clipped") {
  WorldState s;
  s.env = make_plain_env();
  s.balls[0].pos = {10.0, 20.0};
  const Box b = ball_box(s, 0);
  CHECK(b.x0 == doctest::Approx(8.0));
  CHECK(b.x1 == doctest::Approx(12.0));
  CHECK(b.y0 == doctest::Approx(18.0));
  CHECK(b.y1 == doctest::Approx(22.0));

  s.balls[1].pos = {1.0, 1.0};  // radius 2 pokes past the frame edge
  const Box c = ball_box(s, 1);
  CHECK(c.x0 == 0.0);
  CHECK(c.y0 == 0.0);
  CHECK(c.x1 == doctest::Approx(3.0));
}

TEST_CASE("head-on equal-speed collision swaps velocities") {
  WorldState s;
  s.env = make_plain_env();
  s.balls[0].pos = {30.0, 32.0};
  s.balls[0].vel = {1.0, 0.0};
  s.balls[1].pos = {34.5, 32.0};
  s.balls[1].vel = {-1.0, 0.0};
  s.balls[2].pos = {10.0, 10.0};
  s.balls[2].vel = {0.0, 0.0};
  const WorldState n = step(s);
  // balls 0 and 1 meet exactly and exchange x-velocities (equal masses)
  CHECK(n.balls[0].vel.x == doctest::Approx(-1.0));
  CHECK(n.balls[1].vel.x == doctest::Approx(1.0));
  CHECK(n.balls[2].vel.x == 0.0);
}
