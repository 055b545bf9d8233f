#include "padprobe/render.hpp"

#include <cmath>

namespace padprobe {
namespace {

void fill_px(Image& im, int x, int y, Rgb c) {
  uint8_t* p = im.px(x, y);
  p[0] = c[0];
  p[1] = c[1];
  p[2] = c[2];
}

}  // namespace

Image render_frame(const WorldState& s) {
  const auto& env = s.env;
  Image im(env.width, env.height);

  if (env.kind == EnvKind::Border && env.border_size > 0) {
    const int b = env.border_size;
    for (int y = 0; y < env.height; ++y)
      for (int x = 0; x < env.width; ++x)
        if (x < b || x >= env.width - b || y < b || y >= env.height - b)
          fill_px(im, x, y, kColorBorder);
  }
  if (env.kind == EnvKind::Split) {
    for (int x = 0; x < env.width; ++x) {
      const double cx = x + 0.5;
      if (cx > env.bar_left() && cx < env.bar_right())
        for (int y = 0; y < env.height; ++y) fill_px(im, x, y, kColorBar);
    }
  }
  const double r = env.ball_radius();
  for (int i = 0; i < kNumBalls; ++i) {
    const Vec2 c = s.balls[i].pos;
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x - r)));
    const int x1 = std::min(env.width - 1, static_cast<int>(std::ceil(c.x + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y - r)));
    const int y1 = std::min(env.height - 1, static_cast<int>(std::ceil(c.y + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - c.x;
        const double dy = y + 0.5 - c.y;
        if (dx * dx + dy * dy <= r * r) fill_px(im, x, y, kBallColors[i]);
      }
  }
  return im;
}

}  // namespace padprobe
