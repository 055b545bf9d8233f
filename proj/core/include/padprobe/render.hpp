#pragma once

#include <array>

#include "padprobe/image.hpp"
#include "padprobe/sim.hpp"

namespace padprobe {

using Rgb = std::array<uint8_t, 3>;

constexpr Rgb kColorBackground{0, 0, 0};
constexpr Rgb kColorBorder{128, 128, 128};
constexpr Rgb kColorBar{192, 192, 192};
constexpr std::array<Rgb, kNumBalls> kBallColors{{{255, 0, 0}, {0, 255, 0}, {0, 0, 255}}};

// A pixel belongs to a shape iff its center (x+0.5, y+0.5) lies inside it.
// Balls draw last; containment keeps them off border and bar pixels.
Image render_frame(const WorldState& s);

}  // namespace padprobe
