#include <doctest.h>

#include <cmath>
#include <vector>

#include "padprobe/model.hpp"

using namespace padprobe;

namespace {

Model<float> make_model(int roi_size) {
  ModelConfig cfg;
  cfg.roi_size = roi_size;
  Model<float> m(cfg, 12345);
  return m;
}

// Brute force: for every bin, scan every map cell and take it when the cell
// interval intersects the bin interval. No index arithmetic shared with the
// implementation.
Tensor<float> oracle_pool(const Tensor<float>& map, const Box& box_px, int k, double ds) {
  double x0 = box_px.x0 / ds, x1 = box_px.x1 / ds;
  double y0 = box_px.y0 / ds, y1 = box_px.y1 / ds;
  if (!(x1 > x0) || !(y1 > y0)) {
    const int cx = std::min(std::max((int)std::floor(0.5 * (x0 + x1)), 0), map.w - 1);
    const int cy = std::min(std::max((int)std::floor(0.5 * (y0 + y1)), 0), map.h - 1);
    x0 = cx;
    x1 = cx + 1.0;
    y0 = cy;
    y1 = cy + 1.0;
  }
  Tensor<float> out(map.c, k, k);
  for (int by = 0; by < k; ++by)
    for (int bx = 0; bx < k; ++bx) {
      const double ly = y0 + (y1 - y0) * by / k, hy = y0 + (y1 - y0) * (by + 1) / k;
      const double lx = x0 + (x1 - x0) * bx / k, hx = x0 + (x1 - x0) * (bx + 1) / k;
      for (int c = 0; c < map.c; ++c) {
        bool have = false;
        float best = 0.0f;
        for (int yy = 0; yy < map.h; ++yy)
          for (int xx = 0; xx < map.w; ++xx) {
            const bool in_y = (yy + 1 > ly) && (yy < hy);
            const bool in_x = (xx + 1 > lx) && (xx < hx);
            if (!in_y || !in_x) continue;
            if (!have || map.at(c, yy, xx) > best) best = map.at(c, yy, xx);
            have = true;
          }
        if (!have) {
          // snapped-outward fallback: the single cell nearest the bin start
          const int cy = std::min(std::max((int)std::floor(ly), 0), map.h - 1);
          const int cx = std::min(std::max((int)std::floor(lx), 0), map.w - 1);
          best = map.at(c, cy, cx);
        }
        out.at(c, by, bx) = best;
      }
    }
  return out;
}

}  // namespace

TEST_CASE("roi_pool matches the brute-force oracle on 200 random cases") {
  Rng rng(4242);
  for (int roi : {4, 2})
    for (int trial = 0; trial < 100; ++trial) {
      Model<float> m = make_model(roi);
      const double ds = m.config().backbone.downsample_factor;

      Tensor<float> map;
      const int h = rng.uniform_int(4, 20), w = rng.uniform_int(4, 20);
      map.resize(rng.uniform_int(1, 3), h, w);
      for (auto& v : map.v) v = (float)rng.uniform(-3.0, 3.0);

      Box b;
      const double bw = rng.uniform(0.5, w * ds * 0.9);
      const double bh = rng.uniform(0.5, h * ds * 0.9);
      b.x0 = rng.uniform(0.0, w * ds - bw);
      b.y0 = rng.uniform(0.0, h * ds - bh);
      b.x1 = b.x0 + bw;
      b.y1 = b.y0 + bh;

      const Tensor<float> got = m.roi_pool(map, b, nullptr);
      const Tensor<float> want = oracle_pool(map, b, roi, ds);
      REQUIRE(got.same_shape(want));
      for (size_t i = 0; i < got.v.size(); ++i) REQUIRE(got.v[i] == want.v[i]);  // exact
    }
}

TEST_CASE("column-gradient example: box over columns 2..4 pools the larger column") {
  Model<float> m = make_model(1);
  const double ds = m.config().backbone.downsample_factor;
  Tensor<float> map;
  map.resize(1, 6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) map.at(0, y, x) = (float)x;
  Box b;  // spans map columns [2, 4): max over columns 2 and 3 is 3
  b.x0 = 2 * ds;
  b.x1 = 4 * ds;
  b.y0 = 0 * ds;
  b.y1 = 1 * ds;
  const Tensor<float> out = m.roi_pool(map, b, nullptr);
  CHECK(out.v[0] == 3.0f);
}

TEST_CASE("whole-map box with one bin is the global max") {
  Model<float> m = make_model(1);
  const double ds = m.config().backbone.downsample_factor;
  Rng rng(99);
  Tensor<float> map;
  map.resize(3, 5, 7);
  for (auto& v : map.v) v = (float)rng.uniform(-1.0, 1.0);
  Box b{0.0, 0.0, 7 * ds, 5 * ds};
  const Tensor<float> out = m.roi_pool(map, b, nullptr);
  for (int c = 0; c < 3; ++c) {
    float mx = map.at(c, 0, 0);
    for (int i = 0; i < map.plane(); ++i)
      mx = std::max(mx, map.v[(size_t)c * (size_t)map.plane() + (size_t)i]);
    CHECK(out.v[(size_t)c] == mx);
  }
}

TEST_CASE("constant map gives identical features for any two boxes") {
  Model<float> m = make_model(4);
  Tensor<float> map;
  map.resize(2, 8, 8);
  for (auto& v : map.v) v = 0.625f;
  const Tensor<float> a = m.roi_pool(map, Box{1.0, 2.0, 9.0, 12.0}, nullptr);
  const Tensor<float> bb = m.roi_pool(map, Box{20.0, 17.0, 26.0, 21.0}, nullptr);
  CHECK(a.v == bb.v);
}

TEST_CASE("degenerate box snaps to the center cell and is counted") {
  Model<float> m = make_model(2);
  const int64_t before = m.degenerate_roi_count();
  Tensor<float> map;
  map.resize(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) map.at(0, y, x) = (float)(10 * y + x);
  const double ds = m.config().backbone.downsample_factor;
  // zero-area box centered over map cell (2, 1)
  Box b{1.5 * ds, 2.5 * ds, 1.5 * ds, 2.5 * ds};
  const Tensor<float> out = m.roi_pool(map, b, nullptr);
  for (float v : out.v) CHECK(v == 21.0f);
  CHECK(m.degenerate_roi_count() == before + 1);
}

TEST_CASE("argmax scatter indices point at the pooled maxima") {
  Model<float> m = make_model(2);
  Rng rng(7);
  Tensor<float> map;
  map.resize(2, 6, 6);
  for (auto& v : map.v) v = (float)rng.uniform(0.0, 1.0);
  std::vector<int32_t> arg;
  const double ds = m.config().backbone.downsample_factor;
  const Tensor<float> out = m.roi_pool(map, Box{4.0, 4.0, 5.5 * ds, 5.5 * ds}, &arg);
  REQUIRE(arg.size() == out.v.size());
  for (size_t i = 0; i < arg.size(); ++i) {
    const int c = (int)(i / 4);
    CHECK(map.v[(size_t)c * 36 + (size_t)arg[i]] == out.v[i]);
  }
}
