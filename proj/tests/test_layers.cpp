#include <doctest.h>

#include <cmath>
#include <vector>

#include "padprobe/layers.hpp"
#include "padprobe/rng.hpp"

using namespace padprobe;

namespace {

constexpr PaddingMode kModes[] = {PaddingMode::Zero, PaddingMode::Reflect,
                                  PaddingMode::Replicate, PaddingMode::Circular};

Tensor<double> random_tensor(int c, int h, int w, Rng& rng) {
  Tensor<double> t;
  t.resize(c, h, w);
  for (auto& v : t.v) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Direct per-output-pixel convolution, no im2col; the reference the fast
// path is checked against.
Tensor<double> conv_reference(const ConvLayer<double>& l, const Tensor<double>& x) {
  int oh = 0, ow = 0;
  conv_out_shape(l, x.h, x.w, oh, ow);
  Tensor<double> y;
  y.resize(l.out_c, oh, ow);
  for (int co = 0; co < l.out_c; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = l.bias ? l.b[(size_t)co] : 0.0;
        for (int ci = 0; ci < l.in_c; ++ci)
          for (int ky = 0; ky < l.k; ++ky)
            for (int kx = 0; kx < l.k; ++kx) {
              const int sy = pad_source_index(l.mode, oy * l.stride - l.pad + ky, x.h);
              const int sx = pad_source_index(l.mode, ox * l.stride - l.pad + kx, x.w);
              if (sy < 0 || sx < 0) continue;
              acc += x.at(ci, sy, sx) *
                     l.W[(((size_t)co * l.in_c + ci) * l.k + ky) * l.k + kx];
            }
        y.at(co, oy, ox) = acc;
      }
  return y;
}

double loss_of(const Tensor<double>& y) {  // deterministic scalar probe
  double s = 0.0;
  for (size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * std::sin(0.7 * (double)(i + 1));
  return s;
}

void fill_dy(const Tensor<double>& y, Tensor<double>& dy) {
  dy.resize(y.c, y.h, y.w);
  for (size_t i = 0; i < y.v.size(); ++i) dy.v[i] = std::sin(0.7 * (double)(i + 1));
}

}  // namespace

TEST_CASE("pad_source_index agrees with closed forms") {
  // n=5: reflect of -2 is 2, of 6 is 3; replicate clamps; circular wraps
  CHECK(pad_source_index(PaddingMode::Zero, -1, 5) == -1);
  CHECK(pad_source_index(PaddingMode::Zero, 5, 5) == -1);
  CHECK(pad_source_index(PaddingMode::Zero, 2, 5) == 2);
  CHECK(pad_source_index(PaddingMode::Reflect, -1, 5) == 1);
  CHECK(pad_source_index(PaddingMode::Reflect, -2, 5) == 2);
  CHECK(pad_source_index(PaddingMode::Reflect, 5, 5) == 3);
  CHECK(pad_source_index(PaddingMode::Reflect, 6, 5) == 2);
  CHECK(pad_source_index(PaddingMode::Replicate, -3, 5) == 0);
  CHECK(pad_source_index(PaddingMode::Replicate, 7, 5) == 4);
  CHECK(pad_source_index(PaddingMode::Circular, -1, 5) == 4);
  CHECK(pad_source_index(PaddingMode::Circular, 5, 5) == 0);
  CHECK(pad_source_index(PaddingMode::Circular, 6, 5) == 1);
}

TEST_CASE("conv_forward matches the direct reference in every mode") {
  Rng rng(101);
  Workspace<double> ws;
  for (PaddingMode mode : kModes)
    for (int stride : {1, 2}) {
      ConvLayer<double> l;
      l.setup(3, 4, 3, stride, 1, mode, true);
      l.init(rng);
      const Tensor<double> x = random_tensor(3, 8, 10, rng);
      Tensor<double> y;
      conv_forward(l, x, y, ws);
      const Tensor<double> want = conv_reference(l, x);
      REQUIRE(y.same_shape(want));
      for (size_t i = 0; i < y.v.size(); ++i)
        CHECK(y.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv gradients match central differences in every mode") {
  Rng rng(202);
  Workspace<double> ws;
  for (PaddingMode mode : kModes)
    for (bool bias : {true, false}) {
      ConvLayer<double> l;
      l.setup(2, 3, 3, 1, 1, mode, bias);
      l.init(rng);
      Tensor<double> x = random_tensor(2, 6, 7, rng);

      Tensor<double> y, dy;
      conv_forward(l, x, y, ws);
      fill_dy(y, dy);
      ConvGrad<double> g;
      g.match(l);
      Tensor<double> dx;
      conv_backward(l, x, dy, &dx, g, ws);

      const double eps = 1e-6;
      auto num_grad = [&](double* p) {
        const double keep = *p;
        *p = keep + eps;
        conv_forward(l, x, y, ws);
        const double hi = loss_of(y);
        *p = keep - eps;
        conv_forward(l, x, y, ws);
        const double lo = loss_of(y);
        *p = keep;
        return (hi - lo) / (2 * eps);
      };

      for (size_t i = 0; i < l.W.size(); i += 7)  // subsample: every 7th weight
        CHECK(g.dW[i] == doctest::Approx(num_grad(&l.W[i])).epsilon(1e-7));
      if (bias)
        for (size_t i = 0; i < l.b.size(); ++i)
          CHECK(g.db[i] == doctest::Approx(num_grad(&l.b[i])).epsilon(1e-7));
      for (size_t i = 0; i < x.v.size(); i += 11)
        CHECK(dx.v[i] == doctest::Approx(num_grad(&x.v[i])).epsilon(1e-7));
    }
}

TEST_CASE("batched conv equals per-sample conv, forward and backward") {
  Rng rng(303);
  Workspace<double> ws;
  ConvLayer<double> l;
  l.setup(3, 5, 3, 1, 1, PaddingMode::Zero, true);
  l.init(rng);

  std::vector<Tensor<double>> xs(4), dys(4);
  std::vector<const Tensor<double>*> xps, dyps;
  for (auto& x : xs) x = random_tensor(3, 4, 4, rng);
  std::vector<Tensor<double>> ys;
  for (const auto& x : xs) xps.push_back(&x);
  conv_forward_batch(l, xps, ys, ws);
  REQUIRE(ys.size() == 4);

  for (int i = 0; i < 4; ++i) {
    Tensor<double> want;
    conv_forward(l, xs[(size_t)i], want, ws);
    REQUIRE(ys[(size_t)i].same_shape(want));
    for (size_t q = 0; q < want.v.size(); ++q)
      CHECK(ys[(size_t)i].v[q] == doctest::Approx(want.v[q]).epsilon(1e-12));
    fill_dy(ys[(size_t)i], dys[(size_t)i]);
  }

  for (const auto& d : dys) dyps.push_back(&d);
  std::vector<Tensor<double>> dxs_batch(4);
  std::vector<Tensor<double>*> dxps;
  for (auto& d : dxs_batch) dxps.push_back(&d);
  ConvGrad<double> gb;
  gb.match(l);
  conv_backward_batch(l, xps, dyps, dxps, gb, ws);

  ConvGrad<double> gs;
  gs.match(l);
  for (int i = 0; i < 4; ++i) {
    Tensor<double> dx;
    conv_backward(l, xs[(size_t)i], dys[(size_t)i], &dx, gs, ws);
    for (size_t q = 0; q < dx.v.size(); ++q)
      CHECK(dxs_batch[(size_t)i].v[q] == doctest::Approx(dx.v[q]).epsilon(1e-10));
  }
  for (size_t q = 0; q < gs.dW.size(); ++q)
    CHECK(gb.dW[q] == doctest::Approx(gs.dW[q]).epsilon(1e-10));
}

TEST_CASE("wider padding plus center crop reproduces pad-1 output") {
  // The halo rows a 3x3 kernel reads under pad p beyond pad 1 only feed the
  // outputs the crop removes, for every halo fill rule.
  Rng rng(404);
  Workspace<double> ws;
  for (PaddingMode mode : kModes)
    for (int p : {2, 3, 4}) {
      ConvLayer<double> base, wide;
      base.setup(2, 2, 3, 1, 1, mode, true);
      base.init(rng);
      wide = base;
      wide.pad = p;

      const Tensor<double> x = random_tensor(2, 12, 12, rng);
      Tensor<double> y1, yp, yc;
      conv_forward(base, x, y1, ws);
      conv_forward(wide, x, yp, ws);
      crop_center(yp, p - 1, yc);
      REQUIRE(yc.same_shape(y1));
      for (size_t i = 0; i < y1.v.size(); ++i)
        CHECK(yc.v[i] == doctest::Approx(y1.v[i]).epsilon(1e-12));
    }
}

TEST_CASE("constant input stays bitwise constant without a zero halo") {
  Rng rng(505);
  Workspace<double> ws;
  for (PaddingMode mode : {PaddingMode::Reflect, PaddingMode::Replicate, PaddingMode::Circular})
    for (bool bias : {true, false}) {
      ConvLayer<double> l;
      l.setup(3, 4, 3, 1, 1, mode, bias);
      l.init(rng);
      Tensor<double> x;
      x.resize(3, 6, 6);
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 36; ++i) x.v[(size_t)c * 36 + (size_t)i] = 0.25 * (c + 1);
      Tensor<double> y;
      conv_forward(l, x, y, ws);
      const Tensor<double> want = conv_reference(l, x);
      for (int c = 0; c < y.c; ++c) {
        const double v0 = y.at(c, 0, 0);
        for (int i = 0; i < y.plane(); ++i)
          CHECK(y.v[(size_t)c * (size_t)y.plane() + (size_t)i] == v0);  // bitwise
        CHECK(v0 == doctest::Approx(want.at(c, 2, 2)).epsilon(1e-12));  // and correct
      }
    }
}

TEST_CASE("all-zero input through zero padding without bias is exactly zero") {
  Rng rng(606);
  Workspace<double> ws;
  ConvLayer<double> l;
  l.setup(2, 3, 3, 1, 1, PaddingMode::Zero, false);
  l.init(rng);
  Tensor<double> x;
  x.resize(2, 5, 5);  // zero-filled
  Tensor<double> y;
  conv_forward(l, x, y, ws);
  for (double v : y.v) CHECK(v == 0.0);
}

TEST_CASE("zero halo breaks uniformity for nonzero constants") {
  Rng rng(707);
  Workspace<double> ws;
  ConvLayer<double> l;
  l.setup(1, 1, 3, 1, 1, PaddingMode::Zero, false);
  l.init(rng);
  Tensor<double> x;
  x.resize(1, 5, 5);
  for (auto& v : x.v) v = 1.0;
  Tensor<double> y;
  conv_forward(l, x, y, ws);
  CHECK(y.at(0, 0, 0) != doctest::Approx(y.at(0, 2, 2)).epsilon(1e-9));
}

TEST_CASE("per_channel_constant detects planes and reports values") {
  Tensor<float> x;
  x.resize(2, 3, 3);
  for (int i = 0; i < 9; ++i) x.v[(size_t)i] = 2.5f;
  for (int i = 0; i < 9; ++i) x.v[9 + (size_t)i] = -1.0f;
  std::vector<float> c;
  REQUIRE(per_channel_constant(x, c));
  CHECK(c[0] == 2.5f);
  CHECK(c[1] == -1.0f);
  x.at(1, 2, 2) = -1.0000001f;
  CHECK_FALSE(per_channel_constant(x, c));
}

TEST_CASE("maxpool2 forward and backward") {
  Tensor<double> x;
  x.resize(1, 4, 4);
  for (int i = 0; i < 16; ++i) x.v[(size_t)i] = i;  // max is bottom-right of each window
  Tensor<double> y;
  std::vector<uint8_t> arg;
  maxpool2(x, y, arg);
  REQUIRE(y.c == 1);
  REQUIRE(y.h == 2);
  REQUIRE(y.w == 2);
  CHECK(y.at(0, 0, 0) == 5.0);
  CHECK(y.at(0, 1, 1) == 15.0);

  Tensor<double> dy;
  dy.resize(1, 2, 2);
  dy.v = {1.0, 2.0, 3.0, 4.0};
  Tensor<double> dx;
  maxpool2_backward(dy, arg, dx);
  CHECK(dx.at(0, 1, 1) == 1.0);
  CHECK(dx.at(0, 3, 3) == 4.0);
  CHECK(dx.at(0, 0, 0) == 0.0);

  // gradient sums are preserved
  double s = 0.0;
  for (double v : dx.v) s += v;
  CHECK(s == 10.0);
}

TEST_CASE("upsample2 repeats and its backward sums") {
  Tensor<double> x;
  x.resize(1, 2, 2);
  x.v = {1.0, 2.0, 3.0, 4.0};
  Tensor<double> y;
  upsample2(x, y);
  REQUIRE(y.h == 4);
  CHECK(y.at(0, 0, 0) == 1.0);
  CHECK(y.at(0, 0, 1) == 1.0);
  CHECK(y.at(0, 3, 3) == 4.0);

  Tensor<double> dy;
  dy.resize(1, 4, 4);
  for (auto& v : dy.v) v = 1.0;
  Tensor<double> dx;
  upsample2_backward(dy, dx);
  CHECK(dx.at(0, 0, 0) == 4.0);
  CHECK(dx.at(0, 1, 1) == 4.0);
}

TEST_CASE("crop_center and its adjoint") {
  Rng rng(808);
  const Tensor<double> x = random_tensor(2, 6, 6, rng);
  Tensor<double> y;
  crop_center(x, 1, y);
  REQUIRE(y.h == 4);
  CHECK(y.at(0, 0, 0) == x.at(0, 1, 1));
  CHECK(y.at(1, 3, 3) == x.at(1, 4, 4));

  // <dy, crop(x)> == <embed(dy), x>
  Tensor<double> dy = random_tensor(2, 4, 4, rng);
  Tensor<double> dx;
  crop_center_backward(dy, 1, dx);
  REQUIRE(dx.same_shape(x));
  double lhs = 0.0, rhs = 0.0;
  for (size_t i = 0; i < dy.v.size(); ++i) lhs += dy.v[i] * y.v[i];
  for (size_t i = 0; i < dx.v.size(); ++i) rhs += dx.v[i] * x.v[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("gap_affine matches finite differences") {
  Rng rng(909);
  AffineLayer<double> l;
  l.setup(3, 4);
  l.init(rng);
  Tensor<double> x = random_tensor(3, 4, 5, rng);

  std::vector<double> out;
  gap_affine_forward(l, x, out);
  REQUIRE(out.size() == 4);

  std::vector<double> dout(4);
  for (size_t i = 0; i < 4; ++i) dout[i] = std::cos(0.3 * (double)i + 0.1);
  AffineGrad<double> g;
  g.match(l);
  Tensor<double> dx;
  gap_affine_backward(l, x, dout, &dx, g);

  const double eps = 1e-6;
  auto probe = [&](double* p) {
    const double keep = *p;
    *p = keep + eps;
    gap_affine_forward(l, x, out);
    double hi = 0.0;
    for (size_t i = 0; i < 4; ++i) hi += out[i] * dout[i];
    *p = keep - eps;
    gap_affine_forward(l, x, out);
    double lo = 0.0;
    for (size_t i = 0; i < 4; ++i) lo += out[i] * dout[i];
    *p = keep;
    return (hi - lo) / (2 * eps);
  };
  for (size_t i = 0; i < l.A.size(); ++i)
    CHECK(g.dA[i] == doctest::Approx(probe(&l.A[i])).epsilon(1e-7));
  for (size_t i = 0; i < l.b.size(); ++i)
    CHECK(g.db[i] == doctest::Approx(probe(&l.b[i])).epsilon(1e-7));
  for (size_t i = 0; i < x.v.size(); i += 5)
    CHECK(dx.v[i] == doctest::Approx(probe(&x.v[i])).epsilon(1e-7));
}

TEST_CASE("relu and its mask") {
  Tensor<double> x;
  x.resize(1, 1, 4);
  x.v = {-1.0, 0.0, 2.0, -0.5};
  relu(x);
  CHECK(x.v == std::vector<double>{0.0, 0.0, 2.0, 0.0});
  Tensor<double> dy;
  dy.resize(1, 1, 4);
  dy.v = {5.0, 5.0, 5.0, 5.0};
  relu_backward(x, dy);
  CHECK(dy.v == std::vector<double>{0.0, 0.0, 5.0, 0.0});
}

TEST_CASE("sigmoid endpoints and midpoint") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(100.0) == doctest::Approx(1.0));
  CHECK(sigmoid(-100.0) == doctest::Approx(0.0));
  // logistic identity s(-x) = 1 - s(x)
  CHECK(sigmoid(1.3) + sigmoid(-1.3) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("conv init respects the fan-in bound") {
  Rng rng(111);
  ConvLayer<double> l;
  l.setup(4, 8, 3, 1, 1, PaddingMode::Zero, true);
  l.init(rng);
  const double bound = 1.0 / std::sqrt(4.0 * 9.0);
  for (double w : l.W) {
    CHECK(w >= -bound);
    CHECK(w <= bound);
  }
  for (double b : l.b) {
    CHECK(b >= -bound);
    CHECK(b <= bound);
  }
  // and the draw is not degenerate
  double mx = -1.0;
  for (double w : l.W) mx = std::max(mx, std::abs(w));
  CHECK(mx > 0.5 * bound);
}
