#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace padprobe {

// CHW dense tensor. Channel-major so a channel plane is contiguous.
template <typename T>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, T(0)) {}

  int plane() const { return h * w; }
  size_t size() const { return v.size(); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& at(int ci, int yi, int xi) {
    assert(ci >= 0 && ci < c && yi >= 0 && yi < h && xi >= 0 && xi < w);
    return v[(static_cast<size_t>(ci) * h + yi) * w + xi];
  }
  T at(int ci, int yi, int xi) const {
    assert(ci >= 0 && ci < c && yi >= 0 && yi < h && xi >= 0 && xi < w);
    return v[(static_cast<size_t>(ci) * h + yi) * w + xi];
  }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }
  void resize(int c_, int h_, int w_) {
    c = c_;
    h = h_;
    w = w_;
    v.assign(static_cast<size_t>(c_) * h_ * w_, T(0));
  }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

}  // namespace padprobe
