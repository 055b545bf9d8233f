#include <doctest.h>

#include <filesystem>

#include "padprobe/evaluator.hpp"
#include "padprobe/png_io.hpp"
#include "padprobe/probe.hpp"

using namespace padprobe;
namespace fs = std::filesystem;

TEST_CASE("uniformity of an exactly constant map is zero deviation") {
  Tensor<float> map;
  map.resize(3, 8, 8);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 64; ++i) map.v[(size_t)c * 64 + (size_t)i] = 0.5f * (c - 1);
  const UniformityStats st = uniformity(map, kUniformityTol);
  CHECK(st.is_uniform);
  CHECK(st.max_rel_dev == 0.0);
  CHECK(st.mean_variance == 0.0);
  REQUIRE(st.channel_dev.size() == 3);
  for (double d : st.channel_dev) CHECK(d == 0.0);
}

TEST_CASE("a single raised cell breaks uniformity with the right deviation") {
  Tensor<double> map;
  map.resize(1, 4, 4);
  for (auto& v : map.v) v = 1.0;
  map.at(0, 2, 1) = 1.1;
  const UniformityStats st = uniformity(map, kUniformityTol);
  CHECK_FALSE(st.is_uniform);
  // mean 1.00625; the raised cell sits 0.09375 away; scale is max |v| = 1.1
  CHECK(st.channel_dev[0] == doctest::Approx(0.09375).epsilon(1e-12));
  CHECK(st.max_rel_dev == doctest::Approx(0.09375 / 1.1).epsilon(1e-12));
}

TEST_CASE("deviations inside the tolerance still count as uniform") {
  Tensor<float> map;
  map.resize(1, 6, 6);
  for (auto& v : map.v) v = 2.0f;
  map.at(0, 3, 3) = 2.0f + 2e-6f;  // well under 1e-5 relative to scale 2
  CHECK(uniformity(map, kUniformityTol).is_uniform);
  CHECK_FALSE(uniformity(map, 1e-8).is_uniform);
}

TEST_CASE("non-finite features are rejected") {
  Tensor<float> map;
  map.resize(1, 2, 2);
  map.v = {1.0f, 1.0f, std::numeric_limits<float>::quiet_NaN(), 1.0f};
  CHECK_THROWS(uniformity(map, kUniformityTol));
}

TEST_CASE("expected pattern: bias admits six uniform cells, no-bias seven") {
  int on = 0, off = 0;
  for (InputMode im : {InputMode::Visual, InputMode::AllZeros, InputMode::AllOnes,
                       InputMode::FixedRandom, InputMode::Random})
    for (PaddingMode pm : {PaddingMode::Zero, PaddingMode::Reflect, PaddingMode::Replicate,
                           PaddingMode::Circular}) {
      if (expected_uniform(im, pm, true)) ++on;
      if (expected_uniform(im, pm, false)) ++off;
    }
  CHECK(on == 6);
  CHECK(off == 7);
  CHECK(expected_uniform(InputMode::AllZeros, PaddingMode::Zero, false));
  CHECK_FALSE(expected_uniform(InputMode::AllZeros, PaddingMode::Zero, true));
  CHECK_FALSE(expected_uniform(InputMode::Visual, PaddingMode::Circular, true));
  CHECK_FALSE(expected_uniform(InputMode::Random, PaddingMode::Reflect, false));
}

TEST_CASE("the untrained matrix reproduces the expected pattern") {
  const std::vector<MatrixCell> cells = uniformity_matrix(3);
  REQUIRE(cells.size() == 40);
  for (const MatrixCell& c : cells) {
    CHECK_MESSAGE(c.is_uniform == expected_uniform(c.input_mode, c.padding_mode, c.use_bias),
                  to_string(c.input_mode), " x ", to_string(c.padding_mode), " bias ",
                  c.use_bias, " dev ", c.max_rel_dev);
  }
  const std::string table = format_matrix(cells);
  CHECK(table.find("uniform") != std::string::npos);
  CHECK(table.find("varied") != std::string::npos);
  CHECK(table.find("all-zeros") != std::string::npos);
}

TEST_CASE("matrix cells are stable across seeds") {
  const auto a = uniformity_matrix(1);
  const auto b = uniformity_matrix(9000);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].is_uniform == b[i].is_uniform);
}

namespace {

Dataset frozen_dataset() {
  Dataset ds;
  ds.kind = DatasetKind::SimB;
  ds.split = Split::Train;
  VideoMeta vm;
  vm.env = make_plain_env();
  std::array<Box, kNumBalls> row;
  for (int i = 0; i < kNumBalls; ++i) {
    const double cx = 14.0 + 10.0 * i, cy = 40.0 - 6.0 * i;
    row[(size_t)i] = Box{cx - 2.0, cy - 2.0, cx + 2.0, cy + 2.0};
  }
  vm.boxes.assign(kFramesPerVideo, row);
  ds.videos.push_back(vm);
  return ds;
}

}  // namespace

TEST_CASE("oracle on frozen balls reproduces their boxes and scores zero") {
  const Dataset ds = frozen_dataset();
  const BoxSeq<double> oracle = constant_prediction_oracle(ds);
  REQUIRE((int)oracle.size() == kEvalHorizon);

  // per-step mean over identical windows is the shared box itself
  const double want_cx = (14.0 + 24.0 + 34.0) / 3.0 / 64.0;
  for (const auto& step : oracle)
    for (const auto& ball : step) {
      CHECK(ball[0] == doctest::Approx(want_cx).epsilon(1e-12));
      CHECK(ball[2] == doctest::Approx(4.0 / 64.0).epsilon(1e-12));
    }

  // balls share one optimal constant, so the residual is inter-ball spread,
  // not zero; against a single-ball dataset it would vanish. Verify the
  // plateau formula: mean squared distance from each ball to the shared mean.
  const EvalResult ev = evaluate_constant(oracle, ds);
  double want = 0.0;
  for (int i = 0; i < kNumBalls; ++i) {
    const double dx = (14.0 + 10.0 * i) / 64.0 - want_cx;
    const double dy = (40.0 - 6.0 * i) / 64.0 - (40.0 - 6.0) / 64.0;
    want += dx * dx + dy * dy;
  }
  want = 1000.0 * want / 3.0;
  CHECK(ev.p1 == doctest::Approx(want).epsilon(1e-9));
  CHECK(ev.p2 == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("oracle short- and long-term errors agree on stationary dynamics") {
  const fs::path tr_dir = fs::temp_directory_path() / "padprobe_oracle_train16";
  const fs::path te_dir = fs::temp_directory_path() / "padprobe_oracle_test16";
  DatasetSpec spec;
  spec.kind = DatasetKind::SimB;
  spec.video_count = 16;
  spec.global_seed = 444;
  if (!fs::exists(tr_dir / "manifest.json")) generate_dataset(spec, tr_dir);
  spec.split = Split::Test;
  if (!fs::exists(te_dir / "manifest.json")) generate_dataset(spec, te_dir);

  const Dataset train = load_dataset(tr_dir, false);
  const Dataset test = load_dataset(te_dir, false);
  const BoxSeq<double> oracle = constant_prediction_oracle(train);
  const EvalResult ev = evaluate_constant(oracle, test);
  CHECK(ev.p1 > 0.0);
  // bounded stationary motion: the plateau has no horizon dependence (the
  // bound leaves room for sampling noise at this video count)
  CHECK(std::abs(ev.p1 - ev.p2) / ev.p1 < 0.05);
}

TEST_CASE("feature figures normalize per channel and flag constants") {
  Tensor<float> map;
  map.resize(2, 4, 4);
  for (int i = 0; i < 16; ++i) map.v[(size_t)i] = 3.25f;          // constant channel
  for (int i = 0; i < 16; ++i) map.v[16 + (size_t)i] = (float)i;  // ramp channel

  const fs::path dir = fs::temp_directory_path() / "padprobe_figs";
  fs::remove_all(dir);
  const int n = export_feature_figures(map, dir);
  CHECK(n == 2);

  const Image flat = read_png(dir / "channel_000.png");
  REQUIRE(flat.width == 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(flat.px(x, y)[0] == 128);
      CHECK(flat.px(x, y)[1] == 128);
      CHECK(flat.px(x, y)[2] == 128);
    }

  const Image ramp = read_png(dir / "channel_001.png");
  CHECK(ramp.px(0, 0)[0] == 0);
  CHECK(ramp.px(3, 3)[0] == 255);
  // monotone along the ramp
  CHECK(ramp.px(1, 0)[0] > ramp.px(0, 0)[0]);
  fs::remove_all(dir);
}
