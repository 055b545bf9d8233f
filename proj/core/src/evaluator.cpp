#include "padprobe/evaluator.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "padprobe/trainer.hpp"

namespace padprobe {

std::vector<size_t> strided_subset(size_t n, int max_take) {
  std::vector<size_t> idx;
  if (max_take <= 0 || static_cast<size_t>(max_take) >= n) {
    idx.resize(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  const size_t m = static_cast<size_t>(max_take);
  idx.resize(m);
  for (size_t i = 0; i < m; ++i) idx[i] = (i * n) / m;
  return idx;
}

namespace {

// squared center distance accumulator over one window's rollout
template <typename T>
void score_window(const BoxSeq<T>& pred, const BoxSeq<T>& target, double& acc1, double& acc2,
                  size_t& n1, size_t& n2) {
  const size_t S = pred.size();
  for (size_t s = 0; s < S; ++s)
    for (int i = 0; i < kNumBalls; ++i) {
      const double dx = static_cast<double>(pred[s][i][0]) - target[s][i][0];
      const double dy = static_cast<double>(pred[s][i][1]) - target[s][i][1];
      const double d2 = dx * dx + dy * dy;
      if (s < static_cast<size_t>(kPredHorizon)) {
        acc1 += d2;
        ++n1;
      } else {
        acc2 += d2;
        ++n2;
      }
    }
}

EvalResult finish(double acc1, double acc2, size_t n1, size_t n2, int windows) {
  if (n1 == 0 || n2 == 0) throw std::runtime_error("evaluate: no eval windows");
  EvalResult r;
  r.p1 = 1000.0 * acc1 / static_cast<double>(n1);
  r.p2 = 1000.0 * acc2 / static_cast<double>(n2);
  r.windows = windows;
  return r;
}

}  // namespace

template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& test, int max_windows,
                    uint64_t eval_seed) {
  const ModelConfig& mc = model.config();
  const EnvContext& env = test.env();
  if (env.width != mc.frame_w || env.height != mc.frame_h)
    throw std::runtime_error("evaluate: dataset resolution " + std::to_string(env.width) + "x" +
                             std::to_string(env.height) + " does not match model config");

  const std::vector<WindowRef> windows = eval_windows(test);
  const std::vector<size_t> take = strided_subset(windows.size(), max_windows);
  if (take.empty()) throw std::runtime_error("evaluate: no eval windows");

  const InputMode mode = mc.backbone.input_mode;
  const bool window_free_input =
      mode == InputMode::AllZeros || mode == InputMode::AllOnes || mode == InputMode::FixedRandom;

  Rng input_rng(Rng::mix(eval_seed, 0x5ca1ebUL));
  double acc1 = 0.0, acc2 = 0.0;
  size_t n1 = 0, n2 = 0;

  if (window_free_input) {
    WindowTape<T> tape;
    Tensor<T> map = model.backbone_forward(nullptr, input_rng, nullptr, tape.ws);
    std::vector<T> cvals;
    if (per_channel_constant(map, cvals)) {
      // box-independent predictions: roll out once, rescore per window
      const WindowRef& r0 = windows[take[0]];
      WindowInput<T> in0 = make_window_input<T>(test, r0.video, r0.start, kEvalHorizon, mc);
      BoxSeq<T> pred = model.rollout_given_map(map, in0, kEvalHorizon, nullptr);
      for (size_t q : take) {
        const WindowRef& r = windows[q];
        WindowInput<T> in = make_window_input<T>(test, r.video, r.start, kEvalHorizon, mc);
        score_window(pred, in.targets, acc1, acc2, n1, n2);
      }
      return finish(acc1, acc2, n1, n2, static_cast<int>(take.size()));
    }
    for (size_t q : take) {
      const WindowRef& r = windows[q];
      WindowInput<T> in = make_window_input<T>(test, r.video, r.start, kEvalHorizon, mc);
      BoxSeq<T> pred = model.rollout_given_map(map, in, kEvalHorizon, nullptr);
      score_window(pred, in.targets, acc1, acc2, n1, n2);
    }
    return finish(acc1, acc2, n1, n2, static_cast<int>(take.size()));
  }

  for (size_t q : take) {
    const WindowRef& r = windows[q];
    WindowInput<T> in = make_window_input<T>(test, r.video, r.start, kEvalHorizon, mc);
    BoxSeq<T> pred = model.rollout(in, kEvalHorizon, input_rng, nullptr);
    score_window(pred, in.targets, acc1, acc2, n1, n2);
  }
  return finish(acc1, acc2, n1, n2, static_cast<int>(take.size()));
}

EvalResult evaluate_constant(const BoxSeq<double>& predictions, const Dataset& test,
                             int max_windows) {
  if (static_cast<int>(predictions.size()) != kEvalHorizon)
    throw std::invalid_argument("evaluate_constant: need kEvalHorizon steps");
  ModelConfig mc;  // only frame dims and t_ref are used by make_window_input
  mc.frame_w = test.env().width;
  mc.frame_h = test.env().height;
  mc.backbone.input_mode = InputMode::AllZeros;

  const std::vector<WindowRef> windows = eval_windows(test);
  const std::vector<size_t> take = strided_subset(windows.size(), max_windows);
  double acc1 = 0.0, acc2 = 0.0;
  size_t n1 = 0, n2 = 0;
  for (size_t q : take) {
    const WindowRef& r = windows[q];
    WindowInput<double> in = make_window_input<double>(test, r.video, r.start, kEvalHorizon, mc);
    score_window(predictions, in.targets, acc1, acc2, n1, n2);
  }
  return finish(acc1, acc2, n1, n2, static_cast<int>(take.size()));
}

AggregateStats aggregate(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("aggregate: empty");
  AggregateStats st;
  for (double x : xs) st.mean += x;
  st.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - st.mean) * (x - st.mean);
    st.stdev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return st;
}

namespace {

bool same_config(const TrialRow& a, const TrialRow& b) {
  return a.dataset == b.dataset && a.input_mode == b.input_mode &&
         a.padding_mode == b.padding_mode && a.padding_size == b.padding_size &&
         a.use_bias == b.use_bias;
}

}  // namespace

MetricsReport aggregate_rows(const std::vector<TrialRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate_rows: empty");
  MetricsReport rep;
  rep.config = rows.front();
  for (const TrialRow& r : rows) {
    if (!same_config(r, rep.config))
      throw std::invalid_argument("aggregate_rows: mixed configs");
    rep.p1_trials.push_back(r.p1);
    rep.p2_trials.push_back(r.p2);
  }
  rep.p1 = aggregate(rep.p1_trials);
  rep.p2 = aggregate(rep.p2_trials);
  return rep;
}

void write_trial_csv(const std::filesystem::path& path, const std::vector<TrialRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "dataset,input_mode,padding_mode,padding_size,bias,trial,p1,p2\n";
  f.precision(17);
  for (const TrialRow& r : rows)
    f << r.dataset << ',' << to_string(r.input_mode) << ',' << to_string(r.padding_mode) << ','
      << r.padding_size << ',' << (r.use_bias ? "true" : "false") << ',' << r.trial << ',' << r.p1
      << ',' << r.p2 << '\n';
}

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<TrialRow>& rows) {
  std::vector<std::vector<TrialRow>> groups;
  for (const TrialRow& r : rows) {
    bool placed = false;
    for (auto& grp : groups)
      if (same_config(grp.front(), r)) {
        grp.push_back(r);
        placed = true;
        break;
      }
    if (!placed) groups.push_back({r});
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "dataset,input_mode,padding_mode,padding_size,bias,trials,p1_mean,p1_std,p2_mean,p2_std\n";
  f.precision(17);
  for (const auto& grp : groups) {
    const MetricsReport rep = aggregate_rows(grp);
    const TrialRow& c = rep.config;
    f << c.dataset << ',' << to_string(c.input_mode) << ',' << to_string(c.padding_mode) << ','
      << c.padding_size << ',' << (c.use_bias ? "true" : "false") << ',' << grp.size() << ','
      << rep.p1.mean << ',' << rep.p1.stdev << ',' << rep.p2.mean << ',' << rep.p2.stdev << '\n';
  }
}

#define PADPROBE_EVAL_INSTANTIATE(T) \
  template EvalResult evaluate<T>(const Model<T>&, const Dataset&, int, uint64_t);

PADPROBE_EVAL_INSTANTIATE(float)
PADPROBE_EVAL_INSTANTIATE(double)
#undef PADPROBE_EVAL_INSTANTIATE

}  // namespace padprobe
