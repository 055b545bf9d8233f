#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "padprobe/dataset.hpp"
#include "padprobe/model.hpp"

namespace padprobe {

struct EvalResult {
  double p1 = 0.0;  // 1000 x mean squared center distance, steps 1..20
  double p2 = 0.0;  // same, steps 21..40
  int windows = 0;
};

// Rolls out kEvalHorizon steps per eval window. Distances are squared l2 on
// normalized box centers. max_windows > 0 evaluates an evenly strided subset.
// eval_seed drives Random-mode input draws only.
template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& test, int max_windows = 0,
                    uint64_t eval_seed = 1);

// Scores a fixed per-step prediction (oracle or other constant baselines).
// predictions[s][ball] = normalized (cx, cy, w, h), s over kEvalHorizon.
EvalResult evaluate_constant(const BoxSeq<double>& predictions, const Dataset& test,
                             int max_windows = 0);

struct TrialRow {
  std::string dataset;
  InputMode input_mode = InputMode::Visual;
  PaddingMode padding_mode = PaddingMode::Zero;
  int padding_size = 1;
  bool use_bias = true;
  int trial = 0;
  double p1 = 0.0;
  double p2 = 0.0;
};

struct AggregateStats {
  double mean = 0.0;
  double stdev = 0.0;  // sample std; 0 for a single value
};

AggregateStats aggregate(const std::vector<double>& xs);

// Mean and std per metric over trials of one config. Rows with differing
// config fields are rejected.
struct MetricsReport {
  TrialRow config;  // trial field unused
  std::vector<double> p1_trials, p2_trials;
  AggregateStats p1, p2;
};

MetricsReport aggregate_rows(const std::vector<TrialRow>& rows);

// One row per trial: dataset, input_mode, padding_mode, padding_size, bias,
// trial, p1, p2.
void write_trial_csv(const std::filesystem::path& path, const std::vector<TrialRow>& rows);

// One row per config group (first-seen order) with mean/std per metric.
void write_aggregate_csv(const std::filesystem::path& path, const std::vector<TrialRow>& rows);

// Deterministic evenly spread subset indices (shared by evaluate and tests).
std::vector<size_t> strided_subset(size_t n, int max_take);

}  // namespace padprobe
