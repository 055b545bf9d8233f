#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "padprobe/evaluator.hpp"
#include "padprobe/probe.hpp"

namespace padprobe {

struct ExperimentConfig {
  std::string dataset = "simb";
  InputMode input_mode = InputMode::Visual;
  PaddingMode padding_mode = PaddingMode::Zero;
  int padding_size = 1;
  bool use_bias = true;
  std::string tier = "smoke";
};

// The 5 x 4 x 2 input/padding/bias grid for one dataset.
std::vector<ExperimentConfig> full_grid(const std::string& dataset, const std::string& tier);

// One cell per non-comment line of key=value pairs. Keys: dataset, input,
// pad, size, bias, tier; missing keys take the defaults above.
std::vector<ExperimentConfig> parse_grid_spec(const std::string& text,
                                              const std::string& default_tier);

struct GridOptions {
  int trials = 3;
  uint64_t seed = 7;  // drives dataset generation, weights, and sampling
  int train_videos = 200;
  int test_videos = 20;
  int eval_max_windows = 300;  // 0 = all eval windows
  int iterations_override = 0;  // 0 = tier preset
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  bool reuse_cache = true;
  std::function<void(const std::string&)> log;
};

struct CellOutcome {
  ExperimentConfig cfg;
  std::vector<TrialRow> trials;        // successful trials only
  std::vector<std::string> errors;     // per-trial failure messages
  double oracle_p1 = 0.0;              // constant-prediction baseline, same dataset
  double oracle_p2 = 0.0;
  bool collapsed = false;              // mean p1 >= 0.5 x oracle p1
};

struct GridReport {
  std::vector<CellOutcome> cells;  // input order
};

// Generates any missing dataset splits under data_dir, then trains and
// evaluates every cell x trial. Each run is cached as JSON keyed by a config
// hash, so re-running a finished grid is cheap. Individual trial failures are
// recorded and the grid continues.
GridReport run_grid(const std::vector<ExperimentConfig>& cells, const GridOptions& opt);

std::string grid_markdown(const GridReport& rep);

// results.csv, results_agg.csv and report.md under opt.out_dir.
void write_grid_outputs(const GridReport& rep, const GridOptions& opt);

// Deterministic dataset bootstrap shared with the CLI; returns the split dir.
std::filesystem::path ensure_dataset(const std::filesystem::path& data_dir, DatasetKind kind,
                                     Split split, int videos, uint64_t seed,
                                     const std::function<void(const std::string&)>& log);

// One training+evaluation run (also the acceptance building block).
TrialRow run_cell_trial(const ExperimentConfig& cfg, int trial, const GridOptions& opt,
                        const Dataset& train, const Dataset& test);

}  // namespace padprobe
