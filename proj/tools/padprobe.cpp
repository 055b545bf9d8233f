// padprobe: dataset generation, training, evaluation, probing, grids.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "padprobe/checkpoint.hpp"
#include "padprobe/grid.hpp"
#include "padprobe/render.hpp"
#include "padprobe/sha256.hpp"
#include "padprobe/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace padprobe;

namespace {

void log_err(const std::string& msg) { std::cerr << "[padprobe] " << msg << '\n'; }

fs::path default_data_dir() {
  if (const char* env = std::getenv("PADPROBE_DATA_DIR")) return fs::path(env);
  return fs::path("data");
}

void add_artifact(json& manifest, const std::string& label, const fs::path& path) {
  manifest["artifacts"][label] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
}

void write_manifest(const fs::path& out_dir, json manifest) {
  fs::create_directories(out_dir);
  std::ofstream f(out_dir / "run-manifest.json", std::ios::trunc);
  f << manifest.dump(2) << '\n';
}

struct CellFlags {
  std::string dataset = "simb";
  std::string input_mode = "visual";
  std::string padding_mode = "zero";
  int padding_size = 1;
  bool bias = true;
  std::string tier = "smoke";

  void attach(CLI::App* cmd) {
    cmd->add_option("--dataset", dataset, "simb, simb-border or simb-split")
        ->check(CLI::IsMember({"simb", "simb-border", "simb-split"}))
        ->capture_default_str();
    cmd->add_option("--input-mode", input_mode,
                    "visual, all-zeros, all-ones, fixed-random or random")
        ->check(CLI::IsMember({"visual", "all-zeros", "all-ones", "fixed-random", "random"}))
        ->capture_default_str();
    cmd->add_option("--padding-mode", padding_mode, "zero, reflect, replicate or circular")
        ->check(CLI::IsMember({"zero", "reflect", "replicate", "circular"}))
        ->capture_default_str();
    cmd->add_option("--padding-size", padding_size, "hourglass padding size (>= 1)")
        ->capture_default_str();
    cmd->add_flag("--bias,!--no-bias", bias, "bias weights in backbone convolutions")
        ->capture_default_str();
    cmd->add_option("--tier", tier, "training budget preset")
        ->check(CLI::IsMember({"smoke", "desk", "paper"}))
        ->capture_default_str();
  }

  ExperimentConfig experiment() const {
    ExperimentConfig c;
    c.dataset = dataset;
    c.input_mode = input_mode_from_string(input_mode);
    c.padding_mode = padding_mode_from_string(padding_mode);
    c.padding_size = padding_size;
    c.use_bias = bias;
    c.tier = tier;
    return c;
  }

  json to_json() const {
    return {{"dataset", dataset},     {"input_mode", input_mode},
            {"padding_mode", padding_mode}, {"padding_size", padding_size},
            {"bias", bias},           {"tier", tier}};
  }
};

GridOptions make_grid_options(const fs::path& data_dir, const fs::path& out_dir, int trials,
                              uint64_t seed, int train_videos, int test_videos,
                              int max_windows) {
  GridOptions opt;
  opt.trials = trials;
  opt.seed = seed;
  opt.train_videos = train_videos;
  opt.test_videos = test_videos;
  opt.eval_max_windows = max_windows;
  opt.data_dir = data_dir;
  opt.out_dir = out_dir;
  opt.log = log_err;
  return opt;
}

int cmd_generate(const std::string& dataset, int videos, uint64_t seed, const std::string& split,
                 const fs::path& out) {
  DatasetSpec spec;
  spec.kind = dataset_kind_from_string(dataset);
  spec.split = split == "test" ? Split::Test : Split::Train;
  spec.video_count = videos;
  spec.global_seed = seed;
  generate_dataset(spec, out);
  log_err("generated " + std::to_string(videos) + " videos in " + out.string());

  json m;
  m["command"] = "generate";
  m["options"] = {{"dataset", dataset}, {"videos", videos}, {"seed", seed}, {"split", split},
                  {"out", out.string()}};
  add_artifact(m, "dataset_manifest", out / "manifest.json");
  write_manifest(out, m);
  return 0;
}

int cmd_train(const CellFlags& cell, uint64_t seed, int train_videos, int iterations,
              const fs::path& data_dir, const fs::path& out) {
  const DatasetKind kind = dataset_kind_from_string(cell.dataset);
  const fs::path train_dir =
      ensure_dataset(data_dir, kind, Split::Train, train_videos, seed, log_err);
  const ExperimentConfig ec = cell.experiment();
  const bool visual = ec.input_mode == InputMode::Visual;
  log_err("loading " + train_dir.string());
  const Dataset train = load_dataset(train_dir, visual);

  ModelConfig mc;
  mc.backbone.padding_mode = ec.padding_mode;
  mc.backbone.padding_size = ec.padding_size;
  mc.backbone.use_bias = ec.use_bias;
  mc.backbone.input_mode = ec.input_mode;
  mc.frame_w = train.env().width;
  mc.frame_h = train.env().height;
  mc.validate();

  Model<float> model(mc, seed);
  TrainConfig tc;
  tc.iterations = iterations > 0 ? iterations : tier_iterations(cell.tier);
  tc.seed = Rng::mix(seed, 1);
  TrainResult tr = train_model(model, train, tc, [&](int it, double loss) {
    log_err("iter " + std::to_string(it) + "/" + std::to_string(tc.iterations) + " loss " +
            std::to_string(loss));
  });

  fs::create_directories(out);
  json meta;
  meta["config"] = json::parse(model_config_to_json(mc));
  meta["trial_seed"] = seed;
  meta["iterations"] = tc.iterations;
  meta["tier"] = cell.tier;
  meta["final_loss"] = tr.final_loss;
  meta["dataset"] = cell.dataset;
  meta["train_dir"] = train_dir.string();
  const fs::path ckpt = out / "checkpoint.ppk";
  save_checkpoint(ckpt.string(), model.params(), meta.dump(), tr.loss_curve);
  log_err("final loss " + std::to_string(tr.final_loss) + ", checkpoint " + ckpt.string());

  json m;
  m["command"] = "train";
  m["options"] = cell.to_json();
  m["options"]["seed"] = seed;
  m["options"]["train_videos"] = train_videos;
  m["options"]["iterations"] = tc.iterations;
  m["options"]["data_dir"] = data_dir.string();
  add_artifact(m, "checkpoint", ckpt);
  add_artifact(m, "dataset_manifest", train_dir / "manifest.json");
  write_manifest(out, m);
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const std::string& dataset_flag, uint64_t seed,
             int test_videos, int max_windows, int trial, const fs::path& data_dir,
             const fs::path& out) {
  json meta = json::parse(peek_checkpoint_meta(checkpoint.string()));
  const ModelConfig mc = model_config_from_json(meta.at("config").dump());
  std::string dataset = dataset_flag;
  if (dataset.empty()) dataset = meta.value("dataset", "simb");

  Model<float> model(mc, meta.value("trial_seed", 0ULL));
  load_checkpoint(checkpoint.string(), model.params());

  const DatasetKind kind = dataset_kind_from_string(dataset);
  const fs::path test_dir = ensure_dataset(data_dir, kind, Split::Test, test_videos, seed, log_err);
  const bool visual = mc.backbone.input_mode == InputMode::Visual;
  const Dataset test = load_dataset(test_dir, visual);

  const EvalResult ev = evaluate(model, test, max_windows, Rng::mix(seed, 2));
  std::cout << "p1 " << ev.p1 << "\np2 " << ev.p2 << "\nwindows " << ev.windows << '\n';

  TrialRow row;
  row.dataset = dataset;
  row.input_mode = mc.backbone.input_mode;
  row.padding_mode = mc.backbone.padding_mode;
  row.padding_size = mc.backbone.padding_size;
  row.use_bias = mc.backbone.use_bias;
  row.trial = trial;
  row.p1 = ev.p1;
  row.p2 = ev.p2;
  fs::create_directories(out);
  write_trial_csv(out / "results.csv", {row});
  write_aggregate_csv(out / "results_agg.csv", {row});

  json m;
  m["command"] = "eval";
  m["options"] = {{"checkpoint", checkpoint.string()}, {"dataset", dataset},  {"seed", seed},
                  {"test_videos", test_videos},        {"max_windows", max_windows},
                  {"trial", trial},                    {"data_dir", data_dir.string()}};
  add_artifact(m, "results", out / "results.csv");
  add_artifact(m, "results_agg", out / "results_agg.csv");
  add_artifact(m, "checkpoint", checkpoint);
  write_manifest(out, m);
  return 0;
}

int cmd_probe_matrix(uint64_t seed, int padding_size, const fs::path& out) {
  const std::vector<MatrixCell> cells = uniformity_matrix(seed, padding_size);
  std::cout << format_matrix(cells);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream f(out / "matrix.csv", std::ios::trunc);
    f << "input_mode,padding_mode,bias,uniform,max_rel_dev\n";
    f.precision(17);
    for (const MatrixCell& c : cells)
      f << to_string(c.input_mode) << ',' << to_string(c.padding_mode) << ','
        << (c.use_bias ? "true" : "false") << ',' << (c.is_uniform ? "true" : "false") << ','
        << c.max_rel_dev << '\n';
    f.close();
    json m;
    m["command"] = "probe uniformity-matrix";
    m["options"] = {{"seed", seed}, {"padding_size", padding_size}, {"out", out.string()}};
    add_artifact(m, "matrix", out / "matrix.csv");
    write_manifest(out, m);
  }
  return 0;
}

int cmd_probe_oracle(const std::string& dataset, uint64_t seed, int train_videos, int test_videos,
                     int max_windows, const fs::path& data_dir, const fs::path& out) {
  const DatasetKind kind = dataset_kind_from_string(dataset);
  const fs::path train_dir =
      ensure_dataset(data_dir, kind, Split::Train, train_videos, seed, log_err);
  const fs::path test_dir = ensure_dataset(data_dir, kind, Split::Test, test_videos, seed, log_err);
  const Dataset train = load_dataset(train_dir, false);
  const Dataset test = load_dataset(test_dir, false);
  const BoxSeq<double> oracle = constant_prediction_oracle(train);
  const EvalResult ev = evaluate_constant(oracle, test, max_windows);
  std::cout << "oracle_p1 " << ev.p1 << "\noracle_p2 " << ev.p2 << '\n';
  if (!out.empty()) {
    fs::create_directories(out);
    json j;
    j["dataset"] = dataset;
    j["p1"] = ev.p1;
    j["p2"] = ev.p2;
    j["windows"] = ev.windows;
    std::ofstream f(out / "oracle.json", std::ios::trunc);
    f << j.dump(2) << '\n';
    f.close();
    json m;
    m["command"] = "probe oracle";
    m["options"] = {{"dataset", dataset},         {"seed", seed},
                    {"train_videos", train_videos}, {"test_videos", test_videos},
                    {"max_windows", max_windows},  {"data_dir", data_dir.string()}};
    add_artifact(m, "oracle", out / "oracle.json");
    write_manifest(out, m);
  }
  return 0;
}

int cmd_probe_figures(const CellFlags& cell, uint64_t seed, const fs::path& out) {
  ModelConfig mc;
  const ExperimentConfig ec = cell.experiment();
  mc.backbone.padding_mode = ec.padding_mode;
  mc.backbone.padding_size = ec.padding_size;
  mc.backbone.use_bias = ec.use_bias;
  mc.backbone.input_mode = ec.input_mode;
  const EnvContext env = ec.dataset == "simb" ? make_plain_env() : make_border_env(8);
  mc.frame_w = env.width;
  mc.frame_h = env.height;
  mc.validate();

  Model<float> model(mc, seed);
  Workspace<float> ws;
  Rng rng(Rng::mix(seed, 42));
  Tensor<float> frames;
  const Tensor<float>* fp = nullptr;
  if (ec.input_mode == InputMode::Visual) {
    const std::vector<WorldState> states = simulate(Rng::mix(seed, 7), env, mc.t_ref);
    frames.resize(3 * mc.t_ref, mc.frame_h, mc.frame_w);
    for (int t = 0; t < mc.t_ref; ++t) {
      const Image img = render_frame(states[static_cast<size_t>(t)]);
      for (int y = 0; y < mc.frame_h; ++y)
        for (int x = 0; x < mc.frame_w; ++x)
          for (int c = 0; c < 3; ++c)
            frames.at(3 * t + c, y, x) = static_cast<float>(img.px(x, y)[c] / 255.0);
    }
    fp = &frames;
  }
  const Tensor<float> map = model.backbone_forward(fp, rng, nullptr, ws);
  const int n = export_feature_figures(map, out);
  log_err(std::to_string(n) + " channel heatmaps in " + out.string());

  json m;
  m["command"] = "probe figures";
  m["options"] = cell.to_json();
  m["options"]["seed"] = seed;
  add_artifact(m, "channel_000", out / "channel_000.png");
  write_manifest(out, m);
  return 0;
}

int cmd_grid(const std::string& spec_path, bool full, const std::string& dataset,
             const std::string& tier, int trials, uint64_t seed, int train_videos,
             int test_videos, int max_windows, const fs::path& data_dir, const fs::path& out) {
  std::vector<ExperimentConfig> cells;
  if (!spec_path.empty()) {
    std::ifstream f(spec_path);
    if (!f) throw std::runtime_error("cannot open grid spec " + spec_path);
    std::stringstream ss;
    ss << f.rdbuf();
    cells = parse_grid_spec(ss.str(), tier);
  } else if (full) {
    cells = full_grid(dataset, tier);
  } else {
    throw std::runtime_error("grid needs --spec FILE or --full");
  }

  GridOptions opt =
      make_grid_options(data_dir, out, trials, seed, train_videos, test_videos, max_windows);
  const GridReport rep = run_grid(cells, opt);
  write_grid_outputs(rep, opt);
  log_err("grid complete: " + std::to_string(cells.size()) + " cells in " + out.string());

  json m;
  m["command"] = "grid";
  m["options"] = {{"spec", spec_path},   {"full", full},
                  {"dataset", dataset},  {"tier", tier},
                  {"trials", trials},    {"seed", seed},
                  {"train_videos", train_videos}, {"test_videos", test_videos},
                  {"max_windows", max_windows},   {"data_dir", data_dir.string()}};
  add_artifact(m, "results", out / "results.csv");
  add_artifact(m, "results_agg", out / "results_agg.csv");
  add_artifact(m, "report", out / "report.md");
  write_manifest(out, m);

  int failures = 0;
  for (const CellOutcome& c : rep.cells) failures += static_cast<int>(c.errors.size());
  if (failures > 0) {
    log_err(std::to_string(failures) + " trial(s) failed; see report.md");
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"padding/input probe toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags like --data-dir may trail the subcommand
  app.set_config("--config", "", "key=value config file; flags override");

  fs::path data_dir = default_data_dir();
  app.add_option("--data-dir", data_dir, "dataset root (default $PADPROBE_DATA_DIR or ./data)")
      ->capture_default_str();

  // generate
  auto* gen = app.add_subcommand("generate", "write a dataset split");
  std::string gen_dataset = "simb", gen_split = "train";
  int gen_videos = 10;
  uint64_t gen_seed = 1;
  fs::path gen_out;
  gen->add_option("--dataset", gen_dataset)
      ->check(CLI::IsMember({"simb", "simb-border", "simb-split"}))
      ->capture_default_str();
  gen->add_option("--videos", gen_videos)->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--split", gen_split)->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  gen->add_option("--out", gen_out)->required();

  // train
  auto* train = app.add_subcommand("train", "train one configuration");
  CellFlags train_cell;
  train_cell.attach(train);
  uint64_t train_seed = 0;
  int train_videos = 200, train_iterations = 0;
  fs::path train_out = "runs/train";
  train->add_option("--seed", train_seed)->capture_default_str();
  train->add_option("--train-videos", train_videos)->capture_default_str();
  train->add_option("--iterations", train_iterations, "override the tier preset")
      ->capture_default_str();
  train->add_option("--out", train_out)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  fs::path eval_ckpt, eval_out = "runs/eval";
  std::string eval_dataset;
  uint64_t eval_seed = 0;
  int eval_test_videos = 20, eval_max_windows = 0, eval_trial = 0;
  ev->add_option("--checkpoint", eval_ckpt)->required();
  ev->add_option("--dataset", eval_dataset, "defaults to the checkpoint's dataset");
  ev->add_option("--seed", eval_seed)->capture_default_str();
  ev->add_option("--test-videos", eval_test_videos)->capture_default_str();
  ev->add_option("--max-windows", eval_max_windows, "0 = every eval window")
      ->capture_default_str();
  ev->add_option("--trial", eval_trial)->capture_default_str();
  ev->add_option("--out", eval_out)->capture_default_str();

  // probe
  auto* probe = app.add_subcommand("probe", "uniformity and baseline analyses");
  probe->require_subcommand(1);
  auto* pm = probe->add_subcommand("uniformity-matrix", "40-cell uniformity table");
  uint64_t pm_seed = 0;
  int pm_pad = 1;
  fs::path pm_out;
  pm->add_option("--seed", pm_seed)->capture_default_str();
  pm->add_option("--padding-size", pm_pad)->capture_default_str();
  pm->add_option("--out", pm_out, "also write matrix.csv here");

  auto* po = probe->add_subcommand("oracle", "constant-prediction baseline");
  std::string po_dataset = "simb";
  uint64_t po_seed = 7;
  int po_train = 200, po_test = 20, po_max = 0;
  fs::path po_out;
  po->add_option("--dataset", po_dataset)
      ->check(CLI::IsMember({"simb", "simb-border", "simb-split"}))
      ->capture_default_str();
  po->add_option("--seed", po_seed)->capture_default_str();
  po->add_option("--train-videos", po_train)->capture_default_str();
  po->add_option("--test-videos", po_test)->capture_default_str();
  po->add_option("--max-windows", po_max)->capture_default_str();
  po->add_option("--out", po_out);

  auto* pf = probe->add_subcommand("figures", "per-channel feature heatmaps");
  CellFlags pf_cell;
  pf_cell.attach(pf);
  uint64_t pf_seed = 0;
  fs::path pf_out = "runs/figures";
  pf->add_option("--seed", pf_seed)->capture_default_str();
  pf->add_option("--out", pf_out)->capture_default_str();

  // grid
  auto* grid = app.add_subcommand("grid", "train and evaluate many cells");
  std::string grid_spec, grid_dataset = "simb", grid_tier = "smoke";
  bool grid_full = false;
  int grid_trials = 3, grid_train = 200, grid_test = 20, grid_max = 300;
  uint64_t grid_seed = 7;
  fs::path grid_out = "runs/grid";
  grid->add_option("--spec", grid_spec, "grid spec file (key=value lines)");
  grid->add_flag("--full", grid_full, "the standard 5x4x2 grid");
  grid->add_option("--dataset", grid_dataset)->capture_default_str();
  grid->add_option("--tier", grid_tier)->check(CLI::IsMember({"smoke", "desk", "paper"}))
      ->capture_default_str();
  grid->add_option("--trials", grid_trials)->capture_default_str();
  grid->add_option("--seed", grid_seed)->capture_default_str();
  grid->add_option("--train-videos", grid_train)->capture_default_str();
  grid->add_option("--test-videos", grid_test)->capture_default_str();
  grid->add_option("--max-windows", grid_max, "eval window cap per trial (0 = all)")
      ->capture_default_str();
  grid->add_option("--out", grid_out)->capture_default_str();

  try {
    app.parse(argc, argv);
    if (*gen) return cmd_generate(gen_dataset, gen_videos, gen_seed, gen_split, gen_out);
    if (*train)
      return cmd_train(train_cell, train_seed, train_videos, train_iterations, data_dir,
                       train_out);
    if (*ev)
      return cmd_eval(eval_ckpt, eval_dataset, eval_seed, eval_test_videos, eval_max_windows,
                      eval_trial, data_dir, eval_out);
    if (*pm) return cmd_probe_matrix(pm_seed, pm_pad, pm_out);
    if (*po)
      return cmd_probe_oracle(po_dataset, po_seed, po_train, po_test, po_max, data_dir, po_out);
    if (*pf) return cmd_probe_figures(pf_cell, pf_seed, pf_out);
    if (*grid)
      return cmd_grid(grid_spec, grid_full, grid_dataset, grid_tier, grid_trials, grid_seed,
                      grid_train, grid_test, grid_max, data_dir, grid_out);
    throw std::runtime_error("no subcommand");
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
