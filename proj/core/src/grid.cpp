#include "padprobe/grid.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "padprobe/checkpoint.hpp"
#include "padprobe/sha256.hpp"
#include "padprobe/trainer.hpp"

namespace padprobe {

using nlohmann::json;

std::vector<ExperimentConfig> full_grid(const std::string& dataset, const std::string& tier) {
  static const InputMode inputs[] = {InputMode::Visual, InputMode::AllZeros, InputMode::AllOnes,
                                     InputMode::FixedRandom, InputMode::Random};
  static const PaddingMode pads[] = {PaddingMode::Zero, PaddingMode::Reflect,
                                     PaddingMode::Replicate, PaddingMode::Circular};
  std::vector<ExperimentConfig> cells;
  cells.reserve(40);
  for (bool bias : {true, false})
    for (InputMode im : inputs)
      for (PaddingMode pm : pads) {
        ExperimentConfig c;
        c.dataset = dataset;
        c.input_mode = im;
        c.padding_mode = pm;
        c.use_bias = bias;
        c.tier = tier;
        cells.push_back(c);
      }
  return cells;
}

std::vector<ExperimentConfig> parse_grid_spec(const std::string& text,
                                              const std::string& default_tier) {
  std::vector<ExperimentConfig> cells;
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string kv;
    ExperimentConfig c;
    c.tier = default_tier;
    bool any = false;
    while (fields >> kv) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("grid spec line " + std::to_string(lineno) +
                                    ": expected key=value, got '" + kv + "'");
      const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "dataset")
        c.dataset = val;
      else if (key == "input")
        c.input_mode = input_mode_from_string(val);
      else if (key == "pad")
        c.padding_mode = padding_mode_from_string(val);
      else if (key == "size")
        c.padding_size = std::stoi(val);
      else if (key == "bias")
        c.use_bias = val == "on" || val == "true" || val == "1";
      else if (key == "tier")
        c.tier = val;
      else
        throw std::invalid_argument("grid spec line " + std::to_string(lineno) +
                                    ": unknown key '" + key + "'");
      any = true;
    }
    if (any) cells.push_back(c);
  }
  if (cells.empty()) throw std::invalid_argument("grid spec lists no cells");
  return cells;
}

namespace {

std::string cell_label(const ExperimentConfig& c) {
  return c.dataset + " " + to_string(c.input_mode) + " " + to_string(c.padding_mode) + " size=" +
         std::to_string(c.padding_size) + (c.use_bias ? " bias=on" : " bias=off");
}

int effective_iterations(const ExperimentConfig& c, const GridOptions& opt) {
  return opt.iterations_override > 0 ? opt.iterations_override : tier_iterations(c.tier);
}

// Canonical run identity; every field that changes the result is present.
std::string run_key(const ExperimentConfig& c, int trial, const GridOptions& opt) {
  std::ostringstream os;
  os << "v1|" << c.dataset << '|' << to_string(c.input_mode) << '|' << to_string(c.padding_mode)
     << '|' << c.padding_size << '|' << (c.use_bias ? 1 : 0) << '|' << c.tier << '|' << trial
     << '|' << opt.seed << '|' << opt.train_videos << '|' << opt.test_videos << '|'
     << opt.eval_max_windows << "|it" << effective_iterations(c, opt);
  return os.str();
}

uint64_t hash64(const std::string& s) {
  const std::string hex = sha256_hex(s);
  uint64_t v = 0;
  for (int i = 0; i < 16; ++i) {
    const char ch = hex[static_cast<size_t>(i)];
    v = v * 16 + static_cast<uint64_t>(ch <= '9' ? ch - '0' : ch - 'a' + 10);
  }
  return v;
}

void log_line(const GridOptions& opt, const std::string& msg) {
  if (opt.log) opt.log(msg);
}

}  // namespace

std::filesystem::path ensure_dataset(const std::filesystem::path& data_dir, DatasetKind kind,
                                     Split split, int videos, uint64_t seed,
                                     const std::function<void(const std::string&)>& log) {
  DatasetSpec spec;
  spec.kind = kind;
  spec.split = split;
  spec.video_count = videos;
  spec.global_seed = seed;
  std::ostringstream name;
  name << to_string(kind) << '_' << to_string(split) << videos << "_s" << seed;
  const std::filesystem::path dir = data_dir / name.str();
  if (std::filesystem::exists(dir / "manifest.json")) return dir;
  if (log) log("generating " + dir.string() + " (" + std::to_string(videos) + " videos)");
  generate_dataset(spec, dir);
  return dir;
}

TrialRow run_cell_trial(const ExperimentConfig& cfg, int trial, const GridOptions& opt,
                        const Dataset& train, const Dataset& test) {
  const std::string key = run_key(cfg, trial, opt);
  const std::string hash = sha256_hex(key);
  const std::filesystem::path cache_dir = opt.out_dir / "cache";
  const std::filesystem::path cache_file = cache_dir / (hash.substr(0, 24) + ".json");

  TrialRow row;
  row.dataset = cfg.dataset;
  row.input_mode = cfg.input_mode;
  row.padding_mode = cfg.padding_mode;
  row.padding_size = cfg.padding_size;
  row.use_bias = cfg.use_bias;
  row.trial = trial;

  if (opt.reuse_cache && std::filesystem::exists(cache_file)) {
    std::ifstream f(cache_file);
    json j = json::parse(f);
    if (j.at("key").get<std::string>() == key) {
      row.p1 = j.at("p1").get<double>();
      row.p2 = j.at("p2").get<double>();
      log_line(opt, cell_label(cfg) + " trial " + std::to_string(trial) + ": cached p1=" +
                        std::to_string(row.p1));
      return row;
    }
  }

  ModelConfig mc;
  mc.backbone.padding_mode = cfg.padding_mode;
  mc.backbone.padding_size = cfg.padding_size;
  mc.backbone.use_bias = cfg.use_bias;
  mc.backbone.input_mode = cfg.input_mode;
  mc.frame_w = train.env().width;
  mc.frame_h = train.env().height;
  mc.validate();

  const uint64_t trial_seed = Rng::mix(hash64(key), static_cast<uint64_t>(trial));
  Model<float> model(mc, trial_seed);

  TrainConfig tc;
  tc.iterations = effective_iterations(cfg, opt);
  tc.seed = Rng::mix(trial_seed, 1);
  const std::string label = cell_label(cfg) + " trial " + std::to_string(trial);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult tr = train_model(model, train, tc, [&](int it, double loss) {
    if (it % 100 == 0 || it == tc.iterations)
      log_line(opt, label + ": iter " + std::to_string(it) + " loss " + std::to_string(loss));
  });
  EvalResult ev = evaluate(model, test, opt.eval_max_windows, Rng::mix(trial_seed, 2));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  row.p1 = ev.p1;
  row.p2 = ev.p2;
  log_line(opt, label + ": p1=" + std::to_string(ev.p1) + " p2=" + std::to_string(ev.p2) + " (" +
                    std::to_string(secs) + "s)");

  std::filesystem::create_directories(cache_dir);
  json j;
  j["key"] = key;
  j["p1"] = ev.p1;
  j["p2"] = ev.p2;
  j["final_loss"] = tr.final_loss;
  j["eval_windows"] = ev.windows;
  j["seconds"] = secs;
  std::ofstream f(cache_file, std::ios::trunc);
  f << j.dump(2) << '\n';
  return row;
}

GridReport run_grid(const std::vector<ExperimentConfig>& cells, const GridOptions& opt) {
  if (cells.empty()) throw std::invalid_argument("run_grid: no cells");
  if (opt.trials < 1) throw std::invalid_argument("run_grid: trials must be >= 1");

  GridReport rep;
  rep.cells.resize(cells.size());

  // group by dataset so each split loads once and frames drop out of memory
  // before the next dataset starts
  std::map<std::string, std::vector<size_t>> by_dataset;
  for (size_t i = 0; i < cells.size(); ++i)
    by_dataset[cells[i].dataset].push_back(i);

  for (const auto& [ds_name, indices] : by_dataset) {
    const DatasetKind kind = dataset_kind_from_string(ds_name);
    bool need_frames = false;
    for (size_t i : indices)
      if (cells[i].input_mode == InputMode::Visual) need_frames = true;

    const auto train_dir =
        ensure_dataset(opt.data_dir, kind, Split::Train, opt.train_videos, opt.seed, opt.log);
    const auto test_dir =
        ensure_dataset(opt.data_dir, kind, Split::Test, opt.test_videos, opt.seed, opt.log);
    log_line(opt, "loading " + ds_name + (need_frames ? " with frames" : " annotations only"));
    const Dataset train = load_dataset(train_dir, need_frames);
    const Dataset test = load_dataset(test_dir, need_frames);

    const BoxSeq<double> oracle = constant_prediction_oracle(train);
    const EvalResult oracle_ev = evaluate_constant(oracle, test, opt.eval_max_windows);
    log_line(opt, ds_name + " oracle p1=" + std::to_string(oracle_ev.p1) + " p2=" +
                      std::to_string(oracle_ev.p2));

    for (size_t i : indices) {
      CellOutcome& out = rep.cells[i];
      out.cfg = cells[i];
      out.oracle_p1 = oracle_ev.p1;
      out.oracle_p2 = oracle_ev.p2;
      for (int t = 0; t < opt.trials; ++t) {
        try {
          out.trials.push_back(run_cell_trial(cells[i], t, opt, train, test));
        } catch (const std::exception& e) {
          out.errors.push_back("trial " + std::to_string(t) + ": " + e.what());
          log_line(opt, cell_label(cells[i]) + " trial " + std::to_string(t) +
                            " FAILED: " + e.what());
        }
      }
      if (!out.trials.empty()) {
        std::vector<double> p1s;
        for (const TrialRow& r : out.trials) p1s.push_back(r.p1);
        out.collapsed = aggregate(p1s).mean >= 0.5 * out.oracle_p1;
      }
    }
  }
  return rep;
}

namespace {

std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string cell_entry(const CellOutcome& out) {
  if (out.trials.empty()) return "ERR";
  std::vector<double> p1s, p2s;
  for (const TrialRow& r : out.trials) {
    p1s.push_back(r.p1);
    p2s.push_back(r.p2);
  }
  const AggregateStats a1 = aggregate(p1s), a2 = aggregate(p2s);
  std::string s = fmt2(a1.mean) + "±" + fmt2(a1.stdev) + " / " + fmt2(a2.mean) + "±" +
                  fmt2(a2.stdev);
  if (out.collapsed) s += " **collapsed**";
  if (!out.errors.empty()) s += " (errors)";
  return s;
}

}  // namespace

std::string grid_markdown(const GridReport& rep) {
  static const InputMode inputs[] = {InputMode::Visual, InputMode::AllZeros, InputMode::AllOnes,
                                     InputMode::FixedRandom, InputMode::Random};
  static const PaddingMode pads[] = {PaddingMode::Zero, PaddingMode::Reflect,
                                     PaddingMode::Replicate, PaddingMode::Circular};
  std::ostringstream os;
  os << "# Grid results\n\nEntries are p1 mean±std / p2 mean±std over trials; cells at or above\n"
        "half the constant-prediction oracle p1 are flagged collapsed.\n";

  // matrix-shaped sections for padding_size 1; anything else tabulates below
  std::map<std::string, std::vector<const CellOutcome*>> by_dataset;
  for (const CellOutcome& c : rep.cells) by_dataset[c.cfg.dataset].push_back(&c);

  std::vector<const CellOutcome*> extras;
  for (const auto& [ds, outs] : by_dataset) {
    double oracle_p1 = outs.front()->oracle_p1, oracle_p2 = outs.front()->oracle_p2;
    os << "\n## " << ds << "\n\noracle p1 " << fmt2(oracle_p1) << ", p2 " << fmt2(oracle_p2)
       << "\n";
    for (bool bias : {true, false}) {
      bool any = false;
      for (const CellOutcome* c : outs)
        if (c->cfg.use_bias == bias && c->cfg.padding_size == 1) any = true;
      if (!any) continue;
      os << "\n### bias " << (bias ? "on" : "off") << "\n\n| input |";
      for (PaddingMode pm : pads) os << ' ' << to_string(pm) << " |";
      os << "\n|---|";
      for (size_t q = 0; q < 4; ++q) os << "---|";
      os << '\n';
      for (InputMode im : inputs) {
        bool row_any = false;
        std::ostringstream row;
        row << "| " << to_string(im) << " |";
        for (PaddingMode pm : pads) {
          const CellOutcome* found = nullptr;
          for (const CellOutcome* c : outs)
            if (c->cfg.use_bias == bias && c->cfg.padding_size == 1 &&
                c->cfg.input_mode == im && c->cfg.padding_mode == pm)
              found = c;
          row << ' ' << (found ? (row_any = true, cell_entry(*found)) : "-") << " |";
        }
        if (row_any) os << row.str() << '\n';
      }
    }
    for (const CellOutcome* c : outs)
      if (c->cfg.padding_size != 1) extras.push_back(c);
  }

  if (!extras.empty()) {
    os << "\n## padding size sweep\n\n| dataset | input | padding | size | bias | result |\n"
          "|---|---|---|---|---|---|\n";
    for (const CellOutcome* c : extras)
      os << "| " << c->cfg.dataset << " | " << to_string(c->cfg.input_mode) << " | "
         << to_string(c->cfg.padding_mode) << " | " << c->cfg.padding_size << " | "
         << (c->cfg.use_bias ? "on" : "off") << " | " << cell_entry(*c) << " |\n";
  }

  bool any_err = false;
  for (const CellOutcome& c : rep.cells)
    if (!c.errors.empty()) any_err = true;
  if (any_err) {
    os << "\n## failures\n\n";
    for (const CellOutcome& c : rep.cells)
      for (const std::string& e : c.errors) os << "- " << cell_label(c.cfg) << ": " << e << '\n';
  }
  return os.str();
}

void write_grid_outputs(const GridReport& rep, const GridOptions& opt) {
  std::filesystem::create_directories(opt.out_dir);
  std::vector<TrialRow> rows;
  for (const CellOutcome& c : rep.cells)
    for (const TrialRow& r : c.trials) rows.push_back(r);
  write_trial_csv(opt.out_dir / "results.csv", rows);
  write_aggregate_csv(opt.out_dir / "results_agg.csv", rows);
  std::ofstream md(opt.out_dir / "report.md", std::ios::trunc);
  md << grid_markdown(rep);
}

}  // namespace padprobe
