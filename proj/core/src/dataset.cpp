#include "padprobe/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>

#include "padprobe/png_io.hpp"
#include "padprobe/render.hpp"

namespace padprobe {
namespace {

using nlohmann::json;

constexpr const char* kFormatVersion = "1";

// split tags keep train/test seed streams disjoint for a shared global seed
uint64_t split_tag(Split s) { return s == Split::Train ? 0x7472ull : 0x7465ull; }

std::string video_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "video_%04d", index);
  return buf;
}

std::string frame_file_name(int frame) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03d.png", frame);
  return buf;
}

json env_to_json(const EnvContext& env) {
  json j;
  switch (env.kind) {
    case EnvKind::Plain: j["kind"] = "plain"; break;
    case EnvKind::Border: j["kind"] = "border"; break;
    case EnvKind::Split: j["kind"] = "split"; break;
  }
  j["width"] = env.width;
  j["height"] = env.height;
  j["border_size"] = env.border_size;
  j["bar_center_x"] = env.bar_center_x;
  return j;
}

EnvContext env_from_json(const json& j) {
  EnvContext env;
  const std::string kind = j.at("kind");
  if (kind == "plain") env.kind = EnvKind::Plain;
  else if (kind == "border") env.kind = EnvKind::Border;
  else if (kind == "split") env.kind = EnvKind::Split;
  else throw std::runtime_error("unknown env kind: " + kind);
  env.width = j.at("width");
  env.height = j.at("height");
  env.border_size = j.at("border_size");
  env.bar_center_x = j.at("bar_center_x");
  env.validate();
  return env;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f << text;
  if (!f) throw std::runtime_error("short write: " + path.string());
}

json load_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  return json::parse(f);
}

}  // namespace

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::SimB: return "simb";
    case DatasetKind::SimBBorder: return "simb-border";
    case DatasetKind::SimBSplit: return "simb-split";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "simb") return DatasetKind::SimB;
  if (s == "simb-border") return DatasetKind::SimBBorder;
  if (s == "simb-split") return DatasetKind::SimBSplit;
  throw std::invalid_argument("unknown dataset: " + s);
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

uint64_t video_seed(const DatasetSpec& spec, int video_index) {
  return Rng::mix(spec.global_seed, split_tag(spec.split), static_cast<uint64_t>(video_index));
}

EnvContext sample_env(const DatasetSpec& spec, int video_index) {
  Rng rng(Rng::mix(video_seed(spec, video_index), 1));
  switch (spec.kind) {
    case DatasetKind::SimB: return make_plain_env();
    case DatasetKind::SimBBorder: return make_border_env(rng.uniform_int(0, 15));
    case DatasetKind::SimBSplit: return make_split_env(rng.uniform_int(64, 128));
  }
  throw std::logic_error("bad kind");
}

std::vector<WorldState> simulate_video(const DatasetSpec& spec, int video_index) {
  const EnvContext env = sample_env(spec, video_index);
  return simulate(Rng::mix(video_seed(spec, video_index), 2), env, kFramesPerVideo);
}

void generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.video_count <= 0) throw std::invalid_argument("video_count must be positive");
  std::filesystem::create_directories(out_dir);

  // Videos are seed-independent, so this loop is order-free and could be
  // farmed out per video; kept sequential here.
  for (int v = 0; v < spec.video_count; ++v) {
    const auto states = simulate_video(spec, v);
    const auto vdir = out_dir / video_dir_name(v);
    std::filesystem::create_directories(vdir);

    json ann;
    ann["seed"] = video_seed(spec, v);
    ann["env"] = env_to_json(states[0].env);
    json boxes = json::array();
    for (const auto& s : states) {
      json per_frame = json::array();
      for (int b = 0; b < kNumBalls; ++b) {
        const Box bb = ball_box(s, b);
        per_frame.push_back({bb.x0, bb.y0, bb.x1, bb.y1});
      }
      boxes.push_back(std::move(per_frame));
    }
    ann["boxes"] = std::move(boxes);
    write_text(vdir / "annotations.json", ann.dump(2) + "\n");

    for (int f = 0; f < kFramesPerVideo; ++f)
      write_png(vdir / frame_file_name(f), render_frame(states[f]));
  }

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["dataset"] = to_string(spec.kind);
  manifest["split"] = to_string(spec.split);
  manifest["video_count"] = spec.video_count;
  manifest["global_seed"] = spec.global_seed;
  manifest["frames_per_video"] = kFramesPerVideo;
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir, bool with_frames) {
  const json manifest = load_json(dir / "manifest.json");
  if (manifest.at("format_version") != kFormatVersion)
    throw std::runtime_error("unsupported dataset format version");

  Dataset ds;
  ds.kind = dataset_kind_from_string(manifest.at("dataset"));
  ds.split = manifest.at("split") == "train" ? Split::Train : Split::Test;
  ds.global_seed = manifest.at("global_seed");
  ds.root = dir;

  const int count = manifest.at("video_count");
  const int frames = manifest.at("frames_per_video");
  ds.videos.reserve(count);
  if (with_frames) ds.frames.reserve(count);

  for (int v = 0; v < count; ++v) {
    const auto vdir = dir / video_dir_name(v);
    const json ann = load_json(vdir / "annotations.json");
    VideoMeta meta;
    meta.seed = ann.at("seed");
    meta.env = env_from_json(ann.at("env"));
    const auto& boxes = ann.at("boxes");
    if (static_cast<int>(boxes.size()) != frames)
      throw std::runtime_error("annotation frame count mismatch in " + vdir.string());
    meta.boxes.reserve(frames);
    for (const auto& per_frame : boxes) {
      std::array<Box, kNumBalls> row;
      for (int b = 0; b < kNumBalls; ++b) {
        const auto& bb = per_frame.at(b);
        row[b] = Box{bb.at(0), bb.at(1), bb.at(2), bb.at(3)};
      }
      meta.boxes.push_back(row);
    }
    ds.videos.push_back(std::move(meta));

    if (with_frames) {
      std::vector<Image> video_frames;
      video_frames.reserve(frames);
      for (int f = 0; f < frames; ++f) video_frames.push_back(read_png(vdir / frame_file_name(f)));
      ds.frames.push_back(std::move(video_frames));
    }
  }
  return ds;
}

namespace {

std::vector<WindowRef> make_windows(const Dataset& ds, int span) {
  std::vector<WindowRef> out;
  for (int v = 0; v < static_cast<int>(ds.videos.size()); ++v) {
    const int frames = static_cast<int>(ds.videos[v].boxes.size());
    if (frames < span)
      throw std::runtime_error("video " + std::to_string(v) + " shorter than window span");
    for (int s = 0; s + span <= frames; ++s) out.push_back({v, s});
  }
  return out;
}

}  // namespace

std::vector<WindowRef> train_windows(const Dataset& ds) {
  return make_windows(ds, kRefFrames + kPredHorizon);
}

std::vector<WindowRef> eval_windows(const Dataset& ds) {
  return make_windows(ds, kRefFrames + kEvalHorizon);
}

}  // namespace padprobe
