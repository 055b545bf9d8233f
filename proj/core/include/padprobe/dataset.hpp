#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "padprobe/image.hpp"
#include "padprobe/sim.hpp"

namespace padprobe {

enum class DatasetKind { SimB, SimBBorder, SimBSplit };
enum class Split { Train, Test };

std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);
std::string to_string(Split s);

constexpr int kRefFrames = 4;      // conditioning frames per window
constexpr int kPredHorizon = 20;   // training rollout length
constexpr int kEvalHorizon = 40;   // eval rollout length (2x)

struct DatasetSpec {
  DatasetKind kind = DatasetKind::SimB;
  Split split = Split::Train;
  int video_count = 0;
  uint64_t global_seed = 0;
};

struct VideoMeta {
  uint64_t seed = 0;
  EnvContext env;
  // [frame][ball], pixel coordinates
  std::vector<std::array<Box, kNumBalls>> boxes;
};

struct Dataset {
  DatasetKind kind = DatasetKind::SimB;
  Split split = Split::Train;
  uint64_t global_seed = 0;
  std::filesystem::path root;
  std::vector<VideoMeta> videos;
  // [video][frame]; empty unless loaded with frames
  std::vector<std::vector<Image>> frames;

  const EnvContext& env() const { return videos.at(0).env; }
  bool has_frames() const { return !frames.empty(); }
};

// Writes manifest.json plus video_%04d/{annotations.json, frame_%03d.png}.
// Output is a pure function of the DatasetSpec, so regeneration is byte-identical.
void generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

Dataset load_dataset(const std::filesystem::path& dir, bool with_frames);

// Pure simulation of one video (no I/O); used by generation and tests.
std::vector<WorldState> simulate_video(const DatasetSpec& spec, int video_index);
uint64_t video_seed(const DatasetSpec& spec, int video_index);
EnvContext sample_env(const DatasetSpec& spec, int video_index);

struct WindowRef {
  int video = 0;
  int start = 0;  // first reference frame
};

// Training windows need kRefFrames + kPredHorizon frames, eval windows
// kRefFrames + kEvalHorizon; starts slide by 1.
std::vector<WindowRef> train_windows(const Dataset& ds);
std::vector<WindowRef> eval_windows(const Dataset& ds);

}  // namespace padprobe
