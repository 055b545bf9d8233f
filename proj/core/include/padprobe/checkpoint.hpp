#pragma once

#include <string>
#include <vector>

#include "padprobe/model.hpp"

namespace padprobe {

// Config round-trips as JSON text so the json dependency stays private.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Single binary file: magic, element width, metadata JSON, loss curve, then
// the parameter vectors in visit_model order. Native endianness.
template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params,
                     const std::string& meta_json, const std::vector<double>& loss_curve);

// Reads only the metadata block (cheap; used to recover ModelConfig).
std::string peek_checkpoint_meta(const std::string& path);

// params must already be shaped for the stored config (init_params first).
// Returns the metadata JSON text.
template <typename T>
std::string load_checkpoint(const std::string& path, ModelParams<T>& params,
                            std::vector<double>* loss_curve = nullptr);

}  // namespace padprobe
