#pragma once

#include <filesystem>
#include <vector>

#include "padprobe/image.hpp"

namespace padprobe {

// Fixed encoder settings (level 6, no filtering) so regeneration is
// byte-identical on a given platform.
std::vector<uint8_t> encode_png(const Image& im);
Image decode_png(const uint8_t* data, size_t size);

void write_png(const std::filesystem::path& path, const Image& im);
Image read_png(const std::filesystem::path& path);

}  // namespace padprobe
