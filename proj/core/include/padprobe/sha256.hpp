#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace padprobe {

class Sha256 {
public:
  Sha256();
  void update(const void* data, size_t len);
  // hex digest; finalizes a copy, so update() may continue afterwards
  std::string hex() const;

private:
  uint32_t h_[8];
  uint8_t buf_[64];
  uint64_t total_ = 0;
  size_t buf_len_ = 0;

  void compress(const uint8_t* block);
};

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace padprobe
