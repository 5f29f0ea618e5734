#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csdenoise/tensor.hpp"

namespace csd {

// 8-bit grayscale PNG
void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& pixels);
std::vector<uint8_t> read_png_gray8(const std::string& path, int* width, int* height);

// Display mapping for spectrogram views. real/imag planes map the 1st..99th
// percentile span; abs planes map [0, p99]. Parameters land in a sidecar
// "<png>.meta" so the byte image is invertible up to quantization.
struct PngMapping {
  double lo = 0.0, hi = 1.0;
};
PngMapping plane_mapping(const RTensor& plane, bool is_abs);
std::vector<uint8_t> quantize_plane(const RTensor& plane, const PngMapping& map);

// writes the PNG and its .meta sidecar; plane is [H, W]
void export_plane_png(const std::string& path, const RTensor& plane, bool is_abs);

}  // namespace csd
