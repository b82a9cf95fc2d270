#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "progdit/tensor.hpp"

namespace progdit {

// grayscale image, row-major, intensities nominally in [0,1]
struct Image {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<double> px;

  double& at(int64_t y, int64_t x) { return px[static_cast<size_t>(y * w + x)]; }
  double at(int64_t y, int64_t x) const { return px[static_cast<size_t>(y * w + x)]; }
  int64_t numel() const { return h * w; }

  static Image zeros(int64_t h, int64_t w) { return Image{h, w, std::vector<double>(static_cast<size_t>(h * w), 0.0)}; }
};

// 8-bit binary PGM (P5), maxval 255
void write_pgm(const std::string& path, const Image& img);
Image read_pgm(const std::string& path);

Tensor image_to_tensor(const Image& img, DType dt);        // [1,H,W]
Image tensor_to_image(const Tensor& t, bool clamp01 = true);  // accepts [1,H,W] or [H,W]

}  // namespace progdit
