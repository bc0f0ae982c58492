#pragma once

#include <string>

#include "masdt/tensor.hpp"

namespace masdt {

// 8-bit RGB PNG. Values clamp to [0,1] on write and come back as v/255.
void write_png_rgb(const std::string& path, const Tensor& image);
Tensor read_png_rgb(const std::string& path);

// Binary PGM (P5, maxval 255) for grayscale maps.
void write_pgm(const std::string& path, const Tensor& gray);

}  // namespace masdt
