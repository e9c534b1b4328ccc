#pragma once

#include <string>

#include "cortexforge/tensor.hpp"

namespace cortexforge::imageio {

// Decodes a PNG, PPM (P6), or PGM (P5) file by magic bytes into an
// {height, width, channels} tensor with values in [0, 1]. Grayscale files
// load as one channel; alpha channels are dropped.
Tensor load_image(const std::string& path);

// Writes a {h, w, 1} tensor as binary PGM or {h, w, 3} as binary PPM.
// Values are clamped to [0, 1] and quantized to 8 bits.
void write_pnm(const std::string& path, const Tensor& image);

// Catmull-Rom bicubic resampling. Same-size output is a bit-exact copy.
Tensor resize_bicubic(const Tensor& image, int out_height, int out_width);

// Samples one channel at a fractional position with Catmull-Rom taps,
// clamping tap coordinates at the border. (y, x) in pixel units.
float sample_bicubic(const Tensor& image, float y, float x, std::size_t channel);

}  // namespace cortexforge::imageio
