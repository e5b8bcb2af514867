#pragma once

#include <string>

#include "semimoe/tensor.hpp"

namespace semimoe {

// 8-bit grayscale PNG <-> binary mask (0 <-> background, 255 <-> foreground).
// Reading rejects files containing values other than 0 and 255 and reports
// the offending values.
void write_mask_png(const std::string& path, const Tensor& mask);
Tensor read_mask_png(const std::string& path);

// 8-bit RGB PNG <-> image tensor 3×H×W with values in [0, 1].
void write_rgb_png(const std::string& path, const Tensor& image);
Tensor read_rgb_png(const std::string& path);

// NPY v1.0 files holding a little-endian float32 H×W array. The header is
// written by hand: magic "\x93NUMPY", version 1.0, and a Python dict
// literal {'descr': '<f4', 'fortran_order': False, 'shape': (H, W), }
// padded with spaces to a 64-byte multiple and terminated by '\n'.
void write_npy_f32(const std::string& path, const Tensor& grid);
Tensor read_npy_f32(const std::string& path);

}  // namespace semimoe
