#pragma once

#include <filesystem>

#include "f2v/tensor.hpp"

namespace f2v {

/// Reads an 8- or 16-bit PNG. Grayscale files give 1 channel, colour files
/// give RGB (3 channels); values are scaled into [0,1].
Tensor read_png(const std::filesystem::path& path);
/// Writes a 1- or 3-channel tensor as an 8-bit PNG (values clipped to [0,1]).
void write_png(const std::filesystem::path& path, const Tensor& image);

}  // namespace f2v
