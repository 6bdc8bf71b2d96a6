#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "f2v/errors.hpp"

namespace f2v {

/// Dense channel-major (C, H, W) array of doubles. Batch size is always 1 in
/// this project, so images, feature maps and masks all use this type.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  bool empty() const noexcept { return data.empty(); }

  double& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }

  std::span<double> channel(int ch) { return {data.data() + ch * plane(), plane()}; }
  std::span<const double> channel(int ch) const { return {data.data() + ch * plane(), plane()}; }

  bool same_shape(const Tensor& o) const noexcept { return c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const;
};

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& t, int begin, int count);
Tensor replicate_channels(const Tensor& single, int count);
/// ITU-R BT.601 luma for 3-channel input; 1-channel input is returned as is.
Tensor luminance(const Tensor& t);
void clip01(Tensor& t);
bool all_finite(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double mean(const Tensor& t);

/// 2x2 average pooling; odd trailing rows/columns are dropped.
Tensor avg_pool2(const Tensor& t);
Tensor avg_pool2_backward(const Tensor& grad_out, int in_h, int in_w);

/// Bilinear resampling with half-pixel centers (no antialiasing).
Tensor resize_bilinear(const Tensor& t, int out_h, int out_w);
/// Bilinear resampling of the source window [x0, x0+cw) x [y0, y0+ch).
Tensor resample_window(const Tensor& t, double x0, double y0, double cw, double ch, int out_h,
                       int out_w);

}  // namespace f2v
