#include "f2v/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace f2v {

std::string Tensor::shape_str() const {
  return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.h == b.h && a.w == b.w,
          "concat_channels: spatial mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

Tensor slice_channels(const Tensor& t, int begin, int count) {
  require(begin >= 0 && count > 0 && begin + count <= t.c, "slice_channels: range out of bounds");
  Tensor out(count, t.h, t.w);
  auto first = t.data.begin() + static_cast<std::ptrdiff_t>(begin * t.plane());
  std::copy(first, first + static_cast<std::ptrdiff_t>(out.size()), out.data.begin());
  return out;
}

Tensor replicate_channels(const Tensor& single, int count) {
  require(single.c == 1, "replicate_channels: expected 1-channel input");
  Tensor out(count, single.h, single.w);
  for (int ch = 0; ch < count; ++ch)
    std::copy(single.data.begin(), single.data.end(), out.channel(ch).begin());
  return out;
}

Tensor luminance(const Tensor& t) {
  if (t.c == 1) return t;
  require(t.c == 3, "luminance: expected 1 or 3 channels, got " + t.shape_str());
  Tensor out(1, t.h, t.w);
  auto r = t.channel(0), g = t.channel(1), b = t.channel(2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return out;
}

void clip01(Tensor& t) {
  for (auto& v : t.data) v = std::clamp(v, 0.0, 1.0);
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

double mean(const Tensor& t) {
  if (t.empty()) return 0.0;
  return std::accumulate(t.data.begin(), t.data.end(), 0.0) / static_cast<double>(t.size());
}

Tensor avg_pool2(const Tensor& t) {
  require(t.h >= 2 && t.w >= 2, "avg_pool2: input too small " + t.shape_str());
  Tensor out(t.c, t.h / 2, t.w / 2);
  for (int ch = 0; ch < t.c; ++ch)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(ch, y, x) = 0.25 * (t.at(ch, 2 * y, 2 * x) + t.at(ch, 2 * y, 2 * x + 1) +
                                   t.at(ch, 2 * y + 1, 2 * x) + t.at(ch, 2 * y + 1, 2 * x + 1));
  return out;
}

Tensor avg_pool2_backward(const Tensor& grad_out, int in_h, int in_w) {
  Tensor g(grad_out.c, in_h, in_w);
  for (int ch = 0; ch < grad_out.c; ++ch)
    for (int y = 0; y < grad_out.h; ++y)
      for (int x = 0; x < grad_out.w; ++x) {
        const double v = 0.25 * grad_out.at(ch, y, x);
        g.at(ch, 2 * y, 2 * x) += v;
        g.at(ch, 2 * y, 2 * x + 1) += v;
        g.at(ch, 2 * y + 1, 2 * x) += v;
        g.at(ch, 2 * y + 1, 2 * x + 1) += v;
      }
  return g;
}

Tensor resample_window(const Tensor& t, double x0, double y0, double cw, double ch, int out_h,
                       int out_w) {
  require(out_h > 0 && out_w > 0, "resample_window: empty output");
  Tensor out(t.c, out_h, out_w);
  const double sx = cw / out_w;
  const double sy = ch / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp(y0 + (y + 0.5) * sy - 0.5, 0.0, t.h - 1.0);
    const int y_lo = static_cast<int>(std::floor(fy));
    const int y_hi = std::min(y_lo + 1, t.h - 1);
    const double wy = fy - y_lo;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp(x0 + (x + 0.5) * sx - 0.5, 0.0, t.w - 1.0);
      const int x_lo = static_cast<int>(std::floor(fx));
      const int x_hi = std::min(x_lo + 1, t.w - 1);
      const double wx = fx - x_lo;
      for (int c = 0; c < t.c; ++c) {
        const double top = (1 - wx) * t.at(c, y_lo, x_lo) + wx * t.at(c, y_lo, x_hi);
        const double bot = (1 - wx) * t.at(c, y_hi, x_lo) + wx * t.at(c, y_hi, x_hi);
        out.at(c, y, x) = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& t, int out_h, int out_w) {
  if (t.h == out_h && t.w == out_w) return t;
  return resample_window(t, 0.0, 0.0, t.w, t.h, out_h, out_w);
}

}  // namespace f2v
