#include "f2v/knowledge_mask.hpp"

#include <algorithm>
#include <cmath>

namespace f2v {

namespace {

Tensor morph(const Tensor& m, bool dilate) {
  Tensor out(1, m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      double acc = dilate ? 0.0 : 1.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = std::clamp(y + dy, 0, m.h - 1);
          const int xx = std::clamp(x + dx, 0, m.w - 1);
          acc = dilate ? std::max(acc, m.at(0, yy, xx)) : std::min(acc, m.at(0, yy, xx));
        }
      out.at(0, y, x) = acc;
    }
  return out;
}

}  // namespace

KnowledgeMask compute_mask(const Tensor& first_frame, const Tensor& last_frame,
                           const MaskOptions& opts) {
  require(first_frame.same_shape(last_frame), "compute_mask: frame shapes differ " +
                                                  first_frame.shape_str() + " vs " +
                                                  last_frame.shape_str());
  require(opts.threshold >= 0.0, "compute_mask: threshold must be >= 0");
  const Tensor a = luminance(first_frame);
  const Tensor b = luminance(last_frame);
  KnowledgeMask m{Tensor(1, a.h, a.w), MaskKind::binary};
  for (std::size_t i = 0; i < a.size(); ++i)
    m.values.data[i] = std::abs(b.data[i] - a.data[i]) * 255.0 > opts.threshold ? 1.0 : 0.0;
  if (opts.morphology) {
    m.values = morph(morph(m.values, false), true);  // open
    m.values = morph(morph(m.values, true), false);  // close
  }
  return m;
}

KnowledgeMask downsample_mask(const KnowledgeMask& mask, int factor) {
  require(factor >= 1, "downsample_mask: factor must be >= 1");
  require(mask.height() % factor == 0 && mask.width() % factor == 0,
          "downsample_mask: factor " + std::to_string(factor) + " does not divide " +
              mask.values.shape_str());
  const int oh = mask.height() / factor, ow = mask.width() / factor;
  KnowledgeMask out{Tensor(1, oh, ow), MaskKind::weighted};
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) s += mask.values.at(0, y * factor + dy, x * factor + dx);
      out.values.at(0, y, x) = s * inv;
    }
  return out;
}

KnowledgeMask downsample_mask_to(const KnowledgeMask& mask, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1 && out_h <= mask.height() && out_w <= mask.width(),
          "downsample_mask_to: invalid target shape");
  if (mask.height() % out_h == 0 && mask.width() % out_w == 0 &&
      mask.height() / out_h == mask.width() / out_w)
    return downsample_mask(mask, mask.height() / out_h);

  KnowledgeMask out{Tensor(1, out_h, out_w), MaskKind::weighted};
  const double sy = static_cast<double>(mask.height()) / out_h;
  const double sx = static_cast<double>(mask.width()) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double y0 = y * sy, y1 = (y + 1) * sy;
    for (int x = 0; x < out_w; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx;
      double s = 0.0;
      for (int iy = static_cast<int>(y0); iy < std::min(mask.height(), static_cast<int>(std::ceil(y1))); ++iy) {
        const double oy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        for (int ix = static_cast<int>(x0); ix < std::min(mask.width(), static_cast<int>(std::ceil(x1))); ++ix) {
          const double ox = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
          s += oy * ox * mask.values.at(0, iy, ix);
        }
      }
      out.values.at(0, y, x) = s / (sy * sx);
    }
  }
  return out;
}

double mask_coverage(const KnowledgeMask& mask) { return mean(mask.values); }

KnowledgeMask binarize(const KnowledgeMask& mask, double cutoff) {
  KnowledgeMask out{mask.values, MaskKind::binary};
  for (auto& v : out.values.data) v = v >= cutoff ? 1.0 : 0.0;
  return out;
}

}  // namespace f2v
