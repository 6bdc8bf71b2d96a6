#pragma once

#include <optional>

#include "f2v/tensor.hpp"

namespace f2v {

enum class MaskKind { binary, weighted };

/// Per-pixel change mask between the first and last angiogram frames.
struct KnowledgeMask {
  Tensor values;  // 1 x H x W
  MaskKind kind = MaskKind::binary;

  int height() const { return values.h; }
  int width() const { return values.w; }
};

/// Default change threshold on the 0-255 intensity scale.
inline constexpr double kDefaultMaskThreshold = 45.0;

struct MaskOptions {
  double threshold = kDefaultMaskThreshold;  // 0-255 scale, strict inequality
  bool morphology = false;                   // 3 px open then close
};

/// 1 where |last - first| * 255 > threshold. Multi-channel frames are reduced
/// to luminance first.
KnowledgeMask compute_mask(const Tensor& first_frame, const Tensor& last_frame,
                           const MaskOptions& opts = {});
inline KnowledgeMask compute_mask(const Tensor& first_frame, const Tensor& last_frame,
                                  double threshold) {
  return compute_mask(first_frame, last_frame, MaskOptions{threshold, false});
}

/// Area-average pooling by an integer factor. The result is always weighted.
KnowledgeMask downsample_mask(const KnowledgeMask& mask, int factor);
/// Area-average pooling onto an arbitrary grid (exact fractional overlap).
KnowledgeMask downsample_mask_to(const KnowledgeMask& mask, int out_h, int out_w);

/// Mean of the mask values.
double mask_coverage(const KnowledgeMask& mask);

/// Binary mask from a weighted one: value >= cutoff becomes 1.
KnowledgeMask binarize(const KnowledgeMask& mask, double cutoff = 0.5);

}  // namespace f2v
