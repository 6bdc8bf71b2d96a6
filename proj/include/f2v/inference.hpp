#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "f2v/models.hpp"

namespace f2v::inference {

/// Autoregressive rollout: frame t is generated from the CF image and the
/// three previous outputs; the window starts as three copies of the CF
/// luminance. Returns T frames in [0,1].
std::vector<Tensor> rollout(const models::Generator& generator, const Tensor& cf, int frames);

/// Width-3 temporal box filter with truncated boundaries:
/// out[t] = mean(raw[t-1], raw[t], raw[t+1]) over the indices that exist.
std::vector<Tensor> smooth_triple_average(const std::vector<Tensor>& raw);

enum class Smoothing { triple_average, window_overlap, none };

std::string to_string(Smoothing s);
/// "triple_average", "window_overlap" or "none"; anything else is a ConfigError.
Smoothing parse_smoothing(const std::string& s);

/// Frame t averaged over the generator's predictions of it from the windows
/// ending at t-1, t-2 and t-3 of the raw rollout, each run with step index t.
/// Windows holding only bootstrap frames are skipped.
std::vector<Tensor> window_overlap_average(const models::Generator& generator, const Tensor& cf,
                                           const std::vector<Tensor>& raw);

/// rollout followed by the selected smoothing.
std::vector<Tensor> render(const models::Generator& generator, const Tensor& cf, int frames, Smoothing mode);

struct GeneratedVideo {
  std::vector<Tensor> frames;
  double fps_hint = 1.0;
  std::string checkpoint_sha256;
  std::uint64_t seed = 0;
  Smoothing smoothing = Smoothing::triple_average;
};

struct GenerateOptions {
  int frames = 12;
  Smoothing smoothing = Smoothing::triple_average;
  bool force = false;  // allow writing into a non-empty output directory
  std::uint64_t seed = 0;
  double fps_hint = 1.0;
};

/// Reads the CF PNG, runs rollout (+ smoothing) with the checkpoint's
/// generator and writes frame_000.png ... plus video.json into out_dir.
GeneratedVideo generate_video(const std::filesystem::path& cf_path,
                              const std::filesystem::path& checkpoint,
                              const std::filesystem::path& out_dir, const GenerateOptions& opts);

}  // namespace f2v::inference
