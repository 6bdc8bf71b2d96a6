#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "f2v/data_pipeline.hpp"
#include "f2v/inference.hpp"

namespace f2v::metrics {

using Video = std::vector<Tensor>;

/// PSNR in dB; +infinity when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5, k1 0.01,
/// k2 0.03, dynamic range 1). Both images must be at least 11x11.
double ssim(const Tensor& a, const Tensor& b);

/// Backbone used by LPIPS and FVD. Implementations must be deterministic and
/// return vectors of a fixed length.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual Eigen::VectorXd embed_video(const Video& video) const = 0;
  virtual Eigen::VectorXd embed_image(const Tensor& image) const = 0;
  /// Perceptual distance between two images: mean squared difference of the
  /// image embeddings unless an extractor overrides it.
  virtual double image_distance(const Tensor& a, const Tensor& b) const;
};

/// Fixed-seed random projections of downsampled frames. Not comparable to
/// published LPIPS/FVD values; reports carry its id.
class FallbackExtractor final : public FeatureExtractor {
 public:
  FallbackExtractor();
  std::string id() const override { return "fallback-randproj-v1"; }
  Eigen::VectorXd embed_video(const Video& video) const override;
  Eigen::VectorXd embed_image(const Tensor& image) const override;

  static constexpr int kImageGrid = 16;
  static constexpr int kVideoGrid = 8;
  static constexpr int kVideoSegments = 4;

 private:
  Eigen::MatrixXd image_proj_;  // 64 x 256
  Eigen::MatrixXd video_proj_;  // 32 x 256
};

/// Shared library exposing
///   const char* f2v_extractor_id(void);
///   int f2v_extractor_dim(void);
///   int f2v_extractor_embed(const double* frames, int t, int h, int w, double* out);
/// frames is T x H x W row-major luminance in [0,1]; the call returns 0 on
/// success. Images are embedded as single-frame videos.
class PluginExtractor final : public FeatureExtractor {
 public:
  explicit PluginExtractor(const std::filesystem::path& library);
  ~PluginExtractor() override;
  PluginExtractor(const PluginExtractor&) = delete;
  PluginExtractor& operator=(const PluginExtractor&) = delete;

  std::string id() const override { return id_; }
  Eigen::VectorXd embed_video(const Video& video) const override;
  Eigen::VectorXd embed_image(const Tensor& image) const override;

 private:
  void* handle_ = nullptr;
  std::string id_;
  int dim_ = 0;
  int (*embed_)(const double*, int, int, int, double*) = nullptr;
};

/// "fallback" or a path to a plugin library.
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec);

double lpips(const Tensor& a, const Tensor& b, const FeatureExtractor& extractor);

struct FeatureSet {
  std::string extractor_id;
  std::vector<Eigen::VectorXd> features;
};

FeatureSet embed_videos(const std::vector<Video>& videos, const FeatureExtractor& extractor);

inline constexpr double kSqrtmEpsilon = 1e-10;

/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}); the trace of the square
/// root is computed as tr((R S2 R)^{1/2}) with R = (S1 + eps I)^{1/2}.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2, double eps = kSqrtmEpsilon);

/// Gaussian fit (mean, unbiased covariance) of each set, then Fréchet
/// distance. Needs at least two vectors per set and equal extractor ids.
double fvd(const FeatureSet& real, const FeatureSet& fake);
double fvd(const std::vector<Video>& real, const std::vector<Video>& fake, const FeatureExtractor& extractor);

struct VideoScores {
  std::string id;
  double ssim = 0, psnr = 0, lpips = 0;
};

struct MetricReport {
  std::vector<VideoScores> per_video;
  VideoScores aggregate{"mean"};
  std::optional<double> fvd;  // empty when fewer than two videos
  std::string extractor_id;
  int skipped = 0;
  std::vector<std::string> warnings;
  std::string fvd_backbone;
  int clip_length = 0;
};

/// Scores aligned (real, generated) video pairs.
MetricReport evaluate_videos(const std::vector<std::string>& ids, const std::vector<Video>& real,
                             const std::vector<Video>& fake, const FeatureExtractor& extractor);

struct EvaluateOptions {
  int frames = 12;
  inference::Smoothing smoothing = inference::Smoothing::triple_average;
  std::uint64_t seed = 0;
};

/// Generates a video per test sample with the checkpoint and scores it
/// against frames sampled from the ground-truth series (frames / 3 per
/// phase). Samples lacking frames are skipped and counted.
MetricReport evaluate(const std::vector<data::PairedSample>& test, const std::filesystem::path& checkpoint,
                      const FeatureExtractor& extractor, const EvaluateOptions& opts = {});

nlohmann::json to_json(const MetricReport& r);
std::string to_csv(const MetricReport& r);
/// Writes <stem>.json and <stem>.csv next to each other.
void write_report(const MetricReport& r, const std::filesystem::path& out);

}  // namespace f2v::metrics
