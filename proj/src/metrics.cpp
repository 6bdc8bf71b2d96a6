#include "f2v/metrics.hpp"

#include <dlfcn.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "f2v/inference.hpp"
#include "f2v/trainer.hpp"

namespace f2v::metrics {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------ PSNR / SSIM

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require(a.same_shape(b), "psnr: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  require(!a.empty(), "psnr: empty image");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int kWin = 11;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> w{};
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kWin / 2;
    w[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Separable 'valid' filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w) {
  static const auto g = gaussian_window();
  const int oh = h - kWin + 1, ow = w - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k)
        s += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "ssim: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  require(a.h >= kWin && a.w >= kWin, "ssim: images must be at least 11x11, got " + a.shape_str());
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  double total = 0.0;
  std::size_t count = 0;
  for (int ch = 0; ch < a.c; ++ch) {
    std::vector<double> x(a.channel(ch).begin(), a.channel(ch).end());
    std::vector<double> y(b.channel(ch).begin(), b.channel(ch).end());
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, a.h, a.w), my = filter_valid(y, a.h, a.w);
    const auto sxx = filter_valid(xx, a.h, a.w), syy = filter_valid(yy, a.h, a.w), sxy = filter_valid(xy, a.h, a.w);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// ------------------------------------------------------------- extractors

double FeatureExtractor::image_distance(const Tensor& a, const Tensor& b) const {
  const Eigen::VectorXd fa = embed_image(a), fb = embed_image(b);
  require(fa.size() == fb.size() && fa.size() > 0, "lpips: extractor returned inconsistent features");
  return (fa - fb).squaredNorm() / static_cast<double>(fa.size());
}

namespace {

Eigen::VectorXd flatten_grid(const Tensor& image, int grid) {
  const Tensor g = resize_bilinear(luminance(image), grid, grid);
  return Eigen::Map<const Eigen::VectorXd>(g.data.data(), static_cast<Eigen::Index>(g.size()));
}

}  // namespace

FallbackExtractor::FallbackExtractor() {
  std::mt19937_64 rng(20240521);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int img_in = kImageGrid * kImageGrid;
  const int vid_in = kVideoSegments * kVideoGrid * kVideoGrid;
  image_proj_.resize(64, img_in);
  for (Eigen::Index i = 0; i < image_proj_.size(); ++i) image_proj_.data()[i] = n01(rng) / std::sqrt(img_in);
  video_proj_.resize(32, vid_in);
  for (Eigen::Index i = 0; i < video_proj_.size(); ++i) video_proj_.data()[i] = n01(rng) / std::sqrt(vid_in);
}

Eigen::VectorXd FallbackExtractor::embed_image(const Tensor& image) const {
  return (image_proj_ * flatten_grid(image, kImageGrid)).cwiseMax(0.0);
}

Eigen::VectorXd FallbackExtractor::embed_video(const Video& video) const {
  require(!video.empty(), "embed_video: empty video");
  const int per = kVideoGrid * kVideoGrid;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(kVideoSegments * per);
  const auto n = video.size();
  for (int s = 0; s < kVideoSegments; ++s) {
    // Frames [lo, hi) fall into segment s; short videos reuse frames.
    auto lo = static_cast<std::size_t>(s) * n / kVideoSegments;
    auto hi = static_cast<std::size_t>(s + 1) * n / kVideoSegments;
    if (hi <= lo) hi = lo + 1;
    lo = std::min(lo, n - 1);
    hi = std::min(hi, n);
    for (auto t = lo; t < hi; ++t) x.segment(s * per, per) += flatten_grid(video[t], kVideoGrid);
    x.segment(s * per, per) /= static_cast<double>(hi - lo);
  }
  return video_proj_ * x;
}

PluginExtractor::PluginExtractor(const fs::path& library) {
  handle_ = dlopen(library.c_str(), RTLD_NOW | RTLD_LOCAL);
  if (!handle_) throw ConfigError("cannot load extractor plugin " + library.string() + ": " + dlerror());
  auto id_fn = reinterpret_cast<const char* (*)()>(dlsym(handle_, "f2v_extractor_id"));
  auto dim_fn = reinterpret_cast<int (*)()>(dlsym(handle_, "f2v_extractor_dim"));
  embed_ = reinterpret_cast<int (*)(const double*, int, int, int, double*)>(dlsym(handle_, "f2v_extractor_embed"));
  if (!id_fn || !dim_fn || !embed_) {
    dlclose(handle_);
    throw ConfigError("extractor plugin " + library.string() + " lacks the f2v_extractor_* symbols");
  }
  id_ = id_fn();
  dim_ = dim_fn();
  if (dim_ <= 0) {
    dlclose(handle_);
    throw ConfigError("extractor plugin " + library.string() + " reports non-positive dimension");
  }
}

PluginExtractor::~PluginExtractor() {
  if (handle_) dlclose(handle_);
}

Eigen::VectorXd PluginExtractor::embed_video(const Video& video) const {
  require(!video.empty(), "embed_video: empty video");
  const int h = video.front().h, w = video.front().w;
  std::vector<double> buf;
  buf.reserve(video.size() * static_cast<std::size_t>(h) * w);
  for (const auto& f : video) {
    const Tensor l = luminance(f);
    require(l.h == h && l.w == w, "embed_video: frame shapes differ");
    buf.insert(buf.end(), l.data.begin(), l.data.end());
  }
  Eigen::VectorXd out(dim_);
  if (embed_(buf.data(), static_cast<int>(video.size()), h, w, out.data()) != 0)
    throw Error("extractor plugin '" + id_ + "' failed to embed a video");
  return out;
}

Eigen::VectorXd PluginExtractor::embed_image(const Tensor& image) const { return embed_video({image}); }

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec) {
  if (spec.empty() || spec == "fallback") return std::make_unique<FallbackExtractor>();
  return std::make_unique<PluginExtractor>(spec);
}

double lpips(const Tensor& a, const Tensor& b, const FeatureExtractor& extractor) {
  require(a.same_shape(b), "lpips: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  return extractor.image_distance(a, b);
}

// -------------------------------------------------------------------- FVD

FeatureSet embed_videos(const std::vector<Video>& videos, const FeatureExtractor& extractor) {
  FeatureSet out{extractor.id(), {}};
  for (const auto& v : videos) out.features.push_back(extractor.embed_video(v));
  return out;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void gaussian_fit(const FeatureSet& s, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const auto n = static_cast<Eigen::Index>(s.features.size());
  const Eigen::Index d = s.features.front().size();
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(s.features[static_cast<std::size_t>(i)].size() == d, "fvd: feature length varies within a set");
    x.row(i) = s.features[static_cast<std::size_t>(i)].transpose();
  }
  mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
  cov = centered.transpose() * centered / static_cast<double>(n - 1);
}

}  // namespace

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2, double eps) {
  require(mu1.size() == mu2.size() && s1.rows() == mu1.size() && s2.rows() == mu2.size() &&
              s1.cols() == s1.rows() && s2.cols() == s2.rows(),
          "frechet_distance: dimension mismatch");
  const Eigen::Index d = mu1.size();
  const Eigen::MatrixXd r = psd_sqrt(s1 + eps * Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd prod = r * s2 * r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (prod + prod.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

double fvd(const FeatureSet& real, const FeatureSet& fake) {
  require(real.extractor_id == fake.extractor_id,
          "fvd: feature sets come from different extractors ('" + real.extractor_id + "' vs '" +
              fake.extractor_id + "')");
  require(real.features.size() >= 2 && fake.features.size() >= 2, "fvd: need at least two videos per set");
  require(real.features.front().size() == fake.features.front().size(), "fvd: feature lengths differ");
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd s1, s2;
  gaussian_fit(real, mu1, s1);
  gaussian_fit(fake, mu2, s2);
  return frechet_distance(mu1, s1, mu2, s2);
}

double fvd(const std::vector<Video>& real, const std::vector<Video>& fake, const FeatureExtractor& extractor) {
  return fvd(embed_videos(real, extractor), embed_videos(fake, extractor));
}

// ------------------------------------------------------------- reporting

MetricReport evaluate_videos(const std::vector<std::string>& ids, const std::vector<Video>& real,
                             const std::vector<Video>& fake, const FeatureExtractor& extractor) {
  require(ids.size() == real.size() && real.size() == fake.size(), "evaluate_videos: list sizes differ");
  MetricReport report;
  report.extractor_id = extractor.id();
  report.fvd_backbone = extractor.id();
  for (std::size_t v = 0; v < real.size(); ++v) {
    require(real[v].size() == fake[v].size() && !real[v].empty(),
            "evaluate_videos: frame counts differ for '" + ids[v] + "'");
    VideoScores s{ids[v]};
    for (std::size_t t = 0; t < real[v].size(); ++t) {
      s.ssim += ssim(real[v][t], fake[v][t]);
      s.psnr += psnr(real[v][t], fake[v][t]);
      s.lpips += lpips(real[v][t], fake[v][t], extractor);
    }
    const double inv = 1.0 / static_cast<double>(real[v].size());
    s.ssim *= inv;
    s.psnr *= inv;
    s.lpips *= inv;
    report.per_video.push_back(s);
    report.clip_length = static_cast<int>(real[v].size());
  }
  if (!report.per_video.empty()) {
    const double inv = 1.0 / static_cast<double>(report.per_video.size());
    for (const auto& s : report.per_video) {
      report.aggregate.ssim += s.ssim * inv;
      report.aggregate.psnr += s.psnr * inv;
      report.aggregate.lpips += s.lpips * inv;
    }
  }
  if (real.size() >= 2) {
    report.fvd = fvd(real, fake, extractor);
  } else {
    report.warnings.push_back("fvd undefined with fewer than two videos");
  }
  return report;
}

MetricReport evaluate(const std::vector<data::PairedSample>& test, const fs::path& checkpoint,
                      const FeatureExtractor& extractor, const EvaluateOptions& opts) {
  if (test.empty()) throw ConfigError("test split is empty");
  require(opts.frames >= 3 && opts.frames % 3 == 0, "evaluate: frame count must be a multiple of 3");
  auto loaded = train::load_generator(checkpoint);
  std::vector<std::string> ids;
  std::vector<Video> real, fake;
  int skipped = 0;
  std::vector<std::string> warnings;
  for (const auto& sample : test) {
    data::Rng rng(opts.seed);
    data::TrainingSequence gt;
    try {
      gt = data::sample_training_frames(sample, rng, opts.frames / 3);
    } catch (const InsufficientFramesError& e) {
      ++skipped;
      warnings.push_back("skipped '" + sample.patient_id + "': " + e.what());
      continue;
    }
    require(sample.cf_image.h == loaded.config.image_size,
            "evaluate: sample '" + sample.patient_id + "' was not preprocessed to the checkpoint image size");
    auto frames = inference::render(loaded.generator, sample.cf_image, opts.frames, opts.smoothing);
    ids.push_back(sample.patient_id);
    real.push_back(std::move(gt.frames));
    fake.push_back(std::move(frames));
  }
  MetricReport report = evaluate_videos(ids, real, fake, extractor);
  report.skipped = skipped;
  report.warnings.insert(report.warnings.begin(), warnings.begin(), warnings.end());
  return report;
}

namespace {

json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

std::string csv_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

json to_json(const MetricReport& r) {
  json per = json::array();
  for (const auto& s : r.per_video)
    per.push_back({{"id", s.id}, {"ssim", s.ssim}, {"psnr", number_or_inf(s.psnr)}, {"lpips", s.lpips}});
  return {{"per_video", per},
          {"aggregate",
           {{"ssim", r.aggregate.ssim}, {"psnr", number_or_inf(r.aggregate.psnr)}, {"lpips", r.aggregate.lpips}}},
          {"fvd", r.fvd ? json(*r.fvd) : json(nullptr)},
          {"extractor_id", r.extractor_id},
          {"fvd_backbone", r.fvd_backbone},
          {"clip_length", r.clip_length},
          {"skipped", r.skipped},
          {"warnings", r.warnings}};
}

std::string to_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "id,ssim,psnr,lpips\n";
  for (const auto& s : r.per_video)
    os << s.id << ',' << csv_number(s.ssim) << ',' << csv_number(s.psnr) << ',' << csv_number(s.lpips) << '\n';
  os << "mean," << csv_number(r.aggregate.ssim) << ',' << csv_number(r.aggregate.psnr) << ','
     << csv_number(r.aggregate.lpips) << '\n';
  return os.str();
}

void write_report(const MetricReport& r, const fs::path& out) {
  fs::path stem = out;
  stem.replace_extension();
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::ofstream js(stem.string() + ".json");
  std::ofstream cs(stem.string() + ".csv");
  if (!js || !cs) throw IoError("cannot write report next to " + stem.string());
  js << to_json(r).dump(2) << '\n';
  cs << to_csv(r);
}

}  // namespace f2v::metrics
