#include "f2v/inference.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "f2v/data_pipeline.hpp"
#include "f2v/image_io.hpp"
#include "f2v/trainer.hpp"

namespace f2v::inference {

namespace fs = std::filesystem;

std::vector<Tensor> rollout(const models::Generator& generator, const Tensor& cf, int frames) {
  require(frames >= 1, "rollout: frame count must be >= 1");
  require(cf.c == 3, "rollout: CF image must have 3 channels");
  const Tensor luma = luminance(cf);
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    const auto window = train::preceding_window(out, static_cast<std::size_t>(t), luma);
    const auto state = models::make_generation_state(cf, window, t);
    Tensor frame = models::to_unit_range(generator.forward(state).frame);
    clip01(frame);
    out.push_back(std::move(frame));
  }
  return out;
}

std::vector<Tensor> smooth_triple_average(const std::vector<Tensor>& raw) {
  require(!raw.empty(), "smooth_triple_average: empty sequence");
  const std::size_t n = raw.size();
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t == 0 ? 0 : t - 1;
    const std::size_t hi = std::min(n - 1, t + 1);
    Tensor acc(raw[t].c, raw[t].h, raw[t].w);
    for (std::size_t k = lo; k <= hi; ++k) {
      require(raw[k].same_shape(raw[t]), "smooth_triple_average: frame shapes differ");
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += raw[k].data[i];
    }
    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
    for (auto& v : acc.data) v *= inv;
    out.push_back(std::move(acc));
  }
  return out;
}

std::string to_string(Smoothing s) {
  switch (s) {
    case Smoothing::triple_average: return "triple_average";
    case Smoothing::window_overlap: return "window_overlap";
    case Smoothing::none: return "none";
  }
  return "none";
}

Smoothing parse_smoothing(const std::string& s) {
  for (auto m : {Smoothing::triple_average, Smoothing::window_overlap, Smoothing::none})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown smoothing mode '" + s + "' (triple_average, window_overlap, none)");
}

std::vector<Tensor> window_overlap_average(const models::Generator& generator, const Tensor& cf,
                                           const std::vector<Tensor>& raw) {
  require(!raw.empty(), "window_overlap_average: empty sequence");
  const Tensor luma = luminance(cf);
  std::vector<Tensor> out;
  out.reserve(raw.size());
  for (std::size_t t = 0; t < raw.size(); ++t) {
    Tensor acc = raw[t];
    int n = 1;
    for (std::size_t back = 2; back <= 3 && back <= t; ++back) {
      const auto window = train::preceding_window(raw, t + 1 - back, luma);
      Tensor f = models::to_unit_range(
          generator.forward(models::make_generation_state(cf, window, static_cast<int>(t))).frame);
      clip01(f);
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += f.data[i];
      ++n;
    }
    for (auto& v : acc.data) v /= n;
    out.push_back(std::move(acc));
  }
  return out;
}

std::vector<Tensor> render(const models::Generator& generator, const Tensor& cf, int frames, Smoothing mode) {
  auto raw = rollout(generator, cf, frames);
  switch (mode) {
    case Smoothing::triple_average: return smooth_triple_average(raw);
    case Smoothing::window_overlap: return window_overlap_average(generator, cf, raw);
    case Smoothing::none: break;
  }
  return raw;
}

GeneratedVideo generate_video(const fs::path& cf_path, const fs::path& checkpoint, const fs::path& out_dir,
                              const GenerateOptions& opts) {
  require(opts.frames >= 1, "generate: --frames must be >= 1");
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !opts.force)
    throw ConfigError("output directory " + out_dir.string() + " is not empty (use --force to overwrite)");

  auto loaded = train::load_generator(checkpoint);
  const Tensor cf = data::preprocess(read_png(cf_path), loaded.config.image_size);
  Tensor cf3 = cf;
  if (cf3.c == 1) cf3 = concat_channels(concat_channels(cf, cf), cf);

  GeneratedVideo video;
  video.frames = render(loaded.generator, cf3, opts.frames, opts.smoothing);
  video.fps_hint = opts.fps_hint;
  video.checkpoint_sha256 = loaded.sha256;
  video.seed = opts.seed;
  video.smoothing = opts.smoothing;

  fs::create_directories(out_dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.png", t);
    write_png(out_dir / name, video.frames[t]);
    files.push_back(name);
  }
  nlohmann::json manifest = {{"frames", files},
                             {"frame_count", video.frames.size()},
                             {"fps_hint", video.fps_hint},
                             {"smoothing", to_string(opts.smoothing)},
                             {"image_size", loaded.config.image_size},
                             {"cf_image", cf_path.filename().string()},
                             {"checkpoint", checkpoint.filename().string()},
                             {"checkpoint_sha256", video.checkpoint_sha256},
                             {"seed", video.seed}};
  std::ofstream out(out_dir / "video.json");
  if (!out) throw IoError("cannot write " + (out_dir / "video.json").string());
  out << manifest.dump(2) << '\n';
  return video;
}

}  // namespace f2v::inference
