#include "f2v/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "f2v/image_io.hpp"

namespace f2v::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Phase p) {
  switch (p) {
    case Phase::vascular: return "vascular";
    case Phase::venous: return "venous";
    case Phase::late: return "late";
  }
  return "unknown";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train|val|test)");
}

Phase phase_for_seconds(double seconds, const PhaseBoundaries& b) {
  if (seconds <= b.vascular_end_s) return Phase::vascular;
  if (seconds <= b.venous_end_s) return Phase::venous;
  return Phase::late;
}

void validate(const PairedSample& s) {
  const std::string who = "patient '" + s.patient_id + "': ";
  if (s.ffa_frames.empty()) throw MalformedSampleError(who + "no FFA frames");
  if (s.phase_labels.size() != s.ffa_frames.size())
    throw MalformedSampleError(who + "phase label count does not match frame count");
  if (s.cf_image.c != 3) throw MalformedSampleError(who + "CF image must have 3 channels");
  for (std::size_t i = 0; i < s.ffa_frames.size(); ++i) {
    const Tensor& f = s.ffa_frames[i];
    if (f.c != 1 || f.h != s.ffa_frames.front().h || f.w != s.ffa_frames.front().w)
      throw MalformedSampleError(who + "frame " + std::to_string(i) + " has shape " + f.shape_str());
    if (i > 0 && s.phase_labels[i] < s.phase_labels[i - 1])
      throw MalformedSampleError(who + "phase labels are not temporally ordered");
  }
}

// ---------------------------------------------------------------- splits

SplitAssignment make_patient_split(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = ids.size();
  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
  const auto rest = n - n_train;
  const auto n_val = rest / 2;
  SplitAssignment out;
  out.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
  return out;
}

// --------------------------------------------------------------- loading

namespace {

json read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(root)) throw ConfigError("dataset root does not exist: " + root.string());
  if (!fs::exists(path)) throw ConfigError("dataset manifest missing: " + path.string());
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

std::string frame_file_name(std::size_t idx, double seconds) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%03zu_%.1f.png", idx, seconds);
  return buf;
}

}  // namespace

std::vector<PairedSample> load_dataset(const fs::path& root, Split split, int target_size,
                                       const PhaseBoundaries& bounds) {
  const json manifest = read_manifest(root);
  if (!manifest.contains("splits") || !manifest.contains("patients"))
    throw ConfigError("manifest lacks 'splits' or 'patients': " + (root / "manifest.json").string());

  std::map<std::string, std::string> owner;
  for (const auto& [name, ids] : manifest["splits"].items())
    for (const auto& id : ids) {
      const auto pid = id.get<std::string>();
      if (auto [it, fresh] = owner.emplace(pid, name); !fresh)
        throw ConfigError("patient '" + pid + "' assigned to both " + it->second + " and " + name);
    }

  const std::string key = to_string(split);
  std::vector<std::string> ids;
  if (manifest["splits"].contains(key))
    for (const auto& id : manifest["splits"][key]) ids.push_back(id.get<std::string>());
  std::sort(ids.begin(), ids.end());

  std::vector<PairedSample> out;
  out.reserve(ids.size());
  for (const auto& pid : ids) {
    if (!manifest["patients"].contains(pid))
      throw MalformedSampleError("patient '" + pid + "' listed in split but has no manifest entry");
    const json& entry = manifest["patients"][pid];
    PairedSample s;
    s.patient_id = pid;
    const std::string cf_rel = entry.value("cf", pid + "/cf.png");
    Tensor cf = read_png(root / cf_rel);
    if (cf.c == 1) cf = concat_channels(concat_channels(cf, cf), cf);
    s.cf_image = preprocess(cf, target_size);

    struct FrameRef {
      std::string file;
      double seconds;
    };
    std::vector<FrameRef> refs;
    for (const auto& fr : entry.value("frames", json::array()))
      refs.push_back({fr.at("file").get<std::string>(), fr.at("seconds").get<double>()});
    if (refs.empty()) throw MalformedSampleError("patient '" + pid + "' has 0 FFA frames");
    std::stable_sort(refs.begin(), refs.end(),
                     [](const FrameRef& a, const FrameRef& b) { return a.seconds < b.seconds; });
    for (const auto& r : refs) {
      Tensor f = luminance(read_png(root / r.file));
      s.ffa_frames.push_back(preprocess(f, target_size));
      s.seconds.push_back(r.seconds);
      s.phase_labels.push_back(phase_for_seconds(r.seconds, bounds));
    }
    validate(s);
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const fs::path& root, const std::vector<PairedSample>& samples,
                   const SplitAssignment& split) {
  fs::create_directories(root);
  json patients = json::object();
  for (const auto& s : samples) {
    validate(s);
    const fs::path dir = root / s.patient_id;
    write_png(dir / "cf.png", s.cf_image);
    json frames = json::array();
    for (std::size_t i = 0; i < s.ffa_frames.size(); ++i) {
      const double sec = i < s.seconds.size() ? s.seconds[i] : static_cast<double>(i);
      const std::string rel = s.patient_id + "/ffa/" + frame_file_name(i, sec);
      write_png(root / rel, s.ffa_frames[i]);
      frames.push_back({{"file", rel}, {"seconds", sec}});
    }
    patients[s.patient_id] = {{"cf", s.patient_id + "/cf.png"}, {"frames", frames}};
  }
  const PhaseBoundaries b;
  json manifest = {
      {"format", "fundus2video-dataset"},
      {"version", 1},
      {"phase_boundaries_s", {{"vascular_end", b.vascular_end_s}, {"venous_end", b.venous_end_s}}},
      {"splits", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
      {"patients", patients}};
  std::ofstream out(root / "manifest.json");
  if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

// -------------------------------------------------------------- sampling

TrainingSequence sample_training_frames(const PairedSample& sample, Rng& rng, int per_phase) {
  require(per_phase >= 1, "sample_training_frames: per_phase must be >= 1");
  validate(sample);
  std::array<std::vector<std::size_t>, 3> by_phase;
  for (std::size_t i = 0; i < sample.phase_labels.size(); ++i)
    by_phase[static_cast<std::size_t>(sample.phase_labels[i])].push_back(i);

  const auto need = static_cast<std::size_t>(per_phase);
  for (std::size_t p = 0; p < 3; ++p)
    if (by_phase[p].size() < need)
      throw InsufficientFramesError(to_string(static_cast<Phase>(p)), by_phase[p].size(), need);

  TrainingSequence seq;
  seq.cf_image = sample.cf_image;
  for (const auto& pool : by_phase) {
    std::vector<std::size_t> picked;
    std::sample(pool.begin(), pool.end(), std::back_inserter(picked), need, rng);
    std::sort(picked.begin(), picked.end());
    seq.source_indices.insert(seq.source_indices.end(), picked.begin(), picked.end());
  }
  for (auto idx : seq.source_indices) seq.frames.push_back(sample.ffa_frames[idx]);
  return seq;
}

// ---------------------------------------------------------- augmentation

namespace {

Tensor apply_geometry(const Tensor& t, const GeometricTransform& g) {
  if (g.identity) return t;
  return resample_window(t, g.x0, g.y0, g.width, g.height, t.h, t.w);
}

void apply_jitter(Tensor& cf, const ColorJitter& j) {
  Tensor lum = luminance(cf);
  const double m = mean(lum);
  for (int ch = 0; ch < cf.c; ++ch) {
    auto plane = cf.channel(ch);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      double v = plane[i] * j.brightness;
      const double l = lum.data[i] * j.brightness;
      v = l + (v - l) * j.saturation;
      v = (v - m * j.brightness) * j.contrast + m * j.brightness;
      plane[i] = v;
    }
  }
}

}  // namespace

AugmentResult augment(const TrainingSequence& seq, Rng& rng, const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const bool do_crop = u01(rng) < cfg.crop_prob;
  const bool do_scale = u01(rng) < cfg.scale_prob;
  const bool do_jitter = u01(rng) < cfg.jitter_prob;

  const int h = seq.cf_image.h;
  const int w = seq.cf_image.w;
  GeometricTransform g;
  if (do_crop || do_scale) {
    const double frac = do_crop ? cfg.min_crop_fraction + (1.0 - cfg.min_crop_fraction) * u01(rng) : 1.0;
    const double zoom =
        do_scale ? 1.0 - cfg.max_scale_delta + 2.0 * cfg.max_scale_delta * u01(rng) : 1.0;
    const double cw = w * frac / zoom;
    const double ch = h * frac / zoom;
    const double ox = u01(rng);
    const double oy = u01(rng);
    if (cw <= w && ch <= h) {
      g.identity = false;
      g.width = cw;
      g.height = ch;
      g.x0 = ox * (w - cw);
      g.y0 = oy * (h - ch);
    }
  }

  AugmentResult res;
  res.sequence.source_indices = seq.source_indices;
  res.sequence.cf_image = apply_geometry(seq.cf_image, g);
  res.applied.push_back(g);
  for (const auto& f : seq.frames) {
    res.sequence.frames.push_back(apply_geometry(f, g));
    res.applied.push_back(g);
  }
  if (do_jitter) {
    const double s = cfg.jitter_strength;
    auto draw = [&] { return 1.0 - s + 2.0 * s * u01(rng); };
    res.jitter.brightness = draw();
    res.jitter.contrast = draw();
    res.jitter.saturation = draw();
    apply_jitter(res.sequence.cf_image, res.jitter);
  }
  clip01(res.sequence.cf_image);
  for (auto& f : res.sequence.frames) clip01(f);
  return res;
}

Tensor preprocess(const Tensor& image, int target_size) {
  require(target_size >= 8, "preprocess: target_size must be >= 8");
  if (image.h < 8 || image.w < 8)
    throw MalformedSampleError("image " + image.shape_str() + " is smaller than 8 px per side");
  if (!all_finite(image)) throw MalformedSampleError("image contains non-finite pixel values");
  const int side = std::min(image.h, image.w);
  const double x0 = (image.w - side) / 2.0;
  const double y0 = (image.h - side) / 2.0;
  Tensor out = (image.h == target_size && image.w == target_size)
                   ? image
                   : resample_window(image, x0, y0, side, side, target_size, target_size);
  clip01(out);
  return out;
}

// ------------------------------------------------------------- synthetic

void validate(const SyntheticSceneParams& p) {
  if (p.size < 8) throw ConfigError("synthetic size must be >= 8");
  if (p.frames < 1) throw ConfigError("synthetic frame count must be >= 1");
  if (p.vessel_count < 0) throw ConfigError("vessel_count must be >= 0");
  if (!(p.dye_front_speed > 0.0)) throw ConfigError("dye_front_speed must be > 0");
  if (!(p.noise_level >= 0.0)) throw ConfigError("noise_level must be >= 0");
  for (const auto& l : p.lesion_regions) {
    if (!(l.radius > 0.0)) throw ConfigError("lesion radius must be > 0");
    if (!(l.leak_rate >= 0.0 && l.leak_rate <= 1.0)) throw ConfigError("leak_rate must be in [0,1]");
  }
}

double lesion_profile(double r, double radius) {
  const double edge = std::clamp((1.15 * radius - r) / (0.3 * radius), 0.0, 1.0);
  return edge * (1.0 + 0.2 * std::max(0.0, 1.0 - r / radius));
}

namespace {

struct Segment {
  double ax, ay, bx, by;
  double arc0, arc1;  // normalized arc length at the endpoints
};

struct Vessel {
  std::vector<Segment> segments;
  double half_width;
};

struct VesselHit {
  double weight = 0.0;  // 1 on the centerline core, 0 outside
  double arc = 1.0;     // normalized distance from the disc along the vessel
};

VesselHit vessel_at(const std::vector<Vessel>& vessels, double u, double v) {
  VesselHit best;
  for (const auto& ves : vessels) {
    for (const auto& s : ves.segments) {
      const double dx = s.bx - s.ax, dy = s.by - s.ay;
      const double len2 = dx * dx + dy * dy;
      double t = len2 > 0 ? ((u - s.ax) * dx + (v - s.ay) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double px = s.ax + t * dx - u, py = s.ay + t * dy - v;
      const double dist = std::sqrt(px * px + py * py);
      const double wgt = std::clamp(2.0 * (1.0 - dist / ves.half_width), 0.0, 1.0);
      if (wgt > best.weight) {
        best.weight = wgt;
        best.arc = s.arc0 + t * (s.arc1 - s.arc0);
      }
    }
  }
  return best;
}

std::vector<double> synthetic_seconds(int frames) {
  const int n_vasc = frames / 3;
  const int n_ven = frames / 3;
  const int n_late = frames - n_vasc - n_ven;
  std::vector<double> secs;
  auto span = [&](int n, double lo, double hi) {
    for (int k = 0; k < n; ++k) secs.push_back(lo + (hi - lo) * (k + 0.5) / n);
  };
  span(n_vasc, 5.0, 29.0);
  span(n_ven, 35.0, 175.0);
  span(n_late, 200.0, 600.0);
  for (auto& s : secs) s = std::round(s * 10.0) / 10.0;
  return secs;
}

}  // namespace

PairedSample synthesize_pair(const SyntheticSceneParams& params, const std::string& patient_id) {
  validate(params);
  Rng rng(params.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int n = params.size;

  // Scene layout: optic disc, low-frequency texture, vessel tree.
  const double disc_x = 0.3 + 0.4 * u01(rng);
  const double disc_y = 0.35 + 0.3 * u01(rng);
  const double disc_r = 0.08;
  std::array<double, 6> tex{};
  for (auto& t : tex) t = 2.0 * std::numbers::pi * u01(rng);

  std::vector<Vessel> vessels;
  const double half_width = std::max(0.014, 1.2 / n);
  for (int k = 0; k < params.vessel_count; ++k) {
    Vessel ves{{}, half_width * (0.8 + 0.4 * u01(rng))};
    double angle = 2.0 * std::numbers::pi * (k + u01(rng)) / std::max(1, params.vessel_count);
    double x = disc_x, y = disc_y;
    constexpr int kSegments = 24;
    constexpr double kStep = 0.04;
    for (int s = 0; s < kSegments; ++s) {
      angle += 0.35 * n01(rng);
      const double nx = x + kStep * std::cos(angle), ny = y + kStep * std::sin(angle);
      ves.segments.push_back({x, y, nx, ny, static_cast<double>(s) / kSegments,
                              static_cast<double>(s + 1) / kSegments});
      x = nx;
      y = ny;
    }
    vessels.push_back(std::move(ves));
  }

  PairedSample out;
  out.patient_id = patient_id;
  out.cf_image = Tensor(3, n, n);
  out.seconds = synthetic_seconds(params.frames);
  for (double s : out.seconds) out.phase_labels.push_back(phase_for_seconds(s));
  out.ffa_frames.assign(static_cast<std::size_t>(params.frames), Tensor(1, n, n));

  for (int py = 0; py < n; ++py) {
    for (int px = 0; px < n; ++px) {
      const double u = (px + 0.5) / n, v = (py + 0.5) / n;
      const double texture = 0.5 + 0.25 * std::sin(7.0 * u + tex[0]) * std::cos(5.0 * v + tex[1]) +
                             0.25 * std::sin(11.0 * (u + v) + tex[2]);
      const double rc = std::hypot(u - 0.5, v - 0.5);
      const double disc_d = std::hypot(u - disc_x, v - disc_y);
      const double disc = std::clamp((disc_r - disc_d) / (0.3 * disc_r) + 0.5, 0.0, 1.0);
      const VesselHit hit = vessel_at(vessels, u, v);

      double lesion = 0.0;      // geometric occupancy (max over lesions)
      double leak_peak = 0.0;   // leak-weighted profile
      for (const auto& l : params.lesion_regions) {
        const double p = lesion_profile(std::hypot(u - l.cx, v - l.cy), l.radius);
        lesion = std::max(lesion, std::min(p, 1.0));
        leak_peak = std::max(leak_peak, p * l.leak_rate);
      }

      // Colour fundus: orange-red background with vignette, yellow disc,
      // dark vessels, pale low-contrast exudate at lesions.
      const double vignette = 1.0 - 0.45 * rc * rc;
      std::array<double, 3> rgb{0.78 * vignette, 0.36 * vignette, 0.18 * vignette};
      for (int ch = 0; ch < 3; ++ch) rgb[ch] *= 0.9 + 0.2 * texture;
      const std::array<double, 3> disc_col{0.97, 0.86, 0.62};
      const std::array<double, 3> vessel_col{0.50, 0.10, 0.07};
      const std::array<double, 3> lesion_col{0.93, 0.80, 0.45};
      for (int ch = 0; ch < 3; ++ch) {
        rgb[ch] += (disc_col[ch] - rgb[ch]) * disc;
        rgb[ch] += (vessel_col[ch] - rgb[ch]) * hit.weight * 0.85;
        rgb[ch] += (lesion_col[ch] - rgb[ch]) * 0.4 * lesion;
        out.cf_image.at(ch, py, px) = std::clamp(rgb[ch], 0.0, 1.0);
      }

      // Fluorescence series: static background and disc, vessels fill as the
      // dye front passes, lesions leak progressively.
      const double arrival = std::min(hit.arc / params.dye_front_speed, 0.8);
      const double vessel_w = hit.weight * (1.0 - lesion);
      for (int t = 0; t < params.frames; ++t) {
        const double tau = params.frames > 1 ? static_cast<double>(t) / (params.frames - 1) : 0.0;
        const double fill = std::clamp((tau - arrival) / 0.2, 0.0, 1.0);
        double value = 0.12 + 0.05 * texture + 0.2 * disc + vessel_w * (0.25 + 0.15 * fill) +
                       kLesionAmplitude * leak_peak * tau;
        out.ffa_frames[static_cast<std::size_t>(t)].at(0, py, px) = value;
      }
    }
  }

  for (auto& f : out.ffa_frames) {
    if (params.noise_level > 0.0)
      for (auto& v : f.data) v += params.noise_level * n01(rng);
    clip01(f);
  }
  if (params.noise_level > 0.0) {
    for (auto& v : out.cf_image.data) v += 0.5 * params.noise_level * n01(rng);
    clip01(out.cf_image);
  }
  return out;
}

SyntheticSceneParams random_scene(std::uint64_t seed, int size, int frames, int lesion_count,
                                  double noise_level) {
  Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SyntheticSceneParams p;
  p.size = size;
  p.frames = frames;
  p.seed = seed;
  p.noise_level = noise_level;
  p.vessel_count = 4 + static_cast<int>(u01(rng) * 5.0);
  p.dye_front_speed = 1.0 + 1.5 * u01(rng);
  for (int k = 0; k < lesion_count; ++k) {
    LesionRegion l;
    l.cx = 0.2 + 0.6 * u01(rng);
    l.cy = 0.2 + 0.6 * u01(rng);
    l.radius = 0.06 + 0.06 * u01(rng);
    l.leak_rate = 0.6 + 0.4 * u01(rng);
    p.lesion_regions.push_back(l);
  }
  return p;
}

}  // namespace f2v::data
