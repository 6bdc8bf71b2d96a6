#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "f2v/tensor.hpp"

namespace f2v::data {

using Rng = std::mt19937_64;

enum class Phase { vascular = 0, venous = 1, late = 2 };
enum class Split { train, val, test };

std::string to_string(Phase p);
std::string to_string(Split s);
Split parse_split(const std::string& s);

/// Wall-clock convention used to label manifest timestamps.
struct PhaseBoundaries {
  double vascular_end_s = 30.0;
  double venous_end_s = 180.0;
};

Phase phase_for_seconds(double seconds, const PhaseBoundaries& b = {});

struct PairedSample {
  Tensor cf_image;                  // 3 x H x W in [0,1]
  std::vector<Tensor> ffa_frames;   // each 1 x H x W in [0,1], temporal order
  std::vector<Phase> phase_labels;  // monotone non-decreasing
  std::vector<double> seconds;      // acquisition time per frame
  std::string patient_id;
};

/// Throws MalformedSampleError when the PairedSample invariants do not hold.
void validate(const PairedSample& s);

struct TrainingSequence {
  Tensor cf_image;
  std::vector<Tensor> frames;
  std::vector<std::size_t> source_indices;  // strictly increasing
};

// ------------------------------------------------------------------ loading

struct SplitAssignment {
  std::vector<std::string> train, val, test;
};

/// Patient-level split: shuffled by seed, round(0.7 n) to train, the rest
/// split evenly between val and test (test takes the odd one out).
SplitAssignment make_patient_split(std::vector<std::string> patient_ids, std::uint64_t seed);

/// Reads root/manifest.json plus the per-patient PNGs. Samples are sorted by
/// patient_id and preprocessed to target_size.
std::vector<PairedSample> load_dataset(const std::filesystem::path& root, Split split,
                                       int target_size = 512,
                                       const PhaseBoundaries& bounds = {});

/// Writes samples in the dataset layout together with a manifest.
void write_dataset(const std::filesystem::path& root, const std::vector<PairedSample>& samples,
                   const SplitAssignment& split);

// --------------------------------------------------------------- sampling

/// Draws per_phase frames from each of the three phases, order preserved.
TrainingSequence sample_training_frames(const PairedSample& sample, Rng& rng, int per_phase = 4);

// ----------------------------------------------------------- augmentation

struct AugmentConfig {
  double crop_prob = 0.5;
  double scale_prob = 0.5;
  double jitter_prob = 0.5;
  double min_crop_fraction = 0.8;  // crop side as a fraction of the image side
  double max_scale_delta = 0.1;    // zoom factor sampled in [1-d, 1+d]
  double jitter_strength = 0.1;    // brightness/contrast/saturation in [1-s, 1+s]
};

/// Source window resampled back to full size. identity == true means the
/// array was passed through untouched.
struct GeometricTransform {
  bool identity = true;
  double x0 = 0, y0 = 0, width = 0, height = 0;
  bool operator==(const GeometricTransform&) const = default;
};

struct ColorJitter {
  double brightness = 1.0, contrast = 1.0, saturation = 1.0;
};

struct AugmentResult {
  TrainingSequence sequence;
  std::vector<GeometricTransform> applied;  // [0] = CF, then one per frame
  ColorJitter jitter;
};

AugmentResult augment(const TrainingSequence& seq, Rng& rng, const AugmentConfig& cfg = {});

/// Center-crop to square, bilinear resize to target_size, clip into [0,1].
Tensor preprocess(const Tensor& image, int target_size = 512);

// --------------------------------------------------------------- synthetic

/// Lesion geometry in normalized image coordinates (x, y, radius in [0,1]
/// relative to the image side).
struct LesionRegion {
  double cx = 0.5, cy = 0.5, radius = 0.08;
  double leak_rate = 1.0;
};

struct SyntheticSceneParams {
  int size = 64;
  int frames = 12;
  int vessel_count = 6;
  std::vector<LesionRegion> lesion_regions;
  double dye_front_speed = 1.5;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
};

void validate(const SyntheticSceneParams& p);

/// Peak fluorescence added by a fully leaking lesion at the last frame.
inline constexpr double kLesionAmplitude = 0.55;

/// Lesion leakage profile (0 outside 1.15 R, 1 inside 0.85 R, center boost).
double lesion_profile(double r, double radius);

PairedSample synthesize_pair(const SyntheticSceneParams& params, const std::string& patient_id = "synthetic");

/// Samples a random scene with lesion_count lesions (seeded).
SyntheticSceneParams random_scene(std::uint64_t seed, int size, int frames, int lesion_count = 1,
                                  double noise_level = 0.0);

}  // namespace f2v::data
