#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

#include <nlohmann/json.hpp>

#include "f2v/checkpoint.hpp"
#include "f2v/data_pipeline.hpp"
#include "f2v/losses.hpp"
#include "f2v/models.hpp"

namespace f2v::train {

enum class NceMaskMode {
  sampling,  // restrict patch locations to the mask, weight by mask value
  pixel,     // multiply images by the mask before encoding
};

enum class LrCadence { iterations, epochs };

struct TrainConfig {
  int epochs = 50;
  int batch_size = 1;
  double lr = 2e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int lr_step_iters = 50;
  LrCadence lr_step_unit = LrCadence::iterations;  // what lr_step_iters counts
  double lr_decay = 0.9;
  double teacher_forcing_prob = 0.5;
  losses::LossWeights weights;
  int image_size = 512;
  int frames_per_sequence = 12;
  std::uint64_t seed = 0;

  models::ModelConfig model;  // image_size is kept in sync with the field above
  int n_patches = 256;
  double nce_temperature = losses::kDefaultTemperature;
  NceMaskMode nce_mask_mode = NceMaskMode::sampling;
  double mask_threshold = kDefaultMaskThreshold;
  bool use_knowledge_mask = true;
  double grad_clip = 10.0;
  bool augment = true;
  data::AugmentConfig augment_config;
  int sample_every_steps = 100;  // 0 disables sample grids
};

void validate(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
/// Overlays the keys present in j onto base. Unknown keys raise ConfigError.
TrainConfig merge_json(const TrainConfig& base, const nlohmann::json& j);

/// lr * decay^floor(n / lr_step_iters), n = step or completed epochs.
double scheduled_lr(const TrainConfig& cfg, long long step, int epoch = 0);

struct TrainState {
  long long step = 0;
  int epoch = 0;  // completed epochs
  double current_lr = 0.0;
  nn::Rng rng;
};

using FrameWindow = std::array<Tensor, 3>;

/// Returns gen_prev with probability p, else gt_prev (whole window).
FrameWindow scheduled_input_select(const FrameWindow& gt_prev, const FrameWindow& gen_prev, double p,
                                   nn::Rng& rng);

/// Window of the three frames preceding index t; indices before 0 are
/// filled with the CF luminance (the bootstrap rule).
FrameWindow preceding_window(const std::vector<Tensor>& frames, std::size_t t, const Tensor& cf_luma);

struct StepResult {
  losses::LossBreakdown breakdown;
  KnowledgeMask mask;
  std::vector<Tensor> generated;  // unit-range frames produced during the step
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// One discriminator update then one generator update on the sequence.
  StepResult train_step(const data::TrainingSequence& seq);
  /// Losses on the sequence without updating anything (teacher forcing as
  /// configured; uses and advances the trainer's RNG).
  losses::LossBreakdown evaluate_losses(const data::TrainingSequence& seq);

  const TrainConfig& config() const { return cfg_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }

  models::Generator& generator() { return generator_; }
  models::MultiScaleDiscriminator& discriminator() { return discriminator_; }
  models::PatchProjector& projector() { return projector_; }
  nn::ParamRefs generator_side_params();
  nn::ParamRefs discriminator_params() { return discriminator_.params(); }

  Checkpoint to_checkpoint() const;
  void save(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer moments, counters and RNG state.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& path);

 private:
  struct Accumulated;
  StepResult run_sequence(const data::TrainingSequence& seq, bool update);

  TrainConfig cfg_;
  models::Generator generator_;
  models::MultiScaleDiscriminator discriminator_;
  models::PatchProjector projector_;
  nn::Adam g_opt_;
  nn::Adam d_opt_;
  TrainState state_;
};

struct FitOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  /// Stops once the global step counter reaches this value (0 = no limit).
  long long max_steps = 0;
  /// Called after every step (progress reporting); may be empty.
  std::function<void(const TrainState&, const losses::LossBreakdown&)> on_step;
};

/// Runs epochs x samples steps. Writes checkpoint_epoch_NNN.f2v after every
/// epoch, checkpoint_final.f2v at the end, and losses.csv. Returns the final
/// checkpoint path.
std::filesystem::path fit(const std::vector<data::PairedSample>& dataset, const TrainConfig& cfg,
                          const FitOptions& opts);

/// Loads only the generator from a checkpoint (inference).
struct LoadedGenerator {
  models::Generator generator;
  TrainConfig config;
  std::string sha256;
};
LoadedGenerator load_generator(const std::filesystem::path& path);

}  // namespace f2v::train
