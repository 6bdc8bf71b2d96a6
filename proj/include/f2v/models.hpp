#pragma once

#include <array>
#include <optional>
#include <vector>

#include "f2v/knowledge_mask.hpp"
#include "f2v/nn.hpp"

namespace f2v::models {

using nn::Rng;
using nn::RowMatrix;

struct ModelConfig {
  int image_size = 512;
  int ngf = 16;          // generator base width
  int n_resblocks = 6;
  int ndf = 16;          // discriminator base width
  int head_width = 256;  // PatchNCE projection head width
  double init_std = 0.02;

  static constexpr int kStride = 8;  // three stride-2 encoder stages
  static constexpr int kScales = 3;
  static constexpr int kInputChannels = 6;  // CF (3) + three previous frames
  static constexpr int kDiscInputChannels = 4;  // CF (3) + candidate frame
};

void validate(const ModelConfig& cfg);

/// Autoregressive conditioning: CF image plus the last three frames.
struct GenerationState {
  Tensor cf_image;                   // 3 x H x W
  std::array<Tensor, 3> prev_frames;  // oldest first, each 1 x H x W
  int step = 0;
};

/// Builds a state and checks shapes and the stride-8 divisibility rule.
GenerationState make_generation_state(Tensor cf_image, std::array<Tensor, 3> prev_frames, int step);

struct GeneratorOutput {
  Tensor frame;            // 1 x H x W, tanh range [-1, 1]
  Tensor last_activation;  // ngf x H x W, last decoder convolution output
};

/// Maps the tanh-range frame to [0,1].
Tensor to_unit_range(const Tensor& tanh_frame);

/// pix2pixHD-style global generator: 7x7 stem, three stride-2 stages,
/// residual blocks, three upsampling stages, 3x3 tail conv (the attention
/// activation) and a 7x7 single-channel output head with tanh.
class Generator {
 public:
  Generator(const ModelConfig& cfg, Rng& rng);

  struct Tape {
    nn::Cache cache;
  };

  GeneratorOutput forward(const GenerationState& state, Tape* tape = nullptr) const;
  /// Gradients w.r.t. the tanh-range frame and the last activation (either
  /// may be empty). Returns the gradient of the 6-channel network input.
  Tensor backward(const Tape& tape, const Tensor& grad_frame, const Tensor& grad_activation,
                  bool accumulate);

  /// Encoder features at strides 1, 2 and 4 for a 6-channel input.
  std::vector<Tensor> encode(const Tensor& input, nn::Cache& cache) const;
  Tensor encode_backward(const nn::Cache& cache, const std::vector<Tensor>& level_grads,
                         bool accumulate);
  /// Lifts a 1- or 3-channel image to the 6-channel generator input layout.
  static Tensor nce_input(const Tensor& image);

  std::vector<int> level_channels() const;
  static constexpr std::array<int, 3> kLevelStrides{1, 2, 4};

  nn::ParamRefs params();
  /// Zeroes the output projection (used by tests of the forced-output case).
  void zero_output_layer();
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  nn::Sequential net_;
  std::vector<int> level_taps_;
  int activation_tap_ = 0;
  int output_conv_ = 0;
};

/// Geometry of one convolution for receptive-field arithmetic.
struct ConvGeometry {
  int kernel, stride, pad;
};

/// Patch discriminator: four 4x4 stride-2 convolutions with LeakyReLU and a
/// 4x4 stride-1 single-channel logit head. No normalization layers, so each
/// logit depends only on its receptive field.
class PatchDiscriminator {
 public:
  PatchDiscriminator(int in_channels, int ndf, Rng& rng, double init_std = 0.02);
  Tensor forward(const Tensor& pair, nn::Cache& cache) const;
  Tensor backward(const nn::Cache& cache, const Tensor& grad_logits, bool accumulate);
  nn::ParamRefs params();
  void set_prefix(const std::string& prefix) { net_.set_prefix(prefix); }

  static const std::vector<ConvGeometry>& geometry();
  static int output_size(int input_size);
  /// Inclusive input-pixel interval [lo, hi] that output index o can see.
  static std::pair<int, int> receptive_interval(int o);

 private:
  nn::Sequential net_;
};

/// Three discriminators at scales 1, 1/2, 1/4 of the full image size.
class MultiScaleDiscriminator {
 public:
  MultiScaleDiscriminator(const ModelConfig& cfg, Rng& rng);
  /// k in {1,2,3}; pair must already be at resolution image_size / 2^(k-1).
  Tensor forward(int k, const Tensor& pair, nn::Cache& cache) const;
  Tensor backward(int k, const nn::Cache& cache, const Tensor& grad_logits, bool accumulate);
  int scale_size(int k) const;
  nn::ParamRefs params();
  PatchDiscriminator& at(int k) { return discs_.at(static_cast<std::size_t>(k - 1)); }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  std::vector<PatchDiscriminator> discs_;
};

/// Unit-normalized patch embeddings sampled from several feature levels.
struct PatchEmbeddingSet {
  std::vector<RowMatrix> embeddings;          // per level: N x D, rows unit norm
  std::vector<std::vector<int>> locations;    // per level: flat y * w + x indices
  std::vector<std::vector<double>> weights;   // per level: mask weight per location
};

/// Per-level two-layer MLP heads (Linear, ReLU, Linear) followed by L2
/// normalization.
class PatchProjector {
 public:
  PatchProjector(const std::vector<int>& level_channels, int width, Rng& rng, double init_std);

  struct Tape {
    std::vector<RowMatrix> gathered, hidden_pre, projected;
    std::vector<std::array<int, 3>> shapes;  // c, h, w per level
    std::vector<std::vector<int>> locations;
  };

  /// Chooses n_patches locations per level. With a mask, locations are
  /// restricted to cells whose level-downsampled weight exceeds 0.5, unless
  /// fewer than n_patches such cells exist.
  static void sample_locations(const std::vector<Tensor>& features, int n_patches,
                               const KnowledgeMask* mask, Rng& rng,
                               std::vector<std::vector<int>>& locations,
                               std::vector<std::vector<double>>& weights);

  PatchEmbeddingSet embed_at(const std::vector<Tensor>& features,
                             const std::vector<std::vector<int>>& locations,
                             const std::vector<std::vector<double>>& weights,
                             Tape* tape = nullptr) const;
  std::vector<Tensor> backward(const Tape& tape, const std::vector<RowMatrix>& grad_embeddings,
                               bool accumulate);
  nn::ParamRefs params();
  int width() const { return width_; }

 private:
  int width_;
  std::vector<nn::Linear> first_, second_;
};

/// Samples locations, projects and normalizes: the full patch-embedding step.
PatchEmbeddingSet embed_patches(const PatchProjector& head, const std::vector<Tensor>& features,
                                int n_patches, const KnowledgeMask* mask, Rng& rng,
                                PatchProjector::Tape* tape = nullptr);

}  // namespace f2v::models
