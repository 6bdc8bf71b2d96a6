#pragma once

#include <Eigen/Dense>

#include "f2v/knowledge_mask.hpp"
#include "f2v/models.hpp"

namespace f2v::losses {

using models::RowMatrix;

struct LossWeights {
  double lambda_up = 1.0;
  double lambda_sp = 1.0;
  double lambda_att = 4.0;
  double lambda_gan = 2.0;
};

void validate(const LossWeights& w);

struct LossBreakdown {
  double up = 0, sp = 0, att = 0, gan_g = 0, gan_d = 0, total = 0;
};

class TrainingDivergenceError : public Error {
 public:
  TrainingDivergenceError(const std::string& what, LossBreakdown b, long long step = -1)
      : Error(what), breakdown_(b), step_(step) {}
  const LossBreakdown& breakdown() const noexcept { return breakdown_; }
  long long step() const noexcept { return step_; }

 private:
  LossBreakdown breakdown_;
  long long step_;
};

inline constexpr double kDefaultTemperature = 0.07;
inline constexpr double kLogClamp = 1e-7;

// ------------------------------------------------------------- attention

struct AttentionLoss {
  double value = 0.0;
  Tensor grad_activation;  // same shape as the activation passed in
};

/// Mean over pixels of (ReLU(mean_c(f) * m) - m)^2.
AttentionLoss attention_loss(const Tensor& activation, const KnowledgeMask& mask);

// -------------------------------------------------------------- InfoNCE

struct InfoNceLoss {
  double value = 0.0;
  Eigen::VectorXd grad_anchor, grad_positive;
  RowMatrix grad_negatives;
};

/// -log(exp(s+) / (exp(s+) + sum_j exp(s-_j))) with s = dot / tau.
InfoNceLoss info_nce(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                     const RowMatrix& negatives, double tau = kDefaultTemperature);

struct PatchNceLoss {
  double value = 0.0;
  std::vector<RowMatrix> grad_anchor;  // per level, N x D (targets are detached)
};

/// Weighted mean InfoNCE over sampled locations. Only locations with a
/// positive mask weight take part: at each level the anchor at location i
/// takes target i as positive and the other active targets as negatives.
/// Terms are weighted by the anchor set's mask weights and renormalized by the
/// total weight; levels with fewer than two active locations are skipped.
PatchNceLoss patch_nce(const models::PatchEmbeddingSet& anchors,
                       const models::PatchEmbeddingSet& targets, double tau = kDefaultTemperature);

/// Generated frame vs colour-fundus patches.
inline PatchNceLoss masked_up_loss(const models::PatchEmbeddingSet& gen,
                                   const models::PatchEmbeddingSet& cf,
                                   double tau = kDefaultTemperature) {
  return patch_nce(gen, cf, tau);
}

/// Generated frame vs ground-truth frame patches.
inline PatchNceLoss masked_sp_loss(const models::PatchEmbeddingSet& gen,
                                   const models::PatchEmbeddingSet& gt,
                                   double tau = kDefaultTemperature) {
  return patch_nce(gen, gt, tau);
}

// ------------------------------------------------------------ adversarial

struct DiscriminatorLoss {
  double d_term = 0.0;
  double g_term = 0.0;
  Tensor d_grad_real, d_grad_fake;  // d d_term / d logits
  Tensor g_grad_fake;               // d g_term / d fake logits
};

/// Sigmoid cross-entropy over patch logits with logs clamped at 1e-7.
/// d_term = -mean log s(real) - mean log(1 - s(fake)),
/// g_term = -mean log s(fake).
DiscriminatorLoss discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits);

enum class GanPass {
  evaluate,       // values only
  discriminator,  // accumulate discriminator parameter gradients from d_term
  generator,      // gradient of g_term w.r.t. the fake frame; D untouched
};

struct GanLoss {
  double d_term = 0.0;
  double g_term = 0.0;
  Tensor grad_fake;  // only for GanPass::generator, shape of the fake frame
};

/// One discriminator scale: unmasked term plus the term on mask-multiplied
/// inputs. cf, real and fake must already be at scale k; mask (binary, same
/// resolution) may be null, in which case only the unmasked term is used.
GanLoss gan_loss_knowledge_aware(models::MultiScaleDiscriminator& disc, int k, const Tensor& cf,
                                 const Tensor& real, const Tensor& fake, const KnowledgeMask* mask,
                                 GanPass pass);

/// Sums the knowledge-aware loss over k = 1..3. Inputs are at full scale;
/// the function builds the pyramid itself (2x2 average pooling) and maps the
/// fake-frame gradient back to full resolution. The mask is area-pooled per
/// scale and re-binarized at 0.5.
GanLoss gan_loss_multiscale(models::MultiScaleDiscriminator& disc, const Tensor& cf,
                            const Tensor& real, const Tensor& fake, const KnowledgeMask* mask,
                            GanPass pass);

// ------------------------------------------------------------------ total

struct LossParts {
  double up = 0, sp = 0, att = 0, gan_g = 0, gan_d = 0;
};

/// Weighted sum of the generator-side parts. Throws TrainingDivergenceError
/// on any non-finite part.
LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace f2v::losses
