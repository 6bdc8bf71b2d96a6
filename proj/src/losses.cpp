#include "f2v/losses.hpp"

#include <cmath>

namespace f2v::losses {

void validate(const LossWeights& w) {
  if (!(w.lambda_up >= 0 && w.lambda_sp >= 0 && w.lambda_att >= 0 && w.lambda_gan >= 0))
    throw ConfigError("loss weights must be non-negative");
}

// ------------------------------------------------------------- attention

AttentionLoss attention_loss(const Tensor& activation, const KnowledgeMask& mask) {
  require(activation.h == mask.height() && activation.w == mask.width() && activation.c >= 1,
          "attention_loss: activation " + activation.shape_str() + " does not match mask " +
              mask.values.shape_str());
  const std::size_t n = activation.plane();
  const double inv_c = 1.0 / activation.c;
  AttentionLoss out;
  out.grad_activation = Tensor(activation.c, activation.h, activation.w);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double a = 0.0;
    for (int ch = 0; ch < activation.c; ++ch) a += activation.data[ch * n + i];
    a *= inv_c;
    const double m = mask.values.data[i];
    const double pre = a * m;
    const double att = pre > 0.0 ? pre : 0.0;
    const double diff = att - m;
    sum += diff * diff;
    if (pre > 0.0) {
      const double g = 2.0 * diff / static_cast<double>(n) * m * inv_c;
      for (int ch = 0; ch < activation.c; ++ch) out.grad_activation.data[ch * n + i] = g;
    }
  }
  out.value = sum / static_cast<double>(n);
  return out;
}

// -------------------------------------------------------------- InfoNCE

InfoNceLoss info_nce(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                     const RowMatrix& negatives, double tau) {
  require(tau > 0.0, "info_nce: temperature must be > 0");
  require(negatives.rows() >= 1, "info_nce: at least one negative required");
  require(anchor.size() == positive.size() && negatives.cols() == anchor.size(),
          "info_nce: embedding dimensions differ");
  require(anchor.norm() > 0.0 && positive.norm() > 0.0, "info_nce: zero-norm embedding");
  for (Eigen::Index j = 0; j < negatives.rows(); ++j)
    require(negatives.row(j).norm() > 0.0, "info_nce: zero-norm negative embedding");

  const Eigen::Index n = negatives.rows();
  Eigen::VectorXd logits(n + 1);
  logits(0) = anchor.dot(positive) / tau;
  logits.tail(n) = negatives * anchor / tau;
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp();
  const double z = e.sum();
  Eigen::VectorXd prob = e / z;

  InfoNceLoss out;
  out.value = -logits(0) + mx + std::log(z);
  out.grad_anchor = ((prob(0) - 1.0) * positive + negatives.transpose() * prob.tail(n)) / tau;
  out.grad_positive = (prob(0) - 1.0) * anchor / tau;
  out.grad_negatives = prob.tail(n) * anchor.transpose() / tau;
  return out;
}

PatchNceLoss patch_nce(const models::PatchEmbeddingSet& anchors,
                       const models::PatchEmbeddingSet& targets, double tau) {
  require(tau > 0.0, "patch_nce: temperature must be > 0");
  require(anchors.embeddings.size() == targets.embeddings.size() &&
              anchors.weights.size() == anchors.embeddings.size(),
          "patch_nce: level count mismatch");
  PatchNceLoss out;
  std::vector<std::vector<Eigen::Index>> active(anchors.embeddings.size());
  double total_weight = 0.0;
  for (std::size_t l = 0; l < anchors.embeddings.size(); ++l) {
    const RowMatrix& a = anchors.embeddings[l];
    const RowMatrix& t = targets.embeddings[l];
    require(a.rows() == t.rows() && a.cols() == t.cols(),
            "patch_nce: anchor/target shapes differ at level " + std::to_string(l));
    require(static_cast<Eigen::Index>(anchors.weights[l].size()) == a.rows(),
            "patch_nce: weight count mismatch");
    out.grad_anchor.push_back(RowMatrix::Zero(a.rows(), a.cols()));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (anchors.weights[l][static_cast<std::size_t>(i)] > 0.0) active[l].push_back(i);
    if (active[l].size() < 2) {
      active[l].clear();  // no negatives available at this level
      continue;
    }
    for (auto i : active[l]) total_weight += anchors.weights[l][static_cast<std::size_t>(i)];
  }
  if (!(total_weight > 0.0)) return out;

  // Zero-weight locations take part neither as anchors nor as negatives.
  double sum = 0.0;
  for (std::size_t l = 0; l < anchors.embeddings.size(); ++l) {
    const auto& idx = active[l];
    if (idx.empty()) continue;
    const auto n = static_cast<Eigen::Index>(idx.size());
    RowMatrix a(n, anchors.embeddings[l].cols()), t(n, targets.embeddings[l].cols());
    for (Eigen::Index r = 0; r < n; ++r) {
      a.row(r) = anchors.embeddings[l].row(idx[static_cast<std::size_t>(r)]);
      t.row(r) = targets.embeddings[l].row(idx[static_cast<std::size_t>(r)]);
    }
    RowMatrix logits = a * t.transpose() / tau;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double w = anchors.weights[l][static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
      const double mx = logits.row(r).maxCoeff();
      Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp();
      const double z = e.sum();
      sum += w * (-logits(r, r) + mx + std::log(z));
      Eigen::RowVectorXd p = e / z;
      p(r) -= 1.0;
      out.grad_anchor[l].row(idx[static_cast<std::size_t>(r)]) = (w / total_weight / tau) * (p * t);
    }
  }
  out.value = sum / total_weight;
  return out;
}

// ------------------------------------------------------------ adversarial

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

const double kLogFloor = std::log(kLogClamp);

// log(max(sigmoid(x), 1e-7)) and its derivative.
std::pair<double, double> clamped_log_sigmoid(double x) {
  const double v = -softplus(-x);
  if (v <= kLogFloor) return {kLogFloor, 0.0};
  return {v, sigmoid(-x)};
}

void require_finite(const Tensor& t, const char* what) {
  if (!all_finite(t)) throw ContractError(std::string("discriminator_loss: non-finite ") + what);
}

Tensor masked(const Tensor& t, const KnowledgeMask& m) {
  Tensor out = t;
  const std::size_t n = t.plane();
  for (int ch = 0; ch < t.c; ++ch)
    for (std::size_t i = 0; i < n; ++i) out.data[ch * n + i] *= m.values.data[i];
  return out;
}

}  // namespace

DiscriminatorLoss discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits) {
  require_finite(real_logits, "real logits");
  require_finite(fake_logits, "fake logits");
  require(!real_logits.empty() && !fake_logits.empty(), "discriminator_loss: empty logits");
  DiscriminatorLoss out;
  out.d_grad_real = Tensor(real_logits.c, real_logits.h, real_logits.w);
  out.d_grad_fake = Tensor(fake_logits.c, fake_logits.h, fake_logits.w);
  out.g_grad_fake = Tensor(fake_logits.c, fake_logits.h, fake_logits.w);
  const double nr = static_cast<double>(real_logits.size());
  const double nf = static_cast<double>(fake_logits.size());

  double real_sum = 0.0;
  for (std::size_t i = 0; i < real_logits.size(); ++i) {
    const auto [v, dv] = clamped_log_sigmoid(real_logits.data[i]);
    real_sum += v;
    out.d_grad_real.data[i] = -dv / nr;
  }
  double fake_neg_sum = 0.0, fake_pos_sum = 0.0;
  for (std::size_t i = 0; i < fake_logits.size(); ++i) {
    const double x = fake_logits.data[i];
    // log(1 - sigmoid(x)) = log sigmoid(-x)
    const auto [vn, dvn] = clamped_log_sigmoid(-x);
    fake_neg_sum += vn;
    out.d_grad_fake.data[i] = dvn / nf;
    const auto [vp, dvp] = clamped_log_sigmoid(x);
    fake_pos_sum += vp;
    out.g_grad_fake.data[i] = -dvp / nf;
  }
  out.d_term = -real_sum / nr - fake_neg_sum / nf;
  out.g_term = -fake_pos_sum / nf;
  return out;
}

namespace {

struct TermResult {
  double d_term = 0.0, g_term = 0.0;
  Tensor grad_fake;
};

TermResult single_term(models::MultiScaleDiscriminator& disc, int k, const Tensor& cf,
                       const Tensor& real, const Tensor& fake, GanPass pass) {
  TermResult out;
  const Tensor fake_pair = concat_channels(cf, fake);
  nn::Cache fake_cache;
  const Tensor fake_logits = disc.forward(k, fake_pair, fake_cache);
  if (pass == GanPass::generator) {
    require_finite(fake_logits, "fake logits");
    DiscriminatorLoss dl = discriminator_loss(fake_logits, fake_logits);
    out.g_term = dl.g_term;
    Tensor gpair = disc.backward(k, fake_cache, dl.g_grad_fake, false);
    out.grad_fake = slice_channels(gpair, cf.c, 1);
    return out;
  }
  nn::Cache real_cache;
  const Tensor real_logits = disc.forward(k, concat_channels(cf, real), real_cache);
  DiscriminatorLoss dl = discriminator_loss(real_logits, fake_logits);
  out.d_term = dl.d_term;
  out.g_term = dl.g_term;
  if (pass == GanPass::discriminator) {
    disc.backward(k, real_cache, dl.d_grad_real, true);
    disc.backward(k, fake_cache, dl.d_grad_fake, true);
  }
  return out;
}

}  // namespace

GanLoss gan_loss_knowledge_aware(models::MultiScaleDiscriminator& disc, int k, const Tensor& cf,
                                 const Tensor& real, const Tensor& fake, const KnowledgeMask* mask,
                                 GanPass pass) {
  require(real.same_shape(fake) && real.c == 1 && cf.h == real.h && cf.w == real.w,
          "gan_loss_knowledge_aware: input shapes differ");
  if (mask)
    require(mask->height() == real.h && mask->width() == real.w,
            "gan_loss_knowledge_aware: mask resolution " + mask->values.shape_str() +
                " does not match scale " + real.shape_str());
  GanLoss out;
  TermResult plain = single_term(disc, k, cf, real, fake, pass);
  out.d_term = plain.d_term;
  out.g_term = plain.g_term;
  if (pass == GanPass::generator) out.grad_fake = plain.grad_fake;
  if (mask) {
    TermResult m = single_term(disc, k, masked(cf, *mask), masked(real, *mask), masked(fake, *mask), pass);
    out.d_term += m.d_term;
    out.g_term += m.g_term;
    if (pass == GanPass::generator) {
      Tensor g = masked(m.grad_fake, *mask);
      for (std::size_t i = 0; i < g.size(); ++i) out.grad_fake.data[i] += g.data[i];
    }
  }
  return out;
}

GanLoss gan_loss_multiscale(models::MultiScaleDiscriminator& disc, const Tensor& cf,
                            const Tensor& real, const Tensor& fake, const KnowledgeMask* mask,
                            GanPass pass) {
  GanLoss out;
  if (pass == GanPass::generator) out.grad_fake = Tensor(fake.c, fake.h, fake.w);
  Tensor cf_k = cf, real_k = real, fake_k = fake;
  std::vector<std::pair<int, int>> sizes;  // input size before each pooling
  for (int k = 1; k <= models::ModelConfig::kScales; ++k) {
    if (k > 1) {
      sizes.emplace_back(fake_k.h, fake_k.w);
      cf_k = avg_pool2(cf_k);
      real_k = avg_pool2(real_k);
      fake_k = avg_pool2(fake_k);
    }
    std::optional<KnowledgeMask> mask_k;
    if (mask) mask_k = binarize(downsample_mask(*mask, 1 << (k - 1)), 0.5);
    GanLoss term = gan_loss_knowledge_aware(disc, k, cf_k, real_k, fake_k, mask_k ? &*mask_k : nullptr, pass);
    out.d_term += term.d_term;
    out.g_term += term.g_term;
    if (pass == GanPass::generator) {
      Tensor g = term.grad_fake;
      for (auto it = sizes.rbegin(); it != sizes.rend(); ++it) g = avg_pool2_backward(g, it->first, it->second);
      for (std::size_t i = 0; i < g.size(); ++i) out.grad_fake.data[i] += g.data[i];
    }
  }
  return out;
}

// ------------------------------------------------------------------ total

LossBreakdown total_loss(const LossParts& p, const LossWeights& w) {
  LossBreakdown b{p.up, p.sp, p.att, p.gan_g, p.gan_d, 0.0};
  b.total = w.lambda_up * p.up + w.lambda_sp * p.sp + w.lambda_att * p.att + w.lambda_gan * p.gan_g;
  for (double v : {p.up, p.sp, p.att, p.gan_g, p.gan_d})
    if (!std::isfinite(v)) throw TrainingDivergenceError("non-finite loss component", b);
  if (!std::isfinite(b.total)) throw TrainingDivergenceError("non-finite total loss", b);
  return b;
}

}  // namespace f2v::losses
