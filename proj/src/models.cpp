#include "f2v/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace f2v::models {

void validate(const ModelConfig& cfg) {
  if (cfg.image_size <= 0 || cfg.image_size % ModelConfig::kStride != 0)
    throw ContractError("image_size " + std::to_string(cfg.image_size) +
                        " must be a positive multiple of " + std::to_string(ModelConfig::kStride));
  if (cfg.image_size / 4 < 2)
    throw ContractError("image_size too small for three discriminator scales");
  if (cfg.ngf < 1 || cfg.ndf < 1 || cfg.head_width < 1 || cfg.n_resblocks < 0)
    throw ContractError("model widths must be positive and n_resblocks >= 0");
}

GenerationState make_generation_state(Tensor cf_image, std::array<Tensor, 3> prev_frames, int step) {
  require(cf_image.c == 3, "GenerationState: CF image must have 3 channels, got " + cf_image.shape_str());
  require(step >= 0, "GenerationState: step must be >= 0");
  for (const auto& f : prev_frames)
    require(f.c == 1 && f.h == cf_image.h && f.w == cf_image.w,
            "GenerationState: previous frame " + f.shape_str() + " does not match CF " +
                cf_image.shape_str());
  require(cf_image.h % ModelConfig::kStride == 0 && cf_image.w % ModelConfig::kStride == 0,
          "GenerationState: spatial size " + cf_image.shape_str() + " not divisible by " +
              std::to_string(ModelConfig::kStride));
  return GenerationState{std::move(cf_image), std::move(prev_frames), step};
}

Tensor to_unit_range(const Tensor& tanh_frame) {
  Tensor out = tanh_frame;
  for (auto& v : out.data) v = 0.5 * (v + 1.0);
  return out;
}

// ------------------------------------------------------------- Generator

Generator::Generator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate(cfg);
  const int ngf = cfg.ngf;
  auto conv_block = [&](int in, int out, int k, int stride, int pad) {
    net_.add<nn::Conv2d>(in, out, k, stride, pad);
    net_.add<nn::InstanceNorm>();
    net_.add<nn::ReLU>();
  };
  conv_block(ModelConfig::kInputChannels, ngf, 7, 1, 3);
  level_taps_.push_back(static_cast<int>(net_.size()) - 1);
  int ch = ngf;
  for (int d = 0; d < 3; ++d) {
    conv_block(ch, ch * 2, 3, 2, 1);
    ch *= 2;
    if (d < 2) level_taps_.push_back(static_cast<int>(net_.size()) - 1);
  }
  for (int r = 0; r < cfg.n_resblocks; ++r) net_.add<nn::ResBlock>(ch);
  for (int u = 0; u < 3; ++u) {
    net_.add<nn::Upsample2>();
    conv_block(ch, ch / 2, 3, 1, 1);
    ch /= 2;
  }
  net_.add<nn::Conv2d>(ch, ch, 3, 1, 1);
  activation_tap_ = static_cast<int>(net_.size()) - 1;
  net_.add<nn::InstanceNorm>();
  net_.add<nn::ReLU>();
  net_.add<nn::Conv2d>(ch, 1, 7, 1, 3);
  output_conv_ = static_cast<int>(net_.size()) - 1;
  net_.add<nn::Tanh>();
  net_.set_prefix("generator.");

  for (std::size_t i = 0; i < net_.size(); ++i) {
    if (auto* conv = dynamic_cast<nn::Conv2d*>(&net_.at(i))) conv->init_normal(rng, cfg.init_std);
    if (auto* rb = dynamic_cast<nn::ResBlock*>(&net_.at(i)))
      for (std::size_t j = 0; j < rb->body().size(); ++j)
        if (auto* conv = dynamic_cast<nn::Conv2d*>(&rb->body().at(j))) conv->init_normal(rng, cfg.init_std);
  }
}

GeneratorOutput Generator::forward(const GenerationState& state, Tape* tape) const {
  for (const auto& f : state.prev_frames)
    require(f.c == 1 && f.h == state.cf_image.h && f.w == state.cf_image.w,
            "Generator: previous-frame shape mismatch");
  require(state.cf_image.c == 3, "Generator: CF image must have 3 channels");
  require(state.cf_image.h % ModelConfig::kStride == 0 && state.cf_image.w % ModelConfig::kStride == 0,
          "Generator: spatial size " + state.cf_image.shape_str() + " not divisible by 8");
  Tensor input = state.cf_image;
  for (const auto& f : state.prev_frames) input = concat_channels(input, f);

  nn::Cache local;
  nn::Cache& cache = tape ? tape->cache : local;
  std::vector<Tensor> taps;
  GeneratorOutput out;
  out.frame = net_.forward_tapped(input, cache, static_cast<int>(net_.size()), {activation_tap_}, taps);
  out.last_activation = std::move(taps[0]);
  return out;
}

Tensor Generator::backward(const Tape& tape, const Tensor& grad_frame, const Tensor& grad_activation,
                           bool accumulate) {
  return net_.backward_tapped(tape.cache, grad_frame, {activation_tap_}, {grad_activation}, accumulate);
}

std::vector<Tensor> Generator::encode(const Tensor& input, nn::Cache& cache) const {
  require(input.c == ModelConfig::kInputChannels, "Generator::encode: expected 6-channel input");
  std::vector<Tensor> levels;
  net_.forward_tapped(input, cache, level_taps_.back() + 1, level_taps_, levels);
  return levels;
}

Tensor Generator::encode_backward(const nn::Cache& cache, const std::vector<Tensor>& level_grads,
                                  bool accumulate) {
  return net_.backward_tapped(cache, Tensor{}, level_taps_, level_grads, accumulate);
}

Tensor Generator::nce_input(const Tensor& image) {
  if (image.c == 1) return replicate_channels(image, ModelConfig::kInputChannels);
  require(image.c == 3, "nce_input: expected 1 or 3 channels");
  return concat_channels(image, replicate_channels(luminance(image), 3));
}

std::vector<int> Generator::level_channels() const { return {cfg_.ngf, cfg_.ngf * 2, cfg_.ngf * 4}; }

nn::ParamRefs Generator::params() {
  nn::ParamRefs out;
  net_.collect_params(out);
  return out;
}

void Generator::zero_output_layer() {
  dynamic_cast<nn::Conv2d&>(net_.at(static_cast<std::size_t>(output_conv_))).zero_init();
}

// ----------------------------------------------------- PatchDiscriminator

const std::vector<ConvGeometry>& PatchDiscriminator::geometry() {
  static const std::vector<ConvGeometry> g{{4, 2, 2}, {4, 2, 2}, {4, 2, 2}, {4, 2, 2}, {4, 1, 1}};
  return g;
}

int PatchDiscriminator::output_size(int input_size) {
  int s = input_size;
  for (const auto& g : geometry()) {
    s = (s + 2 * g.pad - g.kernel) / g.stride + 1;
    if (s <= 0) return 0;
  }
  return s;
}

std::pair<int, int> PatchDiscriminator::receptive_interval(int o) {
  int lo = o, hi = o;
  const auto& geo = geometry();
  for (auto it = geo.rbegin(); it != geo.rend(); ++it) {
    lo = lo * it->stride - it->pad;
    hi = hi * it->stride - it->pad + it->kernel - 1;
  }
  return {lo, hi};
}

PatchDiscriminator::PatchDiscriminator(int in_channels, int ndf, Rng& rng, double init_std) {
  const auto& geo = geometry();
  int ch = in_channels;
  for (std::size_t i = 0; i + 1 < geo.size(); ++i) {
    const int out = ndf << i;
    net_.add<nn::Conv2d>(ch, out, geo[i].kernel, geo[i].stride, geo[i].pad).init_normal(rng, init_std);
    net_.add<nn::LeakyReLU>(0.2);
    ch = out;
  }
  net_.add<nn::Conv2d>(ch, 1, geo.back().kernel, geo.back().stride, geo.back().pad).init_normal(rng, init_std);
}

Tensor PatchDiscriminator::forward(const Tensor& pair, nn::Cache& cache) const {
  require(output_size(pair.h) > 0 && output_size(pair.w) > 0,
          "PatchDiscriminator: input " + pair.shape_str() + " too small");
  return net_.forward(pair, cache);
}

Tensor PatchDiscriminator::backward(const nn::Cache& cache, const Tensor& grad_logits, bool accumulate) {
  return net_.backward(cache, grad_logits, accumulate);
}

nn::ParamRefs PatchDiscriminator::params() {
  nn::ParamRefs out;
  net_.collect_params(out);
  return out;
}

MultiScaleDiscriminator::MultiScaleDiscriminator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate(cfg);
  for (int k = 1; k <= ModelConfig::kScales; ++k) {
    discs_.emplace_back(ModelConfig::kDiscInputChannels, cfg.ndf, rng, cfg.init_std);
    discs_.back().set_prefix("discriminator." + std::to_string(k) + ".");
  }
}

int MultiScaleDiscriminator::scale_size(int k) const {
  require(k >= 1 && k <= ModelConfig::kScales, "discriminator index must be 1, 2 or 3");
  return cfg_.image_size >> (k - 1);
}

Tensor MultiScaleDiscriminator::forward(int k, const Tensor& pair, nn::Cache& cache) const {
  const int s = scale_size(k);
  require(pair.c == ModelConfig::kDiscInputChannels && pair.h == s && pair.w == s,
          "discriminator " + std::to_string(k) + " expects (4," + std::to_string(s) + "," +
              std::to_string(s) + ") input, got " + pair.shape_str());
  return discs_[static_cast<std::size_t>(k - 1)].forward(pair, cache);
}

Tensor MultiScaleDiscriminator::backward(int k, const nn::Cache& cache, const Tensor& grad_logits,
                                         bool accumulate) {
  scale_size(k);
  return discs_[static_cast<std::size_t>(k - 1)].backward(cache, grad_logits, accumulate);
}

nn::ParamRefs MultiScaleDiscriminator::params() {
  nn::ParamRefs out;
  for (auto& d : discs_) {
    auto p = d.params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// --------------------------------------------------------- PatchProjector

PatchProjector::PatchProjector(const std::vector<int>& level_channels, int width, Rng& rng,
                               double init_std)
    : width_(width) {
  for (std::size_t l = 0; l < level_channels.size(); ++l) {
    first_.emplace_back(level_channels[l], width);
    second_.emplace_back(width, width);
    first_.back().init_normal(rng, init_std);
    first_.back().fill_bias(init_std);
    second_.back().init_normal(rng, init_std);
    first_.back().set_prefix("projector." + std::to_string(l) + ".0.");
    second_.back().set_prefix("projector." + std::to_string(l) + ".2.");
  }
}

void PatchProjector::sample_locations(const std::vector<Tensor>& features, int n_patches,
                                      const KnowledgeMask* mask, Rng& rng,
                                      std::vector<std::vector<int>>& locations,
                                      std::vector<std::vector<double>>& weights) {
  require(n_patches >= 1, "embed_patches: n_patches must be >= 1");
  locations.assign(features.size(), {});
  weights.assign(features.size(), {});
  for (std::size_t l = 0; l < features.size(); ++l) {
    const Tensor& f = features[l];
    const int cells = f.h * f.w;
    const int n = std::min(n_patches, cells);
    std::vector<int> all(static_cast<std::size_t>(cells));
    std::iota(all.begin(), all.end(), 0);

    std::optional<KnowledgeMask> level_mask;
    if (mask) level_mask = downsample_mask_to(*mask, f.h, f.w);

    std::vector<int> pool;
    if (level_mask) {
      for (int i : all)
        if (level_mask->values.data[static_cast<std::size_t>(i)] > 0.5) pool.push_back(i);
      if (static_cast<int>(pool.size()) < n) pool = all;
    } else {
      pool = all;
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(n));
    locations[l] = pool;
    for (int i : pool)
      weights[l].push_back(level_mask ? level_mask->values.data[static_cast<std::size_t>(i)] : 1.0);
  }
}

PatchEmbeddingSet PatchProjector::embed_at(const std::vector<Tensor>& features,
                                           const std::vector<std::vector<int>>& locations,
                                           const std::vector<std::vector<double>>& weights,
                                           Tape* tape) const {
  require(features.size() == first_.size(), "PatchProjector: level count mismatch");
  require(locations.size() == features.size() && weights.size() == features.size(),
          "PatchProjector: location/weight level count mismatch");
  PatchEmbeddingSet out;
  out.locations = locations;
  out.weights = weights;
  if (tape) *tape = Tape{};
  for (std::size_t l = 0; l < features.size(); ++l) {
    const Tensor& f = features[l];
    const auto& loc = locations[l];
    require(!loc.empty(), "PatchProjector: no locations at level " + std::to_string(l));
    RowMatrix x(static_cast<Eigen::Index>(loc.size()), f.c);
    for (std::size_t i = 0; i < loc.size(); ++i)
      for (int ch = 0; ch < f.c; ++ch)
        x(static_cast<Eigen::Index>(i), ch) =
            f.data[static_cast<std::size_t>(ch) * f.plane() + static_cast<std::size_t>(loc[i])];
    RowMatrix pre = first_[l].forward(x);
    RowMatrix hid = pre.cwiseMax(0.0);
    RowMatrix proj = second_[l].forward(hid);
    RowMatrix z = proj;
    for (Eigen::Index i = 0; i < z.rows(); ++i) z.row(i) /= proj.row(i).norm() + 1e-7;
    out.embeddings.push_back(std::move(z));
    if (tape) {
      tape->gathered.push_back(std::move(x));
      tape->hidden_pre.push_back(std::move(pre));
      tape->projected.push_back(std::move(proj));
      tape->shapes.push_back({f.c, f.h, f.w});
      tape->locations.push_back(loc);
    }
  }
  return out;
}

std::vector<Tensor> PatchProjector::backward(const Tape& tape,
                                             const std::vector<RowMatrix>& grad_embeddings,
                                             bool accumulate) {
  std::vector<Tensor> grads;
  for (std::size_t l = 0; l < tape.gathered.size(); ++l) {
    const auto [c, h, w] = tape.shapes[l];
    Tensor gfeat(c, h, w);
    if (l >= grad_embeddings.size() || grad_embeddings[l].size() == 0) {
      grads.push_back(std::move(gfeat));
      continue;
    }
    const RowMatrix& proj = tape.projected[l];
    const RowMatrix& gz = grad_embeddings[l];
    RowMatrix gproj(proj.rows(), proj.cols());
    for (Eigen::Index i = 0; i < proj.rows(); ++i) {
      const double n = proj.row(i).norm();
      const double d = n + 1e-7;
      gproj.row(i) = gz.row(i) / d;
      if (n > 0.0) gproj.row(i) -= proj.row(i) * (proj.row(i).dot(gz.row(i)) / (n * d * d));
    }
    const RowMatrix& pre = tape.hidden_pre[l];
    RowMatrix hid = pre.cwiseMax(0.0);
    RowMatrix ghid = second_[l].backward(hid, gproj, accumulate);
    for (Eigen::Index i = 0; i < ghid.size(); ++i)
      if (!(pre.data()[i] > 0.0)) ghid.data()[i] = 0.0;
    RowMatrix gx = first_[l].backward(tape.gathered[l], ghid, accumulate);
    const auto& loc = tape.locations[l];
    for (std::size_t i = 0; i < loc.size(); ++i)
      for (int ch = 0; ch < c; ++ch)
        gfeat.data[static_cast<std::size_t>(ch) * gfeat.plane() + static_cast<std::size_t>(loc[i])] +=
            gx(static_cast<Eigen::Index>(i), ch);
    grads.push_back(std::move(gfeat));
  }
  return grads;
}

nn::ParamRefs PatchProjector::params() {
  nn::ParamRefs out;
  for (std::size_t l = 0; l < first_.size(); ++l) {
    first_[l].collect_params(out);
    second_[l].collect_params(out);
  }
  return out;
}

PatchEmbeddingSet embed_patches(const PatchProjector& head, const std::vector<Tensor>& features,
                                int n_patches, const KnowledgeMask* mask, Rng& rng,
                                PatchProjector::Tape* tape) {
  std::vector<std::vector<int>> loc;
  std::vector<std::vector<double>> w;
  PatchProjector::sample_locations(features, n_patches, mask, rng, loc, w);
  return head.embed_at(features, loc, w, tape);
}

}  // namespace f2v::models
