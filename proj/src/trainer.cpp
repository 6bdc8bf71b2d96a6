#include "f2v/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "f2v/image_io.hpp"

namespace f2v::train {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ config

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.epochs < 1) fail("epochs must be >= 1");
  if (c.batch_size != 1) fail("only batch_size 1 is supported");
  if (!(c.lr >= 0.0)) fail("lr must be >= 0");
  if (!(c.beta1 > 0.0 && c.beta1 < 1.0 && c.beta2 > 0.0 && c.beta2 < 1.0)) fail("Adam betas must be in (0,1)");
  if (c.lr_step_iters < 1) fail("lr_step_iters must be >= 1");
  if (!(c.lr_decay > 0.0)) fail("lr_decay must be > 0");
  if (!(c.teacher_forcing_prob >= 0.0 && c.teacher_forcing_prob <= 1.0))
    fail("teacher_forcing_prob must be in [0,1]");
  if (c.frames_per_sequence < 3 || c.frames_per_sequence % 3 != 0)
    fail("frames_per_sequence must be a positive multiple of 3");
  if (c.n_patches < 1) fail("n_patches must be >= 1");
  if (!(c.nce_temperature > 0.0)) fail("nce_temperature must be > 0");
  if (!(c.mask_threshold >= 0.0)) fail("mask_threshold must be >= 0");
  if (!(c.grad_clip > 0.0)) fail("grad_clip must be > 0");
  if (c.sample_every_steps < 0) fail("sample_every_steps must be >= 0");
  if (c.model.image_size != c.image_size) fail("model.image_size must equal image_size");
  losses::validate(c.weights);
  try {
    models::validate(c.model);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

json to_json(const TrainConfig& c) {
  return {
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"lr_step_iters", c.lr_step_iters},
      {"lr_step_unit", c.lr_step_unit == LrCadence::epochs ? "epochs" : "iterations"},
      {"lr_decay", c.lr_decay},
      {"teacher_forcing_prob", c.teacher_forcing_prob},
      {"weights",
       {{"lambda_up", c.weights.lambda_up},
        {"lambda_sp", c.weights.lambda_sp},
        {"lambda_att", c.weights.lambda_att},
        {"lambda_gan", c.weights.lambda_gan}}},
      {"image_size", c.image_size},
      {"frames_per_sequence", c.frames_per_sequence},
      {"seed", c.seed},
      {"model",
       {{"ngf", c.model.ngf},
        {"n_resblocks", c.model.n_resblocks},
        {"ndf", c.model.ndf},
        {"head_width", c.model.head_width},
        {"init_std", c.model.init_std}}},
      {"n_patches", c.n_patches},
      {"nce_temperature", c.nce_temperature},
      {"nce_mask_mode", c.nce_mask_mode == NceMaskMode::sampling ? "sampling" : "pixel"},
      {"mask_threshold", c.mask_threshold},
      {"use_knowledge_mask", c.use_knowledge_mask},
      {"grad_clip", c.grad_clip},
      {"augment", c.augment},
      {"augment_config",
       {{"crop_prob", c.augment_config.crop_prob},
        {"scale_prob", c.augment_config.scale_prob},
        {"jitter_prob", c.augment_config.jitter_prob},
        {"min_crop_fraction", c.augment_config.min_crop_fraction},
        {"max_scale_delta", c.augment_config.max_scale_delta},
        {"jitter_strength", c.augment_config.jitter_strength}}},
      {"sample_every_steps", c.sample_every_steps},
  };
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& dst) {
  try {
    dst = j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

}  // namespace

TrainConfig merge_json(const TrainConfig& base, const json& j) {
  TrainConfig c = base;
  reject_unknown(j,
                 {"epochs", "batch_size", "lr", "beta1", "beta2", "lr_step_iters", "lr_step_unit", "lr_decay",
                  "teacher_forcing_prob", "weights", "image_size", "frames_per_sequence", "seed",
                  "model", "n_patches", "nce_temperature", "nce_mask_mode", "mask_threshold",
                  "use_knowledge_mask", "grad_clip", "augment", "augment_config",
                  "sample_every_steps", "lambda_up", "lambda_sp", "lambda_att", "lambda_gan"},
                 "");
#define F2V_TAKE(name) \
  if (j.contains(#name)) take(j.at(#name), #name, c.name)
  F2V_TAKE(epochs);
  F2V_TAKE(batch_size);
  F2V_TAKE(lr);
  F2V_TAKE(beta1);
  F2V_TAKE(beta2);
  F2V_TAKE(lr_step_iters);
  F2V_TAKE(lr_decay);
  F2V_TAKE(teacher_forcing_prob);
  F2V_TAKE(image_size);
  F2V_TAKE(frames_per_sequence);
  F2V_TAKE(seed);
  F2V_TAKE(n_patches);
  F2V_TAKE(nce_temperature);
  F2V_TAKE(mask_threshold);
  F2V_TAKE(use_knowledge_mask);
  F2V_TAKE(grad_clip);
  F2V_TAKE(augment);
  F2V_TAKE(sample_every_steps);
#undef F2V_TAKE
  auto weights = j.contains("weights") ? j.at("weights") : json::object();
  for (const char* k : {"lambda_up", "lambda_sp", "lambda_att", "lambda_gan"})
    if (j.contains(k)) weights[k] = j.at(k);
  reject_unknown(weights, {"lambda_up", "lambda_sp", "lambda_att", "lambda_gan"}, "weights");
  if (weights.contains("lambda_up")) take(weights["lambda_up"], "lambda_up", c.weights.lambda_up);
  if (weights.contains("lambda_sp")) take(weights["lambda_sp"], "lambda_sp", c.weights.lambda_sp);
  if (weights.contains("lambda_att")) take(weights["lambda_att"], "lambda_att", c.weights.lambda_att);
  if (weights.contains("lambda_gan")) take(weights["lambda_gan"], "lambda_gan", c.weights.lambda_gan);

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"ngf", "n_resblocks", "ndf", "head_width", "init_std"}, "model");
    if (m.contains("ngf")) take(m["ngf"], "model.ngf", c.model.ngf);
    if (m.contains("n_resblocks")) take(m["n_resblocks"], "model.n_resblocks", c.model.n_resblocks);
    if (m.contains("ndf")) take(m["ndf"], "model.ndf", c.model.ndf);
    if (m.contains("head_width")) take(m["head_width"], "model.head_width", c.model.head_width);
    if (m.contains("init_std")) take(m["init_std"], "model.init_std", c.model.init_std);
  }
  if (j.contains("nce_mask_mode")) {
    const std::string mode = j.at("nce_mask_mode").get<std::string>();
    if (mode == "sampling") c.nce_mask_mode = NceMaskMode::sampling;
    else if (mode == "pixel") c.nce_mask_mode = NceMaskMode::pixel;
    else throw ConfigError("nce_mask_mode must be 'sampling' or 'pixel'");
  }
  if (j.contains("lr_step_unit")) {
    const json& u = j.at("lr_step_unit");
    if (u == "iterations") c.lr_step_unit = LrCadence::iterations;
    else if (u == "epochs") c.lr_step_unit = LrCadence::epochs;
    else throw ConfigError("lr_step_unit must be 'iterations' or 'epochs'");
  }
  if (j.contains("augment_config")) {
    const json& a = j.at("augment_config");
    reject_unknown(a, {"crop_prob", "scale_prob", "jitter_prob", "min_crop_fraction", "max_scale_delta",
                       "jitter_strength"},
                   "augment_config");
    auto& ac = c.augment_config;
    if (a.contains("crop_prob")) take(a["crop_prob"], "crop_prob", ac.crop_prob);
    if (a.contains("scale_prob")) take(a["scale_prob"], "scale_prob", ac.scale_prob);
    if (a.contains("jitter_prob")) take(a["jitter_prob"], "jitter_prob", ac.jitter_prob);
    if (a.contains("min_crop_fraction")) take(a["min_crop_fraction"], "min_crop_fraction", ac.min_crop_fraction);
    if (a.contains("max_scale_delta")) take(a["max_scale_delta"], "max_scale_delta", ac.max_scale_delta);
    if (a.contains("jitter_strength")) take(a["jitter_strength"], "jitter_strength", ac.jitter_strength);
  }
  c.model.image_size = c.image_size;
  return c;
}

double scheduled_lr(const TrainConfig& cfg, long long step, int epoch) {
  const long long n = cfg.lr_step_unit == LrCadence::epochs ? epoch : step;
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(n / cfg.lr_step_iters));
}

// ------------------------------------------------------ input scheduling

FrameWindow scheduled_input_select(const FrameWindow& gt_prev, const FrameWindow& gen_prev, double p,
                                   nn::Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  return u01(rng) < p ? gen_prev : gt_prev;
}

FrameWindow preceding_window(const std::vector<Tensor>& frames, std::size_t t, const Tensor& cf_luma) {
  FrameWindow w;
  for (int k = 0; k < 3; ++k) {
    const long long idx = static_cast<long long>(t) - 3 + k;
    w[static_cast<std::size_t>(k)] = idx >= 0 ? frames[static_cast<std::size_t>(idx)] : cf_luma;
  }
  return w;
}

// ------------------------------------------------------------------ Trainer

namespace {

nn::Rng init_rng(std::uint64_t seed) { return nn::Rng(seed); }

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  return h;
}

std::string rng_to_string(const nn::Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void scale_grads(const nn::ParamRefs& params, double s) {
  for (auto* p : params)
    for (double& g : p->grad) g *= s;
}

Tensor multiply_mask(const Tensor& t, const KnowledgeMask& m) {
  Tensor out = t;
  for (int ch = 0; ch < t.c; ++ch)
    for (std::size_t i = 0; i < t.plane(); ++i) out.data[ch * t.plane() + i] *= m.values.data[i];
  return out;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg)
    : cfg_([&] {
        cfg.model.image_size = cfg.image_size;
        validate(cfg);
        return cfg;
      }()),
      generator_([&] {
        auto rng = init_rng(cfg_.seed);
        return models::Generator(cfg_.model, rng);
      }()),
      discriminator_([&] {
        auto rng = init_rng(cfg_.seed + 1);
        return models::MultiScaleDiscriminator(cfg_.model, rng);
      }()),
      projector_([&] {
        auto rng = init_rng(cfg_.seed + 2);
        return models::PatchProjector(generator_.level_channels(), cfg_.model.head_width, rng,
                                      cfg_.model.init_std);
      }()),
      g_opt_(generator_side_params(), cfg_.beta1, cfg_.beta2),
      d_opt_(discriminator_.params(), cfg_.beta1, cfg_.beta2) {
  state_.rng = nn::Rng(mix(cfg_.seed, 0x5eed));
  state_.current_lr = scheduled_lr(cfg_, 0);
}

nn::ParamRefs Trainer::generator_side_params() {
  nn::ParamRefs out = generator_.params();
  auto head = projector_.params();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

StepResult Trainer::train_step(const data::TrainingSequence& seq) { return run_sequence(seq, true); }

losses::LossBreakdown Trainer::evaluate_losses(const data::TrainingSequence& seq) {
  return run_sequence(seq, false).breakdown;
}

StepResult Trainer::run_sequence(const data::TrainingSequence& seq, bool update) {
  require(seq.frames.size() >= 2, "train_step: sequence needs at least 2 frames");
  require(seq.cf_image.c == 3 && seq.cf_image.h == cfg_.image_size && seq.cf_image.w == cfg_.image_size,
          "train_step: CF image " + seq.cf_image.shape_str() + " does not match image_size " +
              std::to_string(cfg_.image_size));
  for (const auto& f : seq.frames)
    require(f.c == 1 && f.h == cfg_.image_size && f.w == cfg_.image_size,
            "train_step: frame shape " + f.shape_str() + " does not match image_size");

  const auto& w = cfg_.weights;
  const bool with_mask = cfg_.use_knowledge_mask;
  StepResult result;
  result.mask = compute_mask(seq.frames.front(), seq.frames.back(), cfg_.mask_threshold);
  const KnowledgeMask* mask = with_mask ? &result.mask : nullptr;
  const bool pixel_nce = with_mask && cfg_.nce_mask_mode == NceMaskMode::pixel;
  const KnowledgeMask* sample_mask = (with_mask && !pixel_nce) ? mask : nullptr;

  auto g_params = generator_side_params();
  auto d_params = discriminator_.params();
  if (update) {
    nn::zero_grads(g_params);
    nn::zero_grads(d_params);
  }

  const Tensor cf_luma = luminance(seq.cf_image);
  const Tensor cf_nce_in = models::Generator::nce_input(pixel_nce ? multiply_mask(seq.cf_image, *mask) : seq.cf_image);
  nn::Cache scratch;
  const std::vector<Tensor> cf_features = generator_.encode(cf_nce_in, scratch);

  std::uint64_t patch_seed = mix(cfg_.seed, 0xbadc0ffee);
  for (auto idx : seq.source_indices) patch_seed = mix(patch_seed, idx);

  losses::LossParts parts;
  const auto n_frames = seq.frames.size();
  for (std::size_t t = 0; t < n_frames; ++t) {
    const FrameWindow window = scheduled_input_select(preceding_window(seq.frames, t, cf_luma),
                                                      preceding_window(result.generated, t, cf_luma),
                                                      cfg_.teacher_forcing_prob, state_.rng);
    const auto state = models::make_generation_state(seq.cf_image, window, static_cast<int>(t));
    models::Generator::Tape tape;
    const models::GeneratorOutput out = generator_.forward(state, &tape);
    const Tensor fake = models::to_unit_range(out.frame);
    const Tensor& real = seq.frames[t];

    // Discriminator side (fake enters as a constant).
    const auto d_gan = losses::gan_loss_multiscale(discriminator_, seq.cf_image, real, fake, mask,
                                                   update ? losses::GanPass::discriminator
                                                          : losses::GanPass::evaluate);
    parts.gan_d += d_gan.d_term;

    // Generator side.
    const auto g_gan = losses::gan_loss_multiscale(discriminator_, seq.cf_image, real, fake, mask,
                                                   losses::GanPass::generator);
    parts.gan_g += g_gan.g_term;
    Tensor grad_fake = g_gan.grad_fake;
    for (auto& g : grad_fake.data) g *= w.lambda_gan;

    Tensor grad_act;
    if (mask) {
      auto att = losses::attention_loss(out.last_activation, *mask);
      parts.att += att.value;
      grad_act = std::move(att.grad_activation);
      for (auto& g : grad_act.data) g *= w.lambda_att;
    }

    nn::Cache gen_cache;
    const Tensor fake_nce = pixel_nce ? multiply_mask(fake, *mask) : fake;
    const std::vector<Tensor> gen_features = generator_.encode(models::Generator::nce_input(fake_nce), gen_cache);
    nn::Cache gt_cache;
    const Tensor real_nce = pixel_nce ? multiply_mask(real, *mask) : real;
    const std::vector<Tensor> gt_features = generator_.encode(models::Generator::nce_input(real_nce), gt_cache);

    nn::Rng patch_rng(mix(patch_seed, t));
    std::vector<std::vector<int>> loc;
    std::vector<std::vector<double>> wts;
    models::PatchProjector::sample_locations(gen_features, cfg_.n_patches, sample_mask, patch_rng, loc, wts);
    models::PatchProjector::Tape head_tape;
    const auto gen_emb = projector_.embed_at(gen_features, loc, wts, &head_tape);
    const auto cf_emb = projector_.embed_at(cf_features, loc, wts);
    const auto gt_emb = projector_.embed_at(gt_features, loc, wts);
    const auto up = losses::masked_up_loss(gen_emb, cf_emb, cfg_.nce_temperature);
    const auto sp = losses::masked_sp_loss(gen_emb, gt_emb, cfg_.nce_temperature);
    parts.up += up.value;
    parts.sp += sp.value;

    if (update) {
      std::vector<models::RowMatrix> grad_emb(up.grad_anchor.size());
      for (std::size_t l = 0; l < grad_emb.size(); ++l)
        grad_emb[l] = w.lambda_up * up.grad_anchor[l] + w.lambda_sp * sp.grad_anchor[l];
      const auto grad_feat = projector_.backward(head_tape, grad_emb, true);
      Tensor grad_in = generator_.encode_backward(gen_cache, grad_feat, true);
      for (int ch = 0; ch < grad_in.c; ++ch) {
        auto plane = grad_in.channel(ch);
        for (std::size_t i = 0; i < plane.size(); ++i)
          grad_fake.data[i] += pixel_nce ? plane[i] * mask->values.data[i] : plane[i];
      }
      Tensor grad_frame = grad_fake;
      for (auto& g : grad_frame.data) g *= 0.5;  // unit range = (tanh + 1) / 2
      generator_.backward(tape, grad_frame, grad_act, true);
    }
    result.generated.push_back(fake);
  }

  const double inv = 1.0 / static_cast<double>(n_frames);
  parts.up *= inv;
  parts.sp *= inv;
  parts.att *= inv;
  parts.gan_g *= inv;
  parts.gan_d *= inv;
  try {
    result.breakdown = losses::total_loss(parts, w);
  } catch (const losses::TrainingDivergenceError& e) {
    throw losses::TrainingDivergenceError("training diverged at step " + std::to_string(state_.step) + ": " +
                                              e.what(),
                                          e.breakdown(), state_.step);
  }

  if (update) {
    scale_grads(d_params, inv);
    scale_grads(g_params, inv);
    nn::clip_grad_norm(d_params, cfg_.grad_clip);
    nn::clip_grad_norm(g_params, cfg_.grad_clip);
    d_opt_.step(state_.current_lr);
    g_opt_.step(state_.current_lr);
    ++state_.step;
    state_.current_lr = scheduled_lr(cfg_, state_.step, state_.epoch);
  }
  return result;
}

// ------------------------------------------------------------ persistence

Checkpoint Trainer::to_checkpoint() const {
  auto& self = const_cast<Trainer&>(*this);
  Checkpoint ck;
  ck.meta = {{"format_version", 1},
             {"config", to_json(cfg_)},
             {"state",
              {{"step", state_.step},
               {"epoch", state_.epoch},
               {"current_lr", state_.current_lr},
               {"rng", rng_to_string(state_.rng)}}},
             {"optimizer", {{"g_t", g_opt_.state().t}, {"d_t", d_opt_.state().t}}}};
  append_params(ck, self.generator_side_params());
  append_params(ck, self.discriminator_.params());
  auto add_moments = [&](const nn::Adam& opt, const std::string& tag) {
    const auto& params = opt.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.arrays.push_back({"optim." + tag + ".m." + params[i]->name, opt.state().m[i]});
      ck.arrays.push_back({"optim." + tag + ".v." + params[i]->name, opt.state().v[i]});
    }
  };
  add_moments(g_opt_, "g");
  add_moments(d_opt_, "d");
  return ck;
}

void Trainer::save(const fs::path& path) const { save_checkpoint(path, to_checkpoint()); }

namespace {

TrainConfig config_from_checkpoint(const Checkpoint& ck, const fs::path& path) {
  if (!ck.meta.contains("config")) throw LoadError("checkpoint lacks config header: " + path.string());
  try {
    return merge_json(TrainConfig{}, ck.meta.at("config"));
  } catch (const ConfigError& e) {
    throw LoadError("checkpoint config invalid (" + std::string(e.what()) + "): " + path.string());
  }
}

}  // namespace

std::unique_ptr<Trainer> Trainer::resume(const fs::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  auto trainer = std::make_unique<Trainer>(config_from_checkpoint(ck, path));
  restore_params(ck, trainer->generator_side_params(), path.string());
  restore_params(ck, trainer->discriminator_.params(), path.string());
  auto load_moments = [&](nn::Adam& opt, const std::string& tag) {
    const auto& params = opt.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto* m = ck.find("optim." + tag + ".m." + params[i]->name);
      const auto* v = ck.find("optim." + tag + ".v." + params[i]->name);
      if (!m || !v || m->values.size() != params[i]->value.size() || v->values.size() != params[i]->value.size())
        throw LoadError("checkpoint optimizer state incomplete for '" + params[i]->name + "': " + path.string());
      opt.state().m[i] = m->values;
      opt.state().v[i] = v->values;
    }
  };
  load_moments(trainer->g_opt_, "g");
  load_moments(trainer->d_opt_, "d");
  const json& st = ck.meta.at("state");
  trainer->state_.step = st.at("step").get<long long>();
  trainer->state_.epoch = st.at("epoch").get<int>();
  trainer->state_.current_lr = st.at("current_lr").get<double>();
  std::istringstream rs(st.at("rng").get<std::string>());
  rs >> trainer->state_.rng;
  trainer->g_opt_.state().t = ck.meta.at("optimizer").at("g_t").get<long long>();
  trainer->d_opt_.state().t = ck.meta.at("optimizer").at("d_t").get<long long>();
  return trainer;
}

LoadedGenerator load_generator(const fs::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  TrainConfig cfg = config_from_checkpoint(ck, path);
  nn::Rng rng(cfg.seed);
  models::Generator g(cfg.model, rng);
  restore_params(ck, g.params(), path.string());
  return LoadedGenerator{std::move(g), cfg, file_sha256(path)};
}

// --------------------------------------------------------------------- fit

namespace {

std::string csv_row(const TrainState& s, const losses::LossBreakdown& b) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.step, b.up, b.sp, b.att,
                b.gan_g, b.gan_d, b.total);
  return buf;
}

Tensor frame_grid(const std::vector<Tensor>& top, const std::vector<Tensor>& bottom) {
  const int h = top.front().h, w = top.front().w;
  const int cols = static_cast<int>(std::max(top.size(), bottom.size()));
  Tensor grid(1, 2 * h, cols * w);
  auto blit = [&](const std::vector<Tensor>& row, int r) {
    for (std::size_t i = 0; i < row.size(); ++i)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) grid.at(0, r * h + y, static_cast<int>(i) * w + x) = row[i].at(0, y, x);
  };
  blit(top, 0);
  blit(bottom, 1);
  return grid;
}

std::string epoch_name(int epoch) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "checkpoint_epoch_%03d.f2v", epoch);
  return buf;
}

}  // namespace

fs::path fit(const std::vector<data::PairedSample>& dataset, const TrainConfig& cfg, const FitOptions& opts) {
  if (dataset.empty()) throw ConfigError("training split is empty");
  validate(cfg);
  fs::create_directories(opts.out_dir);

  std::unique_ptr<Trainer> trainer = opts.resume ? Trainer::resume(*opts.resume) : std::make_unique<Trainer>(cfg);
  const TrainConfig& tc = trainer->config();
  const int per_phase = tc.frames_per_sequence / 3;

  const fs::path csv_path = opts.out_dir / "losses.csv";
  std::ofstream csv(csv_path, opts.resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  if (!opts.resume) csv << "step,up,sp,att,gan_g,gan_d,total\n";

  auto& st = trainer->state();
  auto done = [&] { return opts.max_steps > 0 && st.step >= opts.max_steps; };
  for (int epoch = st.epoch; epoch < cfg.epochs && !done(); ++epoch) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), st.rng);
    bool interrupted = false;
    for (auto idx : order) {
      if (done()) {
        interrupted = true;
        break;
      }
      data::TrainingSequence seq = data::sample_training_frames(dataset[idx], st.rng, per_phase);
      if (tc.augment) seq = data::augment(seq, st.rng, tc.augment_config).sequence;
      const StepResult res = trainer->train_step(seq);
      csv << csv_row(st, res.breakdown);
      csv.flush();
      if (opts.on_step) opts.on_step(st, res.breakdown);
      if (tc.sample_every_steps > 0 && st.step % tc.sample_every_steps == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "step_%06lld.png", st.step);
        write_png(opts.out_dir / "samples" / name, frame_grid(seq.frames, res.generated));
      }
    }
    if (interrupted) break;
    st.epoch = epoch + 1;
    st.current_lr = scheduled_lr(tc, st.step, st.epoch);
    trainer->save(opts.out_dir / epoch_name(st.epoch));
  }
  const fs::path final_path = opts.out_dir / "checkpoint_final.f2v";
  trainer->save(final_path);
  return final_path;
}

}  // namespace f2v::train
