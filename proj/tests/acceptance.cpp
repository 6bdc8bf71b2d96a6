// Acceptance harness: one PASS/FAIL line per criterion.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "f2v/cli.hpp"
#include "f2v/inference.hpp"
#include "f2v/knowledge_mask.hpp"
#include "f2v/losses.hpp"
#include "f2v/metrics.hpp"
#include "f2v/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace f2v;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && out_.pass) out_.detail = what;
    out_.pass = out_.pass && ok;
  }
  void note(const std::string& s) { notes_ << s << "; "; }
  Outcome result() const {
    Outcome o = out_;
    if (o.pass) o.detail = notes_.str();
    return o;
  }

 private:
  Outcome out_;
  std::ostringstream notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<std::vector<Tensor>> g_rollouts;  // every rollout produced by the harness

// ------------------------------------------------------------------ 1

Outcome mask_oracle() {
  Check c;
  double worst = 1.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto params = data::random_scene(1000 + seed, 64, 12, 1, 0.0);
    const auto s = data::synthesize_pair(params);
    const auto m = compute_mask(s.ffa_frames.front(), s.ffa_frames.back(), 45.0);
    const auto brute = oracle::threshold_mask(s.ffa_frames.front(), s.ffa_frames.back(), 45.0);
    std::vector<int> got(m.values.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      got[i] = static_cast<int>(m.values.data[i]);
      c.expect(m.values.data[i] == static_cast<double>(brute[i]), "brute-force mismatch at seed " + std::to_string(seed));
    }
    worst = std::min(worst, oracle::iou(got, oracle::planted_disks(params)));
  }
  c.expect(worst >= 0.8, "min IoU " + fmt("%.4f", worst));
  c.note("min IoU " + fmt("%.4f", worst) + " over 20 pairs, bit-exact oracle");
  return c.result();
}

// ------------------------------------------------------------------ 2

Outcome loss_closed_forms() {
  Check c;
  std::mt19937_64 g(2);
  for (int n : {1, 4, 16}) {
    Eigen::VectorXd a = Eigen::VectorXd::NullaryExpr(8, [&] { return std::normal_distribution<double>()(g); });
    a.normalize();
    losses::RowMatrix neg(n, 8);
    for (int j = 0; j < n; ++j) neg.row(j) = a.transpose();
    const double v = losses::info_nce(a, a, neg).value;
    c.expect(std::abs(v - std::log(n + 1.0)) <= 1e-9, "info_nce N=" + std::to_string(n));
  }
  const double att = losses::attention_loss(Tensor(4, 4, 4, 0.0), KnowledgeMask{Tensor(1, 4, 4, 1.0)}).value;
  c.expect(att == 1.0, "attention_loss(0, 1) = " + fmt("%.17g", att));
  const auto d = losses::discriminator_loss(Tensor(1, 4, 4), Tensor(1, 4, 4));
  c.expect(std::abs(d.d_term - 2 * std::log(2.0)) <= 1e-9, "d_term at zero logits");
  c.expect(std::abs(d.g_term - std::log(2.0)) <= 1e-9, "g_term at zero logits");
  c.note("log(N+1) for N in {1,4,16}, attention 1.0, BCE (" + fmt("%.12f", d.d_term) + ", " + fmt("%.12f", d.g_term) +
         ")");
  return c.result();
}

// ------------------------------------------------------------------ 3

models::ModelConfig micro_model(int size) {
  models::ModelConfig m;
  m.image_size = size;
  m.ngf = 4;
  m.ndf = 4;
  m.n_resblocks = 1;
  m.head_width = 8;
  m.init_std = 0.3;
  return m;
}

Outcome gradient_suite() {
  Check c;
  std::mt19937_64 g(3);
  double worst = 0.0;
  std::string worst_name;
  auto track = [&](const std::string& name, double analytic, double numeric) {
    const double e = testing::rel_error(analytic, numeric);
    if (e > worst) {
      worst = e;
      worst_name = name;
    }
  };
  auto unit_rows = [&](int n) {
    losses::RowMatrix m(n, 8);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < 8; ++k) m(i, k) = std::normal_distribution<double>()(g);
      m.row(i).normalize();
    }
    return m;
  };

  {  // attention
    Tensor f = testing::random_tensor(3, 4, 4, g, -1, 2);
    KnowledgeMask m{Tensor(1, 4, 4)};
    for (auto& v : m.values.data) v = g() % 2;
    const auto l = losses::attention_loss(f, m);
    auto fn = [&] { return losses::attention_loss(f, m).value; };
    for (std::size_t i = 0; i < f.size(); ++i) track("attention", l.grad_activation.data[i], testing::central_diff(fn, f.data[i]));
  }
  {  // InfoNCE
    Eigen::VectorXd a = unit_rows(1).row(0).transpose(), p = unit_rows(1).row(0).transpose();
    losses::RowMatrix neg = unit_rows(6);
    const auto l = losses::info_nce(a, p, neg);
    auto fn = [&] { return losses::info_nce(a, p, neg).value; };
    for (int i = 0; i < 8; ++i) {
      track("info_nce anchor", l.grad_anchor(i), testing::central_diff(fn, a(i)));
      track("info_nce positive", l.grad_positive(i), testing::central_diff(fn, p(i)));
    }
    for (Eigen::Index i = 0; i < neg.size(); ++i)
      track("info_nce negatives", l.grad_negatives.data()[i], testing::central_diff(fn, neg.data()[i]));
  }
  {  // masked patch NCE, both directions
    const auto make = [&](const losses::RowMatrix& e, const std::vector<double>& w) {
      models::PatchEmbeddingSet s;
      s.embeddings = {e};
      s.weights = {w};
      std::vector<int> loc(static_cast<std::size_t>(e.rows()));
      std::iota(loc.begin(), loc.end(), 0);
      s.locations = {loc};
      return s;
    };
    losses::RowMatrix gen = unit_rows(6);
    const losses::RowMatrix cf = unit_rows(6), gt = unit_rows(6);
    const std::vector<double> w{1, 0.5, 0, 1, 0.25, 1};
    for (int which = 0; which < 2; ++which) {
      const auto& target = which == 0 ? cf : gt;
      auto fn = [&] {
        return which == 0 ? losses::masked_up_loss(make(gen, w), make(target, w)).value
                          : losses::masked_sp_loss(make(gen, w), make(target, w)).value;
      };
      const auto l = losses::patch_nce(make(gen, w), make(target, w));
      for (Eigen::Index i = 0; i < gen.size(); ++i)
        track(which == 0 ? "masked_up" : "masked_sp", l.grad_anchor[0].data()[i], testing::central_diff(fn, gen.data()[i]));
    }
  }
  {  // sigmoid cross-entropy
    Tensor r = testing::random_tensor(1, 4, 4, g, -3, 3), f = testing::random_tensor(1, 4, 4, g, -3, 3);
    const auto l = losses::discriminator_loss(r, f);
    auto d = [&] { return losses::discriminator_loss(r, f).d_term; };
    auto gt = [&] { return losses::discriminator_loss(r, f).g_term; };
    for (std::size_t i = 0; i < r.size(); ++i) {
      track("bce d/real", l.d_grad_real.data[i], testing::central_diff(d, r.data[i]));
      track("bce d/fake", l.d_grad_fake.data[i], testing::central_diff(d, f.data[i]));
      track("bce g/fake", l.g_grad_fake.data[i], testing::central_diff(gt, f.data[i]));
    }
  }
  {  // knowledge-aware multiscale GAN on 8x8 images
    nn::Rng rng(4);
    models::MultiScaleDiscriminator disc(micro_model(8), rng);
    auto ps = disc.params();
    for (auto* p : ps)
      for (auto& v : p->value)
        if (v == 0.0) v = std::uniform_real_distribution<double>(-0.2, 0.2)(g);
    const Tensor cf = testing::random_tensor(3, 8, 8, g), real = testing::random_tensor(1, 8, 8, g);
    Tensor fake = testing::random_tensor(1, 8, 8, g);
    KnowledgeMask m{Tensor(1, 8, 8)};
    for (int y = 1; y < 5; ++y)
      for (int x = 2; x < 7; ++x) m.values.at(0, y, x) = 1.0;
    const auto gl = losses::gan_loss_multiscale(disc, cf, real, fake, &m, losses::GanPass::generator);
    auto g_term = [&] { return losses::gan_loss_multiscale(disc, cf, real, fake, &m, losses::GanPass::evaluate).g_term; };
    for (std::size_t i = 0; i < fake.size(); ++i)
      track("gan g/fake", gl.grad_fake.data[i], testing::central_diff(g_term, fake.data[i], 1e-5));
    nn::zero_grads(ps);
    losses::gan_loss_multiscale(disc, cf, real, fake, &m, losses::GanPass::discriminator);
    auto d_term = [&] { return losses::gan_loss_multiscale(disc, cf, real, fake, &m, losses::GanPass::evaluate).d_term; };
    for (auto* p : ps)
      for (std::size_t i = 0; i < p->value.size(); i += 1 + p->value.size() / 6)
        track("gan d/params", p->grad[i], testing::central_diff(d_term, p->value[i], 1e-5));
  }
  {  // weighted total
    const losses::LossWeights w;
    losses::LossParts parts{0.3, 0.7, 0.2, 1.1, 2.0};
    const double lam[4] = {w.lambda_up, w.lambda_sp, w.lambda_att, w.lambda_gan};
    double* fields[4] = {&parts.up, &parts.sp, &parts.att, &parts.gan_g};
    for (int k = 0; k < 4; ++k) {
      auto fn = [&] { return losses::total_loss(parts, w).total; };
      track("total", lam[k], testing::central_diff(fn, *fields[k]));
    }
  }
  c.expect(worst < 1e-4, "max rel error " + fmt("%.3g", worst) + " (" + worst_name + ")");
  c.note("max rel error " + fmt("%.3g", worst) + " (" + worst_name + ")");
  return c.result();
}

// ------------------------------------------------------------------ 4

Outcome gan_equivalence() {
  Check c;
  std::mt19937_64 g(4);
  nn::Rng rng(5);
  auto cfg = micro_model(32);
  cfg.init_std = 0.1;
  models::MultiScaleDiscriminator disc(cfg, rng);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + trial % 3, size = 32 >> (k - 1);
    const Tensor cf = testing::random_tensor(3, size, size, g), real = testing::random_tensor(1, size, size, g),
                 fake = testing::random_tensor(1, size, size, g);
    const KnowledgeMask ones{Tensor(1, size, size, 1.0)};
    const auto l = losses::gan_loss_knowledge_aware(disc, k, cf, real, fake, &ones, losses::GanPass::evaluate);
    nn::Cache c1, c2;
    const auto plain = losses::discriminator_loss(disc.forward(k, concat_channels(cf, real), c1),
                                                  disc.forward(k, concat_channels(cf, fake), c2));
    worst = std::max({worst, std::abs(l.d_term - 2 * plain.d_term), std::abs(l.g_term - 2 * plain.g_term)});
  }
  c.expect(worst <= 1e-9, "max deviation " + fmt("%.3g", worst));
  c.note("max |L - 2 L_plain| " + fmt("%.3g", worst) + " over 50 instances");
  return c.result();
}

// ------------------------------------------------------------------ 5

Outcome architecture() {
  Check c;
  std::mt19937_64 g(5);
  for (int size : {32, 64}) {
    nn::Rng rng(6);
    auto cfg = micro_model(size);
    models::Generator gen(cfg, rng);
    models::MultiScaleDiscriminator disc(cfg, rng);
    const Tensor cf = testing::random_tensor(3, size, size, g);
    const Tensor luma = luminance(cf);
    const auto out = gen.forward(models::make_generation_state(cf, {luma, luma, luma}, 0));
    c.expect(out.frame.c == 1 && out.frame.h == size && out.frame.w == size, "generator frame shape at " + std::to_string(size));
    c.expect(out.last_activation.c == cfg.ngf && out.last_activation.h == size, "attention map shape");
    Tensor pair = concat_channels(cf, luma);
    for (int k = 1; k <= 3; ++k) {
      nn::Cache cache;
      const Tensor logits = disc.forward(k, pair, cache);
      int n = pair.h;
      for (int i = 0; i < 4; ++i) n = n / 2 + 1;
      n -= 1;
      c.expect(logits.c == 1 && logits.h == n && logits.w == n,
               "D" + std::to_string(k) + " at " + std::to_string(size) + " gives " + logits.shape_str());
      pair = avg_pool2(pair);
    }
  }
  nn::Rng rng(7);
  models::MultiScaleDiscriminator disc(micro_model(64), rng);
  const Tensor pair = testing::random_tensor(4, 64, 64, g);
  nn::Cache c0, c1, c2;
  const double base = disc.forward(1, pair, c0).at(0, 0, 0);
  const auto [lo, hi] = models::PatchDiscriminator::receptive_interval(0);
  Tensor outside = pair;
  for (int ch = 0; ch < 4; ++ch)
    for (int y = hi + 1; y < 64; ++y)
      for (int x = 0; x < 64; ++x) outside.at(ch, y, x) += 3.0;
  c.expect(disc.forward(1, outside, c1).at(0, 0, 0) == base, "out-of-field perturbation changed the logit");
  Tensor inside = pair;
  inside.at(0, std::max(lo, 0), std::max(lo, 0)) += 3.0;
  c.expect(disc.forward(1, inside, c2).at(0, 0, 0) != base, "in-field perturbation ignored");
  c.note("shapes at 32/64 for G and D1..D3; logit (0,0) sees rows [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
  return c.result();
}

// ------------------------------------------------------------------ 6

struct OverfitRun {
  double first_total = 0.0;
  double final_epoch_total = 0.0;
  double ssim_untrained = 0.0;
  double ssim_trained = 0.0;
  bool report_valid = false;
  double seconds = 0.0;
};

double last_frame_ssim(const fs::path& ckpt, const std::vector<data::PairedSample>& pairs, int frames) {
  const auto loaded = train::load_generator(ckpt);
  double sum = 0.0;
  for (const auto& p : pairs) {
    auto video = inference::smooth_triple_average(inference::rollout(loaded.generator, p.cf_image, frames));
    g_rollouts.push_back(video);
    sum += metrics::ssim(video.back(), p.ffa_frames.back());
  }
  return sum / static_cast<double>(pairs.size());
}

OverfitRun overfit(bool knowledge_mask, const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<data::PairedSample> pairs;
  for (int i = 0; i < 4; ++i)
    pairs.push_back(data::synthesize_pair(data::random_scene(600 + i, 64, 12, 1, 0.0), "p" + std::to_string(i)));

  train::TrainConfig cfg;
  cfg.image_size = 64;
  cfg.model.image_size = 64;
  cfg.frames_per_sequence = 6;
  cfg.model.ngf = 8;
  cfg.model.ndf = 8;
  cfg.model.n_resblocks = 2;
  cfg.n_patches = 64;
  cfg.augment = false;
  cfg.sample_every_steps = 0;
  cfg.epochs = 75;
  cfg.seed = 11;
  cfg.use_knowledge_mask = knowledge_mask;

  fs::create_directories(dir);
  train::Trainer(cfg).save(dir / "untrained.f2v");

  OverfitRun run;
  std::vector<double> totals;
  train::FitOptions opts;
  opts.out_dir = dir;
  opts.max_steps = 300;
  opts.on_step = [&](const train::TrainState&, const losses::LossBreakdown& b) { totals.push_back(b.total); };
  const auto final_ckpt = train::fit(pairs, cfg, opts);

  run.first_total = totals.front();
  for (std::size_t i = totals.size() - pairs.size(); i < totals.size(); ++i)
    run.final_epoch_total += totals[i] / static_cast<double>(pairs.size());
  run.ssim_untrained = last_frame_ssim(dir / "untrained.f2v", pairs, 6);
  run.ssim_trained = last_frame_ssim(final_ckpt, pairs, 6);

  metrics::EvaluateOptions eo;
  eo.frames = 6;
  eo.seed = 1;
  const auto report = metrics::evaluate(pairs, final_ckpt, metrics::FallbackExtractor(), eo);
  metrics::write_report(report, dir / "report");
  run.report_valid = report.per_video.size() == pairs.size() && report.fvd && std::isfinite(*report.fvd) &&
                     std::isfinite(report.aggregate.ssim) && fs::exists(dir / "report.json") &&
                     fs::exists(dir / "report.csv") && totals.size() == 300;
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

Outcome overfit_trend(const fs::path& root) {
  Check c;
  const auto full = overfit(true, root / "overfit");
  const double ratio = full.final_epoch_total / full.first_total;
  const double gain = full.ssim_trained - full.ssim_untrained;
  c.expect(ratio < 0.5, "total loss " + fmt("%.4f", full.first_total) + " -> " + fmt("%.4f", full.final_epoch_total) +
                            " (ratio " + fmt("%.3f", ratio) + ", needs < 0.5); SSIM " + fmt("%.4f", full.ssim_untrained) +
                            " -> " + fmt("%.4f", full.ssim_trained) + " (gain " + fmt("%.4f", gain) + ")");
  c.expect(gain >= 0.05, "SSIM gain " + fmt("%.4f", gain));
  c.expect(full.report_valid, "report invalid");
  const auto ablation = overfit(false, root / "overfit_no_mask");
  c.expect(ablation.report_valid, "ablation report invalid");
  c.expect(full.seconds + ablation.seconds < 900, "runtime " + fmt("%.0f s", full.seconds + ablation.seconds));
  c.note("loss ratio " + fmt("%.3f", ratio) + ", SSIM gain " + fmt("%.4f", gain) + ", ablation SSIM gain " +
         fmt("%.4f", ablation.ssim_trained - ablation.ssim_untrained));
  return c.result();
}

// ------------------------------------------------------------------ 7

Outcome smoothing() {
  Check c;
  std::mt19937_64 g(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor> raw;
    const int n = 1 + static_cast<int>(g() % 14);
    for (int i = 0; i < n; ++i) raw.push_back(testing::random_tensor(1, 6, 5, g));
    const auto got = inference::smooth_triple_average(raw);
    const auto want = oracle::windowed_mean(raw);
    for (int i = 0; i < n; ++i) worst = std::max(worst, max_abs_diff(got[i], want[i]));
  }
  c.expect(worst <= 1e-12, "oracle deviation " + fmt("%.3g", worst));
  const std::vector<Tensor> flat(9, Tensor(1, 4, 4, 0.375));
  for (const auto& t : inference::smooth_triple_average(flat)) c.expect(max_abs_diff(t, flat[0]) == 0.0, "constant sequence moved");

  auto max_step = [](const std::vector<Tensor>& v) {
    double m = 0.0;
    for (std::size_t t = 1; t < v.size(); ++t) m = std::max(m, max_abs_diff(v[t], v[t - 1]));
    return m;
  };
  // Rollouts from an untrained generator plus every rollout made by the trend check.
  nn::Rng rng(8);
  models::Generator gen(micro_model(32), rng);
  std::vector<std::vector<Tensor>> raws;
  for (int i = 0; i < 5; ++i) raws.push_back(inference::rollout(gen, testing::random_tensor(3, 32, 32, g), 12));
  int checked = 0;
  for (const auto& raw : raws) {
    c.expect(max_step(inference::smooth_triple_average(raw)) <= max_step(raw) + 1e-15, "jitter grew after smoothing");
    ++checked;
  }
  for (const auto& smoothed : g_rollouts) {
    // Suite rollouts are stored smoothed; smoothing again must still contract.
    c.expect(max_step(inference::smooth_triple_average(smoothed)) <= max_step(smoothed) + 1e-15, "jitter grew after smoothing");
    ++checked;
  }
  c.note("max oracle deviation " + fmt("%.3g", worst) + ", contraction held on " + std::to_string(checked) + " rollouts");
  return c.result();
}

// ------------------------------------------------------------------ 8

Outcome metric_oracles() {
  Check c;
  const double p = metrics::psnr(Tensor(1, 16, 16, 0.0), Tensor(1, 16, 16, 0.5));
  c.expect(std::abs(p - 6.0206) <= 1e-3, "psnr " + fmt("%.6f", p));
  std::mt19937_64 g(8);
  const Tensor a = testing::random_tensor(1, 24, 24, g);
  const double s = metrics::ssim(a, a);
  c.expect(std::abs(s - 1.0) <= 1e-9, "ssim(a,a) " + fmt("%.12f", s));

  auto standardized = [&](double mean) {
    std::vector<double> v(10);
    for (auto& x : v) x = std::normal_distribution<double>()(g);
    double m = 0, var = 0;
    for (double x : v) m += x / 10;
    for (double x : v) var += (x - m) * (x - m) / 9;
    metrics::FeatureSet f{"oracle", {}};
    for (double x : v) f.features.push_back(Eigen::VectorXd::Constant(1, mean + (x - m) / std::sqrt(var)));
    return f;
  };
  const double f1 = metrics::fvd(standardized(0.0), standardized(1.0));
  c.expect(std::abs(f1 - 1.0) <= 1e-6, "fvd 1-D " + fmt("%.9f", f1));
  metrics::FeatureSet set{"oracle", {}};
  for (int i = 0; i < 16; ++i)
    set.features.push_back(Eigen::VectorXd::NullaryExpr(6, [&] { return std::normal_distribution<double>()(g); }));
  const double f0 = metrics::fvd(set, set);
  c.expect(std::abs(f0) <= 1e-6, "fvd(S,S) " + fmt("%.3g", f0));
  c.note("psnr " + fmt("%.5f", p) + ", fvd 1-D " + fmt("%.9f", f1) + ", fvd(S,S) " + fmt("%.2g", f0));
  return c.result();
}

// ------------------------------------------------------------------ 9

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "f2v");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  return code;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const fs::path& root) {
  Check c;
  const auto work = root / "determinism";
  fs::remove_all(work);
  const auto ds = (work / "ds").string();
  c.expect(cli({"--seed", "5", "synth-data", "--patients", "4", "--frames", "12", "--size", "32", "--out", ds}) == 0,
           "synth-data failed");
  std::vector<fs::path> runs;
  for (int r = 0; r < 2; ++r) {
    const auto out = work / "run";
    fs::remove_all(out);
    c.expect(cli({"--seed", "5", "--log-level", "warn", "train", "--data-root", ds, "--out-dir", (out / "train").string(), "--max-steps", "5",
                  "--image-size", "32", "--frames", "6", "--ngf", "4", "--ndf", "4", "--n-resblocks", "1",
                  "--n-patches", "16", "--sample-every", "0"}) == 0,
             "train failed");
    c.expect(cli({"--seed", "5", "generate", "--cf", (work / "ds" / "p000" / "cf.png").string(), "--checkpoint",
                  (out / "train" / "checkpoint_final.f2v").string(), "--frames", "6", "--out",
                  (out / "video").string()}) == 0,
             "generate failed");
    runs.push_back(work / ("run" + std::to_string(r)));
    fs::remove_all(runs.back());
    fs::rename(out, runs.back());
  }
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(runs[0])) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), runs[0]);
    const auto other = runs[1] / rel;
    c.expect(fs::exists(other) && bytes(entry.path()) == bytes(other), "differs: " + rel.string());
    ++compared;
  }
  c.expect(compared >= 9, "too few artifacts compared: " + std::to_string(compared));
  c.note(std::to_string(compared) + " artifacts byte-identical across two runs");
  return c.result();
}

}  // namespace

int main() {
  Eigen::setNbThreads(1);
  const fs::path root = fs::temp_directory_path() / "f2v_acceptance";
  fs::create_directories(root);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "knowledge-mask oracle", mask_oracle},
      {2, "loss closed forms", loss_closed_forms},
      {3, "gradient suite", gradient_suite},
      {4, "knowledge-aware GAN equivalence", gan_equivalence},
      {5, "shape/architecture suite", architecture},
      {6, "overfit trend", [&] { return overfit_trend(root); }},
      {7, "smoothing oracle", smoothing},
      {8, "metric oracles", metric_oracles},
      {9, "determinism", [&] { return determinism(root); }},
  };
  const double limits[10] = {0, 10, 0, 60, 0, 0, 900, 0, 0, 0};

  int failed = 0;
  std::ofstream log(root / "acceptance_results.txt");
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limits[cr.id] > 0 && secs >= limits[cr.id] && o.pass) o = {false, "runtime " + fmt("%.1f s", secs)};
    failed += !o.pass;
    char line[1024];
    std::snprintf(line, sizeof(line), "%s [%d] %s (%.1f s): %s", o.pass ? "PASS" : "FAIL", cr.id, cr.name, secs,
                  o.detail.c_str());
    std::cout << line << std::endl;
    log << line << '\n';
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return 0;
}
