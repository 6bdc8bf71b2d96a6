#include "f2v/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "f2v/errors.hpp"
#include "f2v/image_io.hpp"
#include "f2v/inference.hpp"
#include "f2v/knowledge_mask.hpp"
#include "f2v/metrics.hpp"
#include "f2v/trainer.hpp"

namespace f2v {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json scalar_from_text(const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  try {
    json v = json::parse(text);
    if (v.is_number()) return v;
  } catch (const json::parse_error&) {
  }
  return text;
}

json read_toml(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json root = json::object();
  for (const auto& item : CLI::ConfigTOML().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;
    json* node = &root;
    for (const auto& p : item.parents) node = &(*node)[p];
    if (item.inputs.size() == 1) {
      (*node)[item.name] = scalar_from_text(item.inputs.front());
    } else {
      json arr = json::array();
      for (const auto& v : item.inputs) arr.push_back(scalar_from_text(v));
      (*node)[item.name] = arr;
    }
  }
  return root;
}

json read_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  if (path.extension() == ".toml") return read_toml(path);
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void print_config(const std::string& command, json body) {
  body["command"] = command;
  std::cout << body.dump(2) << std::endl;
}

std::shared_ptr<spdlog::logger> cli_logger() {
  if (auto l = spdlog::get("f2v")) return l;
  return spdlog::stderr_color_mt("f2v");
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (i + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ------------------------------------------------------------- synth-data

struct SynthArgs {
  int patients = 10;
  int frames = 12;
  int size = 64;
  int lesions = 1;
  double noise = 0.0;
  fs::path out;
};

void run_synth(const SynthArgs& a, const Globals& g) {
  if (a.patients < 1) throw ConfigError("--patients must be >= 1");
  if (a.frames < 3) throw ConfigError("--frames must be >= 3");
  if (a.size < 8) throw ConfigError("--size must be >= 8");
  if (a.lesions < 0) throw ConfigError("--lesions must be >= 0");
  if (a.noise < 0) throw ConfigError("--noise must be >= 0");
  const std::uint64_t seed = g.seed.value_or(0);
  print_config("synth-data", {{"patients", a.patients}, {"frames", a.frames}, {"size", a.size},
                              {"lesions", a.lesions}, {"noise", a.noise}, {"out", a.out.string()},
                              {"seed", seed}});
  std::vector<data::PairedSample> samples;
  std::vector<std::string> ids;
  for (int i = 0; i < a.patients; ++i) {
    char pid[32];
    std::snprintf(pid, sizeof(pid), "p%03d", i);
    auto params = data::random_scene(mix_seed(seed, static_cast<std::uint64_t>(i)), a.size, a.frames, a.lesions,
                                     a.noise);
    samples.push_back(data::synthesize_pair(params, pid));
    ids.emplace_back(pid);
  }
  const auto split = data::make_patient_split(ids, seed);
  data::write_dataset(a.out, samples, split);
  cli_logger()->info("wrote {} patients (train {}, val {}, test {}) to {}", a.patients, split.train.size(),
                     split.val.size(), split.test.size(), a.out.string());
}

// ------------------------------------------------------------------- mask

struct MaskArgs {
  fs::path first, last, out;
  double threshold = kDefaultMaskThreshold;
  bool morphology = false;
};

void run_mask(const MaskArgs& a) {
  print_config("mask", {{"first", a.first.string()}, {"last", a.last.string()}, {"out", a.out.string()},
                        {"threshold", a.threshold}, {"morphology", a.morphology}});
  for (const auto& p : {a.first, a.last})
    if (!fs::exists(p)) throw ConfigError("input frame not found: " + p.string());
  const Tensor first = read_png(a.first);
  const Tensor last = read_png(a.last);
  if (first.h != last.h || first.w != last.w)
    throw ConfigError("frames differ in size: " + first.shape_str() + " vs " + last.shape_str());
  const KnowledgeMask m = compute_mask(first, last, MaskOptions{a.threshold, a.morphology});
  write_png(a.out, m.values);
  std::cout << "coverage " << mask_coverage(m) << std::endl;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::optional<fs::path> config;
  fs::path data_root, out_dir;
  std::optional<fs::path> resume;
  std::optional<int> epochs, image_size, frames, ngf, ndf, n_resblocks, n_patches, sample_every;
  std::optional<double> lr, teacher_forcing;
  bool no_knowledge_mask = false;
  bool no_augment = false;
  long long max_steps = 0;
};

void run_train(const TrainArgs& a, const Globals& g) {
  train::TrainConfig cfg;
  if (a.resume) {
    if (!fs::exists(*a.resume)) throw ConfigError("checkpoint not found: " + a.resume->string());
    cfg = train::merge_json(cfg, load_checkpoint(*a.resume).meta.at("config"));
  }
  if (a.config) cfg = train::merge_json(cfg, read_config_file(*a.config));
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.image_size) cfg.image_size = *a.image_size;
  if (a.frames) cfg.frames_per_sequence = *a.frames;
  if (a.ngf) cfg.model.ngf = *a.ngf;
  if (a.ndf) cfg.model.ndf = *a.ndf;
  if (a.n_resblocks) cfg.model.n_resblocks = *a.n_resblocks;
  if (a.n_patches) cfg.n_patches = *a.n_patches;
  if (a.sample_every) cfg.sample_every_steps = *a.sample_every;
  if (a.lr) cfg.lr = *a.lr;
  if (a.teacher_forcing) cfg.teacher_forcing_prob = *a.teacher_forcing;
  if (a.no_knowledge_mask) cfg.use_knowledge_mask = false;
  if (a.no_augment) cfg.augment = false;
  if (g.seed) cfg.seed = *g.seed;
  cfg.model.image_size = cfg.image_size;
  train::validate(cfg);

  json shown = train::to_json(cfg);
  shown["data_root"] = a.data_root.string();
  shown["out_dir"] = a.out_dir.string();
  shown["resume"] = a.resume ? json(a.resume->string()) : json(nullptr);
  shown["max_steps"] = a.max_steps;
  print_config("train", shown);

  const auto dataset = data::load_dataset(a.data_root, data::Split::train, cfg.image_size);
  auto log = cli_logger();
  log->info("training on {} sequences at {}x{}", dataset.size(), cfg.image_size, cfg.image_size);
  train::FitOptions opts;
  opts.out_dir = a.out_dir;
  opts.resume = a.resume;
  opts.max_steps = a.max_steps;
  opts.on_step = [&](const train::TrainState& st, const losses::LossBreakdown& b) {
    log->info("step {} epoch {} lr {:.3g} total {:.5f} (up {:.4f} sp {:.4f} att {:.4f} gan_g {:.4f} gan_d {:.4f})",
              st.step, st.epoch, st.current_lr, b.total, b.up, b.sp, b.att, b.gan_g, b.gan_d);
  };
  const fs::path final_ckpt = train::fit(dataset, cfg, opts);
  std::cout << "checkpoint " << final_ckpt.string() << std::endl;
}

// --------------------------------------------------------------- generate

struct GenerateArgs {
  fs::path cf, checkpoint, out;
  int frames = 12;
  std::string smoothing = "triple_average";
  bool no_smooth = false;
  bool force = false;
};

void run_generate(const GenerateArgs& a, const Globals& g) {
  inference::GenerateOptions opts;
  opts.frames = a.frames;
  opts.smoothing = a.no_smooth ? inference::Smoothing::none : inference::parse_smoothing(a.smoothing);
  opts.force = a.force;
  opts.seed = g.seed.value_or(0);
  print_config("generate", {{"cf", a.cf.string()}, {"checkpoint", a.checkpoint.string()}, {"out", a.out.string()},
                            {"frames", opts.frames}, {"smoothing", inference::to_string(opts.smoothing)},
                            {"force", opts.force}, {"seed", opts.seed}});
  if (!fs::exists(a.cf)) throw ConfigError("CF image not found: " + a.cf.string());
  if (!fs::exists(a.checkpoint)) throw ConfigError("checkpoint not found: " + a.checkpoint.string());
  const auto video = inference::generate_video(a.cf, a.checkpoint, a.out, opts);
  cli_logger()->info("wrote {} frames to {}", video.frames.size(), a.out.string());
}

// --------------------------------------------------------------- evaluate

struct EvaluateArgs {
  fs::path data_root, checkpoint, out;
  std::string extractor = "fallback";
  int frames = 12;
  std::string smoothing = "triple_average";
  bool no_smooth = false;
};

void run_evaluate(const EvaluateArgs& a, const Globals& g) {
  metrics::EvaluateOptions opts;
  opts.frames = a.frames;
  opts.smoothing = a.no_smooth ? inference::Smoothing::none : inference::parse_smoothing(a.smoothing);
  opts.seed = g.seed.value_or(0);
  print_config("evaluate", {{"data_root", a.data_root.string()}, {"checkpoint", a.checkpoint.string()},
                            {"extractor", a.extractor}, {"out", a.out.string()}, {"frames", opts.frames},
                            {"smoothing", inference::to_string(opts.smoothing)}, {"seed", opts.seed}});
  if (!fs::exists(a.checkpoint)) throw ConfigError("checkpoint not found: " + a.checkpoint.string());
  const auto extractor = metrics::make_extractor(a.extractor);
  const int size = train::load_generator(a.checkpoint).config.image_size;
  const auto test = data::load_dataset(a.data_root, data::Split::test, size);
  const auto report = metrics::evaluate(test, a.checkpoint, *extractor, opts);
  metrics::write_report(report, a.out);
  for (const auto& w : report.warnings) cli_logger()->warn("{}", w);
  std::cout << metrics::to_json(report)["aggregate"].dump() << std::endl;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Fundus-to-angiography video generation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic paired CF/FFA dataset");
  synth->add_option("--patients", sa.patients, "Number of patients")->capture_default_str();
  synth->add_option("--frames", sa.frames, "FFA frames per patient")->capture_default_str();
  synth->add_option("--size", sa.size, "Image side in pixels")->capture_default_str();
  synth->add_option("--lesions", sa.lesions, "Leaking lesions per patient")->capture_default_str();
  synth->add_option("--noise", sa.noise, "Gaussian noise std")->capture_default_str();
  synth->add_option("--out", sa.out, "Output dataset root")->required();

  MaskArgs ma;
  auto* mask = app.add_subcommand("mask", "Compute the knowledge mask of two frames");
  mask->add_option("--first", ma.first, "First FFA frame (PNG)")->required();
  mask->add_option("--last", ma.last, "Last FFA frame (PNG)")->required();
  mask->add_option("--threshold", ma.threshold, "Change threshold on the 0-255 scale")->capture_default_str();
  mask->add_option("--out", ma.out, "Output mask PNG")->required();
  mask->add_flag("--morphology", ma.morphology, "Apply 3px opening and closing");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train generator and discriminators");
  tr->add_option("--config", ta.config, "JSON or TOML training config");
  tr->add_option("--data-root", ta.data_root, "Dataset root")->required();
  tr->add_option("--out-dir", ta.out_dir, "Output directory")->required();
  tr->add_option("--resume", ta.resume, "Checkpoint to resume from");
  tr->add_option("--epochs", ta.epochs);
  tr->add_option("--image-size", ta.image_size);
  tr->add_option("--frames", ta.frames, "Frames per training sequence");
  tr->add_option("--lr", ta.lr);
  tr->add_option("--teacher-forcing", ta.teacher_forcing, "Probability of feeding generated frames");
  tr->add_option("--ngf", ta.ngf);
  tr->add_option("--ndf", ta.ndf);
  tr->add_option("--n-resblocks", ta.n_resblocks);
  tr->add_option("--n-patches", ta.n_patches);
  tr->add_option("--sample-every", ta.sample_every, "Steps between sample grids (0 disables)");
  tr->add_option("--max-steps", ta.max_steps, "Stop after this many steps (0 = run all epochs)");
  tr->add_flag("--no-knowledge-mask", ta.no_knowledge_mask, "Train without the knowledge mask");
  tr->add_flag("--no-augment", ta.no_augment, "Disable data augmentation");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate an FFA video from a CF image");
  gen->add_option("--cf", ga.cf, "CF image (PNG)")->required();
  gen->add_option("--checkpoint", ga.checkpoint)->required();
  gen->add_option("--frames", ga.frames)->capture_default_str();
  gen->add_option("--out", ga.out, "Output directory")->required();
  const auto modes = CLI::IsMember({"triple_average", "window_overlap", "none"});
  gen->add_option("--smoothing", ga.smoothing, "triple_average|window_overlap|none")
      ->check(modes)
      ->capture_default_str();
  gen->add_flag("--no-smooth", ga.no_smooth, "Skip temporal smoothing (same as --smoothing none)");
  gen->add_flag("--force", ga.force, "Allow a non-empty output directory");

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score generated videos on the test split");
  ev->add_option("--data-root", ea.data_root)->required();
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--extractor", ea.extractor, "'fallback' or a plugin library path")->capture_default_str();
  ev->add_option("--out", ea.out, "Report path; .json and .csv are written")->required();
  ev->add_option("--frames", ea.frames)->capture_default_str();
  ev->add_option("--smoothing", ea.smoothing, "triple_average|window_overlap|none")
      ->check(modes)
      ->capture_default_str();
  ev->add_flag("--no-smooth", ea.no_smooth, "Same as --smoothing none");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  auto log = cli_logger();
  log->set_level(spdlog::level::from_str(g.log_level));
  try {
    if (synth->parsed()) run_synth(sa, g);
    else if (mask->parsed()) run_mask(ma);
    else if (tr->parsed()) run_train(ta, g);
    else if (gen->parsed()) run_generate(ga, g);
    else if (ev->parsed()) run_evaluate(ea, g);
    return 0;
  } catch (const ConfigError& e) {
    log->error("configuration error: {}", e.what());
  } catch (const ContractError& e) {
    log->error("invalid input: {}", e.what());
  } catch (const LoadError& e) {
    log->error("cannot load: {}", e.what());
  } catch (const MalformedSampleError& e) {
    log->error("malformed data: {}", e.what());
  } catch (const InsufficientFramesError& e) {
    log->error("insufficient frames: {}", e.what());
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return 2;
  }
  return 1;
}

}  // namespace f2v
