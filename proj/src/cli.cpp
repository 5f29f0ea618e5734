#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "csdenoise/cli.hpp"
#include "csdenoise/png_io.hpp"
#include "csdenoise/train.hpp"
#include "csdenoise/wav.hpp"

namespace csd {

namespace fs = std::filesystem;

namespace {

// thrown during the validation phase of a command; maps to exit code 2
struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  bool has_seed = false;
  uint64_t seed = 0;
  std::string core;
  bool no_image_loss = false;
  bool no_audio_loss = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "key=value config file");
  cmd->add_option("--set", o.overrides, "config override key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "RNG seed")->each([&](const std::string&) {
    o.has_seed = true;
  });
  cmd->add_option("--core", o.core, "generator core: swin | unet");
  cmd->add_flag("--no-image-loss", o.no_image_loss, "disable the image quality losses");
  cmd->add_flag("--no-audio-loss", o.no_audio_loss, "disable the audio reconstruction losses");
}

RunConfig resolve_config(const CommonOpts& o) {
  RunConfig cfg;
  try {
    if (!o.config_path.empty()) cfg = RunConfig::from_file(o.config_path);
    for (const auto& kv : o.overrides) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw ValueError("override '" + kv + "' is not key=value");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.has_seed) cfg.train.seed = o.seed;
    if (!o.core.empty()) cfg.train.core = o.core;
    if (o.no_image_loss) cfg.train.enable_image_loss = false;
    if (o.no_audio_loss) cfg.train.enable_audio_loss = false;
  } catch (const std::exception& e) {
    throw ValidationFailure(e.what());
  }
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw ValueError("cannot write '" + path + "'");
  f << text;
}

void export_spectro_pngs(const fs::path& dir, const std::string& prefix,
                         const SpectroImage& img) {
  const int s = img.image_size;
  RTensor re(Shape{s, s}, std::vector<double>(img.image.re.data.begin(),
                                              img.image.re.data.begin() + s * s));
  RTensor im(Shape{s, s}, std::vector<double>(img.image.im.data.begin(),
                                              img.image.im.data.begin() + s * s));
  RTensor ab(Shape{s, s});
  for (int64_t i = 0; i < ab.numel(); ++i) ab[i] = std::hypot(re[i], im[i]);
  export_plane_png((dir / (prefix + "_real.png")).string(), re, false);
  export_plane_png((dir / (prefix + "_imag.png")).string(), im, false);
  export_plane_png((dir / (prefix + "_abs.png")).string(), ab, true);
}

std::string eval_table(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "clip" << std::right << std::setw(12) << "SDR_in(dB)"
     << std::setw(13) << "SDR_out(dB)" << std::setw(9) << "SSIM3" << "\n";
  double acc_in = 0, acc_out = 0, acc_ssim = 0;
  os << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    os << std::left << std::setw(24) << r.name << std::right << std::setw(12) << r.sdr_noisy
       << std::setw(13) << r.sdr_denoised << std::setw(9) << r.ssim3 << "\n";
    acc_in += r.sdr_noisy;
    acc_out += r.sdr_denoised;
    acc_ssim += r.ssim3;
  }
  const auto n = static_cast<double>(rows.size());
  os << std::left << std::setw(24) << "aggregate" << std::right << std::setw(12) << acc_in / n
     << std::setw(13) << acc_out / n << std::setw(9) << acc_ssim / n << "\n";
  return os.str();
}

std::string eval_tsv(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "name\tsdr_noisy\tsdr_denoised\tssim3\n";
  double acc_in = 0, acc_out = 0, acc_ssim = 0;
  for (const auto& r : rows) {
    os << r.name << "\t" << r.sdr_noisy << "\t" << r.sdr_denoised << "\t" << r.ssim3 << "\n";
    acc_in += r.sdr_noisy;
    acc_out += r.sdr_denoised;
    acc_ssim += r.ssim3;
  }
  const auto n = static_cast<double>(rows.size());
  os << "aggregate\t" << acc_in / n << "\t" << acc_out / n << "\t" << acc_ssim / n << "\n";
  return os.str();
}

// -------------------------------------------------------------------------
// subcommands
// -------------------------------------------------------------------------

int cmd_train(const CommonOpts& common, const std::string& noisy_dir,
              const std::string& clean_dir, const std::string& out_dir) {
  RunConfig cfg = resolve_config(common);
  if (!noisy_dir.empty()) cfg.noisy_dir = noisy_dir;
  if (!clean_dir.empty()) cfg.clean_dir = clean_dir;
  if (!out_dir.empty()) cfg.run_dir = out_dir;

  Dataset data;
  try {
    cfg.validate();
    if (cfg.noisy_dir.empty() || cfg.clean_dir.empty())
      throw ValueError("train: --noisy and --clean directories are required");
    data = load_paired_wavs(cfg.noisy_dir, cfg.clean_dir, cfg.stft);
  } catch (const std::exception& e) {
    throw ValidationFailure(e.what());
  }

  fs::create_directories(cfg.run_dir);
  write_text((fs::path(cfg.run_dir) / "config.resolved").string(), cfg.to_text());

  Trainer trainer(cfg, std::move(data));
  std::ofstream log((fs::path(cfg.run_dir) / "train.log").string());
  std::cout << "training " << trainer.total_steps() << " steps on "
            << trainer.data().clips.size() << " pairs (core=" << cfg.train.core << ")\n";
  auto t_prev = std::chrono::steady_clock::now();
  trainer.run([&](int64_t step, const LossReport& r) {
    const auto now = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - t_prev).count();
    t_prev = now;
    log << r.to_line(step, ms) << "\n";
    if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0)
      save_checkpoint(trainer.make_checkpoint(),
                      (fs::path(cfg.run_dir) / ("ckpt_" + std::to_string(step) + ".bin")).string());
    if (step == 1 || step % 25 == 0 || step == trainer.total_steps())
      std::cout << "step " << step << "/" << trainer.total_steps() << " total=" << r.total
                << "\n";
  });
  save_checkpoint(trainer.make_checkpoint(),
                  (fs::path(cfg.run_dir) / "ckpt_final.bin").string());

  const auto rows = evaluate_dataset(trainer.model(), trainer.data(), cfg.stft);
  write_text((fs::path(cfg.run_dir) / "metrics.txt").string(), eval_tsv(rows));
  std::cout << eval_table(rows);
  return kExitOk;
}

int cmd_denoise(const CommonOpts& common, const std::string& ckpt_path, const std::string& in_wav,
                const std::string& out_wav, bool export_images, const std::string& image_dir,
                const std::string& clean_wav) {
  Checkpoint ckpt;
  RunConfig cfg;
  AudioClip noisy;
  AudioClip clean;
  bool have_clean = false;
  try {
    ckpt = load_checkpoint(ckpt_path);
    cfg = RunConfig::from_text(ckpt.config_text);
    if (!common.config_path.empty() || !common.overrides.empty()) {
      const RunConfig requested = resolve_config(common);
      const auto diff = config_diff(cfg, requested);
      if (!diff.empty()) {
        std::string msg = "checkpoint/config mismatch:";
        for (const auto& d : diff) msg += "\n  " + d;
        throw ValueError(msg);
      }
    }
    noisy = read_wav(in_wav);
    if (noisy.length() < cfg.stft.image_size)
      throw ValueError("input shorter than " + std::to_string(cfg.stft.image_size) +
                       " samples");
    if (!clean_wav.empty()) {
      clean = read_wav(clean_wav);
      have_clean = true;
    }
  } catch (const std::exception& e) {
    throw ValidationFailure(e.what());
  }

  auto model = make_core(cfg);
  model->params().load(ckpt.tensors);

  const SpectroImage noisy_img = stft_image(noisy, cfg.stft);
  const SpectroImage gen_img = generate_image(*model, noisy_img);
  AudioClip denoised = istft_audio(gen_img);
  write_wav(denoised, out_wav);
  std::cout << "wrote " << out_wav << " (" << denoised.length() << " samples @ "
            << denoised.sample_rate << " Hz)\n";
  if (have_clean) {
    std::cout << std::fixed << std::setprecision(3)
              << "SDR vs clean: noisy " << sdr_metric(noisy.samples, clean.samples)
              << " dB, denoised " << sdr_metric(denoised.samples, clean.samples) << " dB\n";
  }
  if (export_images) {
    const fs::path dir = image_dir.empty() ? fs::path(out_wav).parent_path() : fs::path(image_dir);
    fs::create_directories(dir.empty() ? "." : dir);
    export_spectro_pngs(dir, "noisy", noisy_img);
    export_spectro_pngs(dir, "generated", gen_img);
    if (have_clean) export_spectro_pngs(dir, "clean", stft_image(clean, cfg.stft));
    std::cout << "exported " << (have_clean ? 9 : 6) << " PNGs to " << dir.string() << "\n";
  }
  return kExitOk;
}

int cmd_eval(const CommonOpts& common, const std::string& ckpt_path, const std::string& noisy_dir,
             const std::string& clean_dir, const std::string& out_path) {
  Checkpoint ckpt;
  RunConfig cfg;
  Dataset data;
  try {
    ckpt = load_checkpoint(ckpt_path);
    cfg = RunConfig::from_text(ckpt.config_text);
    if (!common.config_path.empty() || !common.overrides.empty()) {
      const RunConfig requested = resolve_config(common);
      const auto diff = config_diff(cfg, requested);
      if (!diff.empty()) {
        std::string msg = "checkpoint/config mismatch:";
        for (const auto& d : diff) msg += "\n  " + d;
        throw ValueError(msg);
      }
    }
    data = load_paired_wavs(noisy_dir, clean_dir, cfg.stft);
  } catch (const std::exception& e) {
    throw ValidationFailure(e.what());
  }

  auto model = make_core(cfg);
  model->params().load(ckpt.tensors);
  std::vector<EvalRow> rows;
  for (size_t i = 0; i < data.clips.size(); ++i) {
    Dataset one;
    one.clips.push_back(data.clips[i]);
    auto r = evaluate_dataset(*model, one, cfg.stft);
    std::cout << "evaluated " << data.clips[i].name << " (" << (i + 1) << "/"
              << data.clips.size() << ")\n";
    rows.push_back(r[0]);
  }
  std::cout << eval_table(rows);
  if (!out_path.empty()) write_text(out_path, eval_tsv(rows));
  return kExitOk;
}

int cmd_ablate(const CommonOpts& common, const std::string& noisy_dir,
               const std::string& clean_dir, int steps, int synth_count, int64_t synth_length,
               double synth_noise, const std::string& out_path) {
  RunConfig cfg = resolve_config(common);
  Dataset data;
  try {
    cfg.stft.validate();
    if (!noisy_dir.empty() && !clean_dir.empty()) {
      data = load_paired_wavs(noisy_dir, clean_dir, cfg.stft);
    } else {
      data = make_synthetic_dataset(cfg.stft, synth_count, synth_length, 16000,
                                    cfg.train.seed + 17, synth_noise);
      std::cout << "using synthetic toy set: " << synth_count << " pairs of " << synth_length
                << " samples\n";
    }
  } catch (const std::exception& e) {
    throw ValidationFailure(e.what());
  }

  const AblationResult result = run_ablation(cfg, data, steps, &std::cout);
  const std::string table = render_ablation_table(result);
  std::cout << table;
  // soft expectation: the combined objective should not trail its parts (logged only)
  const auto find = [&](const std::string& l) {
    for (const auto& c : result.cells)
      if (c.label == l) return c.sdr;
    return 0.0;
  };
  if (find("C+I+A") + 1e-9 < std::max(find("C+I"), find("C+A")))
    std::cout << "note: C+I+A trails a single-loss C variant on this toy set\n";
  if (!out_path.empty()) write_text(out_path, table);
  return kExitOk;
}

int cmd_make_toy(const std::string& out_dir, int count, int64_t length, int sample_rate,
                 double noise_sigma, uint64_t seed, int image_size, double amplitude,
                 int tones) {
  StftConfig stft;
  stft.image_size = image_size;
  stft.n_fft = 2 * image_size - 1;
  stft.win_length = std::max(2, (1000 * stft.n_fft) / 1023);
  try {
    stft.validate();
    if (length < image_size) throw ValueError("length must be >= image_size");
  } catch (const std::exception& e) {
    throw ValidationFailure(e.what());
  }
  const Dataset ds = make_synthetic_dataset(stft, count, length, sample_rate, seed, noise_sigma,
                                            amplitude, tones);
  fs::create_directories(fs::path(out_dir) / "noisy");
  fs::create_directories(fs::path(out_dir) / "clean");
  for (const auto& pc : ds.clips) {
    write_wav(pc.noisy, (fs::path(out_dir) / "noisy" / pc.name).string());
    write_wav(pc.clean, (fs::path(out_dir) / "clean" / pc.name).string());
  }
  std::cout << "wrote " << count << " pairs under " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"complex spectrogram denoiser"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string noisy_dir, clean_dir, out_dir, ckpt_path, in_wav, out_wav, clean_wav, image_dir;
  std::string eval_out, ablate_out;
  bool export_images = false;
  int ablate_steps = 120, synth_count = 4, sample_rate = 16000;
  int64_t synth_length = 4096;
  double synth_noise = 0.3;
  int toy_image_size = 64;
  uint64_t toy_seed = 7;
  double toy_amplitude = 1.0;
  int toy_tones = 2;

  auto* train = app.add_subcommand("train", "train a denoiser on paired noisy/clean WAVs");
  add_common(train, common);
  train->add_option("--noisy", noisy_dir, "directory of noisy WAVs");
  train->add_option("--clean", clean_dir, "directory of clean WAVs (matching basenames)");
  train->add_option("--out", out_dir, "run directory");
  train->add_option("--epochs", common.overrides,
                    "epochs over the dataset (shorthand for --set epochs=N)")
      ->transform([](std::string s) { return "epochs=" + s; });
  train->add_option("--max-steps", common.overrides, "optimizer step cap")
      ->transform([](std::string s) { return "max_steps=" + s; });

  auto* denoise = app.add_subcommand("denoise", "denoise one WAV with a trained checkpoint");
  add_common(denoise, common);
  denoise->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  denoise->add_option("--in", in_wav, "noisy input WAV")->required();
  denoise->add_option("--out", out_wav, "denoised output WAV")->required();
  denoise->add_flag("--export-images", export_images,
                    "write real/imag/abs PNGs of the noisy and generated images");
  denoise->add_option("--image-dir", image_dir, "directory for exported PNGs");
  denoise->add_option("--clean", clean_wav, "clean reference WAV (adds SDR report + PNGs)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on paired WAV directories");
  add_common(eval, common);
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--noisy", noisy_dir, "directory of noisy WAVs")->required();
  eval->add_option("--clean", clean_dir, "directory of clean WAVs")->required();
  eval->add_option("--out", eval_out, "structured metrics output path");

  auto* ablate = app.add_subcommand("ablate", "run the six core x loss ablation cells");
  add_common(ablate, common);
  ablate->add_option("--noisy", noisy_dir, "directory of noisy WAVs");
  ablate->add_option("--clean", clean_dir, "directory of clean WAVs");
  ablate->add_option("--steps", ablate_steps, "training steps per cell");
  ablate->add_option("--synthetic-count", synth_count, "synthetic pairs when no data given");
  ablate->add_option("--synthetic-length", synth_length, "synthetic clip length in samples");
  ablate->add_option("--synthetic-noise", synth_noise, "synthetic noise sigma");
  ablate->add_option("--out", ablate_out, "table output path");

  auto* make_toy = app.add_subcommand("make-toy", "write a synthetic noisy/clean WAV dataset");
  make_toy->add_option("--out", out_dir, "output directory (noisy/ and clean/)")->required();
  make_toy->add_option("--count", synth_count, "number of pairs");
  make_toy->add_option("--length", synth_length, "samples per clip");
  make_toy->add_option("--sample-rate", sample_rate, "sample rate in Hz");
  make_toy->add_option("--noise", synth_noise, "noise sigma");
  make_toy->add_option("--seed", toy_seed, "generator seed");
  make_toy->add_option("--image-size", toy_image_size, "target spectrogram size");
  make_toy->add_option("--amplitude", toy_amplitude, "clean signal amplitude scale");
  make_toy->add_option("--tones", toy_tones, "sines per clip");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (train->parsed()) return cmd_train(common, noisy_dir, clean_dir, out_dir);
    if (denoise->parsed())
      return cmd_denoise(common, ckpt_path, in_wav, out_wav, export_images, image_dir,
                         clean_wav);
    if (eval->parsed()) return cmd_eval(common, ckpt_path, noisy_dir, clean_dir, eval_out);
    if (ablate->parsed())
      return cmd_ablate(common, noisy_dir, clean_dir, ablate_steps, synth_count, synth_length,
                        synth_noise, ablate_out);
    if (make_toy->parsed())
      return cmd_make_toy(out_dir, synth_count, synth_length, sample_rate, synth_noise, toy_seed,
                          toy_image_size, toy_amplitude, toy_tones);
  } catch (const ValidationFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace csd
