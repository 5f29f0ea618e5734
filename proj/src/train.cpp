#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "csdenoise/train.hpp"
#include "csdenoise/wav.hpp"

namespace csd {

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t stream, uint64_t counter) {
  uint64_t z = seed ^ (stream * 0x9E3779B97F4A7C15ULL) ^ (counter + 0x632BE59BD9B4E019ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr uint64_t kStreamShuffle = 1;
constexpr uint64_t kStreamDropout = 2;
constexpr uint64_t kStreamModel = 3;

}  // namespace

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Var> params, double lr, double clip_norm, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), clip_(clip_norm), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

double grad_global_norm(const std::vector<Var>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad().re.data) sq += g * g;
  }
  return std::sqrt(sq);
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad().re.data)
      if (!std::isfinite(g))
        throw ValueError("adam: non-finite gradient in parameter '" + p.name() + "'");
  }
  double scale_f = 1.0;
  if (clip_ > 0.0) {
    const double norm = grad_global_norm(params_);
    if (norm > clip_) scale_f = clip_ / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    RTensor& w = params_[i].node()->value.re;
    RTensor& m = m_[i];
    RTensor& v = v_[i];
    const bool has = params_[i].has_grad();
    const RTensor* g = has ? &params_[i].grad().re : nullptr;
    for (int64_t j = 0; j < w.numel(); ++j) {
      const double gj = has ? (*g)[j] * scale_f : 0.0;
      m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
      v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::map<std::string, RTensor> Adam::dump_state() const {
  std::map<std::string, RTensor> out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out.emplace("adam.m." + params_[i].name(), m_[i]);
    out.emplace("adam.v." + params_[i].name(), v_[i]);
  }
  return out;
}

void Adam::load_state(const std::map<std::string, RTensor>& tensors, int64_t t) {
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto mi = tensors.find("adam.m." + params_[i].name());
    const auto vi = tensors.find("adam.v." + params_[i].name());
    if (mi == tensors.end() || vi == tensors.end())
      throw ValueError("checkpoint missing optimizer state for '" + params_[i].name() + "'");
    if (mi->second.shape != params_[i].shape() || vi->second.shape != params_[i].shape())
      throw ShapeError("optimizer state shape mismatch for '" + params_[i].name() + "'");
    m_[i] = mi->second;
    v_[i] = vi->second;
  }
  t_ = t;
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

Dataset load_paired_wavs(const std::string& noisy_dir, const std::string& clean_dir,
                         const StftConfig& cfg) {
  namespace fs = std::filesystem;
  auto list_wavs = [](const std::string& dir) {
    if (!fs::is_directory(dir)) throw ValueError("not a directory: '" + dir + "'");
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".wav")
        names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
  };
  const auto noisy_names = list_wavs(noisy_dir);
  const auto clean_names = list_wavs(clean_dir);

  std::vector<std::string> unmatched;
  for (const auto& n : noisy_names)
    if (!std::binary_search(clean_names.begin(), clean_names.end(), n))
      unmatched.push_back("missing clean counterpart: " + n);
  for (const auto& n : clean_names)
    if (!std::binary_search(noisy_names.begin(), noisy_names.end(), n))
      unmatched.push_back("missing noisy counterpart: " + n);
  if (!unmatched.empty()) {
    std::string msg = "unpaired files between '" + noisy_dir + "' and '" + clean_dir + "':";
    for (const auto& u : unmatched) msg += "\n  " + u;
    throw ValueError(msg);
  }
  if (noisy_names.empty()) throw ValueError("no .wav files in '" + noisy_dir + "'");

  Dataset ds;
  std::vector<std::string> mismatches;
  for (const auto& n : noisy_names) {
    PairedClip pc;
    pc.name = n;
    pc.noisy = read_wav((fs::path(noisy_dir) / n).string());
    pc.clean = read_wav((fs::path(clean_dir) / n).string());
    if (pc.noisy.length() != pc.clean.length())
      mismatches.push_back(n + ": noisy " + std::to_string(pc.noisy.length()) + " vs clean " +
                           std::to_string(pc.clean.length()) + " samples");
    ds.clips.push_back(std::move(pc));
  }
  if (!mismatches.empty()) {
    std::string msg = "length mismatches in paired data:";
    for (const auto& m : mismatches) msg += "\n  " + m;
    throw ValueError(msg);
  }
  for (auto& pc : ds.clips) {
    pc.noisy_img = stft_image(pc.noisy, cfg);
    pc.clean_img = stft_image(pc.clean, cfg);
  }
  return ds;
}

Dataset make_synthetic_dataset(const StftConfig& cfg, int n_clips, int64_t length,
                               int sample_rate, uint64_t seed, double noise_sigma,
                               double amplitude, int tones) {
  Dataset ds;
  std::mt19937_64 rng(seed);
  // bin-centred tones (even DFT index) keep the spectral rows slowly varying
  // along time, so a toy run exercises denoising rather than aliasing
  const int max_k = std::max(2, cfg.freq_bins() / 3);
  std::uniform_int_distribution<int> bin(1, max_k / 2);
  std::uniform_real_distribution<double> phase(0.0, 6.28318530717958647692);
  std::uniform_real_distribution<double> amp(0.2 * amplitude, 0.45 * amplitude);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  for (int i = 0; i < n_clips; ++i) {
    PairedClip pc;
    pc.name = "toy" + std::to_string(i) + ".wav";
    pc.clean.sample_rate = sample_rate;
    pc.noisy.sample_rate = sample_rate;
    pc.clean.samples.resize(static_cast<size_t>(length));
    for (int64_t t = 0; t < length; ++t) pc.clean.samples[t] = 0.0;
    for (int tone = 0; tone < tones; ++tone) {
      const double f = 2.0 * bin(rng) / cfg.n_fft;
      const double p = phase(rng);
      const double a = amp(rng);
      for (int64_t t = 0; t < length; ++t)
        pc.clean.samples[t] += a * std::sin(6.28318530717958647692 * f * t + p);
    }
    pc.noisy.samples = pc.clean.samples;
    for (auto& v : pc.noisy.samples) v += noise(rng);
    pc.noisy_img = stft_image(pc.noisy, cfg);
    pc.clean_img = stft_image(pc.clean, cfg);
    ds.clips.push_back(std::move(pc));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// model factory + inference helpers
// ---------------------------------------------------------------------------

std::unique_ptr<CoreModel> make_core(const RunConfig& cfg) {
  const uint64_t seed = mix_seed(cfg.train.seed, kStreamModel, 0);
  if (cfg.train.core == "unet")
    return std::make_unique<ComplexUnet>(cfg.swin.in_channels, cfg.train.unet_channels, seed);
  return std::make_unique<SwinDenoiser>(cfg.swin, seed);
}

SpectroImage generate_image(CoreModel& model, const SpectroImage& noisy) {
  NoGradGuard ng;
  const Shape& s = noisy.image.shape();
  CTensor batch(RTensor(Shape{1, s[0], s[1], s[2]}, noisy.image.re.data),
                RTensor(Shape{1, s[0], s[1], s[2]}, noisy.image.im.data));
  Var out = model.forward_inference(Var::constant(std::move(batch)));
  SpectroImage gen = noisy;
  gen.image = CTensor(RTensor(Shape{s[0], s[1], s[2]}, out.value().re.data),
                      RTensor(Shape{s[0], s[1], s[2]}, out.value().im.data));
  return gen;
}

AudioClip denoise_clip(CoreModel& model, const AudioClip& noisy, const StftConfig& cfg) {
  const SpectroImage img = stft_image(noisy, cfg);
  return istft_audio(generate_image(model, img));
}

double ssim_three_kinds(const CTensor& gen, const CTensor& truth) {
  NoGradGuard ng;
  const Shape& s = gen.shape();
  Shape s4 = s.size() == 3 ? Shape{1, s[0], s[1], s[2]} : s;
  Var g = Var::constant(CTensor(RTensor(s4, gen.re.data), RTensor(s4, gen.im.data)));
  Var t = Var::constant(CTensor(RTensor(s4, truth.re.data), RTensor(s4, truth.im.data)));
  const double s_re = ssim(creal(g), creal(t)).item();
  const double s_im = ssim(cimag(g), cimag(t)).item();
  const double s_ab = ssim(cabs(g), cabs(t)).item();
  return (s_re + s_im + s_ab) / 3.0;
}

std::vector<EvalRow> evaluate_dataset(CoreModel& model, const Dataset& data,
                                      const StftConfig& cfg) {
  std::vector<EvalRow> rows;
  for (const auto& pc : data.clips) {
    EvalRow row;
    row.name = pc.name;
    const SpectroImage gen = generate_image(model, pc.noisy_img);
    const AudioClip denoised = istft_audio(gen);
    row.sdr_denoised = sdr_metric(denoised.samples, pc.clean.samples);
    row.sdr_noisy = sdr_metric(pc.noisy.samples, pc.clean.samples);
    row.ssim3 = ssim_three_kinds(gen.image, pc.clean_img.image);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const RunConfig& cfg, Dataset data)
    : cfg_(cfg), data_(std::move(data)), fe_(cfg.swin.in_channels) {
  cfg_.validate();
  if (data_.clips.empty()) throw ValueError("trainer: empty dataset");
  for (const auto& pc : data_.clips)
    if (pc.noisy.length() != pc.clean.length())
      throw ValueError("trainer: length mismatch in pair '" + pc.name + "'");
  model_ = make_core(cfg_);
  adam_ = std::make_unique<Adam>(model_->params().all(), cfg_.train.learning_rate,
                                 cfg_.train.clip_norm);
}

int64_t Trainer::steps_per_epoch() const {
  const auto n = static_cast<int64_t>(data_.clips.size());
  const int64_t b = cfg_.train.batch_size;
  return (n + b - 1) / b;
}

int64_t Trainer::total_steps() const {
  const int64_t by_epochs =
      cfg_.train.epochs > 0 ? cfg_.train.epochs * steps_per_epoch() : 0;
  if (cfg_.train.max_steps > 0 && by_epochs > 0)
    return std::min<int64_t>(cfg_.train.max_steps, by_epochs);
  return cfg_.train.max_steps > 0 ? cfg_.train.max_steps : by_epochs;
}

std::vector<size_t> Trainer::batch_indices(int64_t step) const {
  const auto n = data_.clips.size();
  const int64_t spe = steps_per_epoch();
  const int64_t epoch = step / spe;
  const int64_t pos = step % spe;
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(cfg_.train.seed, kStreamShuffle, static_cast<uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  const size_t b = static_cast<size_t>(cfg_.train.batch_size);
  const size_t lo = static_cast<size_t>(pos) * b;
  const size_t hi = std::min(n, lo + b);
  return {order.begin() + static_cast<int64_t>(lo), order.begin() + static_cast<int64_t>(hi)};
}

LossReport Trainer::step() {
  const std::vector<size_t> batch = batch_indices(step_);
  const auto bs = static_cast<int64_t>(batch.size());
  const int s = cfg_.stft.image_size;
  const int c = cfg_.swin.in_channels;

  CTensor in = CTensor::zeros(Shape{bs, c, s, s});
  CTensor truth = CTensor::zeros(Shape{bs, c, s, s});
  const int64_t plane = static_cast<int64_t>(c) * s * s;
  for (int64_t i = 0; i < bs; ++i) {
    const PairedClip& pc = data_.clips[batch[i]];
    std::copy(pc.noisy_img.image.re.data.begin(), pc.noisy_img.image.re.data.end(),
              in.re.data.begin() + i * plane);
    std::copy(pc.noisy_img.image.im.data.begin(), pc.noisy_img.image.im.data.end(),
              in.im.data.begin() + i * plane);
    std::copy(pc.clean_img.image.re.data.begin(), pc.clean_img.image.re.data.end(),
              truth.re.data.begin() + i * plane);
    std::copy(pc.clean_img.image.im.data.begin(), pc.clean_img.image.im.data.end(),
              truth.im.data.begin() + i * plane);
  }

  ForwardContext ctx;
  ctx.training = true;
  ctx.rng.seed(mix_seed(cfg_.train.seed, kStreamDropout, static_cast<uint64_t>(step_)));
  Var input = Var::constant(std::move(in));
  Var gen = model_->forward(input, ctx);

  LossReport report;
  Var image_part = Var::constant(CTensor::scalar(0.0));
  if (cfg_.train.enable_image_loss)
    image_part = image_loss(gen, Var::constant(std::move(truth)), fe_, &report);

  Var recon_part = Var::constant(CTensor::scalar(0.0));
  if (cfg_.train.enable_audio_loss) {
    Var acc;
    double la = 0.0, lsdr = 0.0, lr = 0.0;
    for (int64_t i = 0; i < bs; ++i) {
      const PairedClip& pc = data_.clips[batch[i]];
      auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(plane));
      for (int64_t j = 0; j < plane; ++j) (*idx)[j] = i * plane + j;
      Var sample = gather(gen, idx, Shape{c, s, s});
      Var audio = image_to_audio_op(sample, pc.noisy_img, cfg_.stft);
      Var clean = Var::constant(
          CTensor::real(RTensor(Shape{pc.clean.length()}, pc.clean.samples)));
      LossReport one;
      Var lr_i = reconstruction_loss(audio, clean, &one);
      la += one.l_a;
      lsdr += one.l_sdr;
      lr += one.l_r;
      acc = acc.defined() ? add(acc, lr_i) : lr_i;
    }
    recon_part = scale(acc, 1.0 / static_cast<double>(bs));
    report.l_a = la / static_cast<double>(bs);
    report.l_sdr = lsdr / static_cast<double>(bs);
    report.l_r = lr / static_cast<double>(bs);
  }

  Var total = total_objective(image_part, recon_part, cfg_.train.alpha);
  report.total = total.item();
  report.check_identities(cfg_.train.alpha, cfg_.train.enable_image_loss,
                          cfg_.train.enable_audio_loss);
  if (!std::isfinite(report.total))
    throw ValueError("trainer: non-finite loss at step " + std::to_string(step_));

  model_->params().zero_grads();
  backward(total);
  adam_->step();
  ++step_;
  return report;
}

void Trainer::run(const std::function<void(int64_t, const LossReport&)>& on_step) {
  const int64_t total = total_steps();
  while (step_ < total) {
    LossReport r = step();
    if (on_step) on_step(step_, r);
  }
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config_text = cfg_.to_text();
  ckpt.step = step_;
  ckpt.tensors = model_->params().dump();
  for (auto& [k, v] : adam_->dump_state()) ckpt.tensors.emplace(k, v);
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  const RunConfig saved = RunConfig::from_text(ckpt.config_text);
  const auto diff = config_diff(saved, cfg_);
  if (!diff.empty()) {
    std::string msg = "checkpoint/config mismatch:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw ValueError(msg);
  }
  model_->params().load(ckpt.tensors);
  adam_->load_state(ckpt.tensors, ckpt.step);
  step_ = ckpt.step;
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

AblationResult run_ablation(const RunConfig& base, const Dataset& data, int steps_per_cell,
                            std::ostream* progress) {
  struct CellCfg {
    std::string label, core;
    bool image, audio;
  };
  const CellCfg cells[6] = {
      {"U+I", "unet", true, false}, {"U+A", "unet", false, true},
      {"U+I+A", "unet", true, true}, {"C+I", "swin", true, false},
      {"C+A", "swin", false, true},  {"C+I+A", "swin", true, true},
  };
  AblationResult result;
  double baseline = 0.0;
  for (const auto& pc : data.clips) baseline += sdr_metric(pc.noisy.samples, pc.clean.samples);
  result.noisy_baseline_sdr = baseline / static_cast<double>(data.clips.size());

  for (const auto& cell : cells) {
    RunConfig cfg = base;
    cfg.train.core = cell.core;
    cfg.train.enable_image_loss = cell.image;
    cfg.train.enable_audio_loss = cell.audio;
    cfg.train.max_steps = steps_per_cell;
    cfg.train.epochs = 0;
    Trainer trainer(cfg, data);
    if (progress) *progress << "[ablate] " << cell.label << ": training " << steps_per_cell
                            << " steps\n";
    trainer.run();
    const auto rows = evaluate_dataset(trainer.model(), data, cfg.stft);
    double sdr = 0.0;
    for (const auto& r : rows) sdr += r.sdr_denoised;
    AblationCell out;
    out.label = cell.label;
    out.sdr = sdr / static_cast<double>(rows.size());
    if (progress) *progress << "[ablate] " << cell.label << ": SDR " << out.sdr << " dB\n";
    result.cells.push_back(std::move(out));
  }
  return result;
}

std::string render_ablation_table(const AblationResult& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "Methods";
  for (const auto& c : r.cells) os << " & " << c.label;
  os << " \\\\\n";
  os << "SDR";
  for (const auto& c : r.cells) os << " & " << c.sdr;
  os << " \\\\\n";
  os << "noisy baseline SDR: " << r.noisy_baseline_sdr << "\n";
  return os.str();
}

}  // namespace csd
