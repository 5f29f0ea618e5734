#pragma once

#include <functional>
#include <memory>
#include <ostream>

#include "csdenoise/checkpoint.hpp"
#include "csdenoise/config.hpp"
#include "csdenoise/losses.hpp"
#include "csdenoise/signal.hpp"
#include "csdenoise/swin.hpp"

namespace csd {

// Standard Adam over the (real) parameter set, with optional global-norm
// gradient clipping applied before the update. Missing gradients count as
// zero; non-finite gradients abort, naming the parameter.
class Adam {
 public:
  Adam(std::vector<Var> params, double lr, double clip_norm = 0.0, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step();
  int64_t t() const { return t_; }

  std::map<std::string, RTensor> dump_state() const;
  void load_state(const std::map<std::string, RTensor>& tensors, int64_t t);

 private:
  std::vector<Var> params_;
  std::vector<RTensor> m_, v_;
  double lr_, clip_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

// returns the pre-clip global norm
double grad_global_norm(const std::vector<Var>& params);

struct PairedClip {
  std::string name;
  AudioClip noisy, clean;
  SpectroImage noisy_img, clean_img;
};

struct Dataset {
  std::vector<PairedClip> clips;
};

// Matching-basename *.wav pairs; lists every unmatched file and every length
// mismatch before failing.
Dataset load_paired_wavs(const std::string& noisy_dir, const std::string& clean_dir,
                         const StftConfig& cfg);

// clean = random sine mixture, noisy = clean + white noise
Dataset make_synthetic_dataset(const StftConfig& cfg, int n_clips, int64_t length,
                               int sample_rate, uint64_t seed, double noise_sigma,
                               double amplitude = 1.0, int tones = 2);

std::unique_ptr<CoreModel> make_core(const RunConfig& cfg);

// no-grad helpers shared by the CLI and the evaluation paths
SpectroImage generate_image(CoreModel& model, const SpectroImage& noisy);
AudioClip denoise_clip(CoreModel& model, const AudioClip& noisy, const StftConfig& cfg);
double ssim_three_kinds(const CTensor& gen, const CTensor& truth);  // mean over real/imag/abs

struct EvalRow {
  std::string name;
  double sdr_denoised = 0.0;
  double sdr_noisy = 0.0;
  double ssim3 = 0.0;
};
std::vector<EvalRow> evaluate_dataset(CoreModel& model, const Dataset& data,
                                      const StftConfig& cfg);

// One optimizer step per call; deterministic given the config seed. Batch
// order reshuffles per epoch from (seed, epoch); dropout streams derive from
// (seed, step), so resume from a checkpoint replays identically.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, Dataset data);

  LossReport step();
  void run(const std::function<void(int64_t, const LossReport&)>& on_step = {});
  int64_t current_step() const { return step_; }
  int64_t total_steps() const;
  int64_t steps_per_epoch() const;

  CoreModel& model() { return *model_; }
  const RunConfig& config() const { return cfg_; }
  const Dataset& data() const { return data_; }

  Checkpoint make_checkpoint() const;
  void restore(const Checkpoint& ckpt);

 private:
  std::vector<size_t> batch_indices(int64_t step) const;

  RunConfig cfg_;
  Dataset data_;
  std::unique_ptr<CoreModel> model_;
  std::unique_ptr<Adam> adam_;
  FeatureExtractor fe_;
  int64_t step_ = 0;
};

struct AblationCell {
  std::string label;  // U+I, U+A, U+I+A, C+I, C+A, C+I+A
  double sdr = 0.0;
};
struct AblationResult {
  std::vector<AblationCell> cells;
  double noisy_baseline_sdr = 0.0;
};

// the six core x loss configurations on one dataset, Table-layout order
AblationResult run_ablation(const RunConfig& base, const Dataset& data, int steps_per_cell,
                            std::ostream* progress = nullptr);
std::string render_ablation_table(const AblationResult& r);

}  // namespace csd
