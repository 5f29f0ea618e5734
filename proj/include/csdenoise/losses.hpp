#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csdenoise/ctensor.hpp"

namespace csd {

// Per-batch loss breakdown. Field order in to_line() is the documented log
// schema: step, lf/ls/ld per kind (real, imag, abs), l_im_total, l_a, l_sdr,
// l_r, total, wall_ms.
struct LossReport {
  struct Kind {
    double l_f = 0.0, l_s = 0.0, l_d = 0.0;
    double total() const { return l_f + l_s + l_d; }
  };
  Kind real, imag, abs;
  double l_im_total = 0.0;
  double l_a = 0.0;
  double l_sdr = 0.0;
  double l_r = 0.0;
  double total = 0.0;

  std::string to_line(int64_t step, double wall_ms) const;
  // sum identities (l_im_total vs kinds; total vs alpha mix), tol 1e-6
  void check_identities(double alpha, bool image_on, bool audio_on) const;
};

// Fixed, seeded stack of strided real convolutions producing one flat feature
// vector per image. Stands in for a pretrained perceptual network behind the
// same interface: features(), then L1 in feature space.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(int in_channels = 1, uint64_t seed = 0x7355608);
  // [N, C, H, W] real -> [N, F]
  Var features(const Var& image) const;

 private:
  int in_channels_;
  std::vector<Var> kernels_;  // fixed, non-trainable
};

// mean absolute difference
Var l1_loss(const Var& pred, const Var& truth);

// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), stabilizers
// C1=(0.01 R)^2, C2=(0.03 R)^2 with R the per-pair dynamic range
// (max - min over both images, floored at 1e-3). Inputs [N, C, H, W] real.
Var ssim(const Var& x, const Var& y);
Var ssim_loss(const Var& pred, const Var& truth);  // 1 - ssim

Var detail_loss(const Var& pred, const Var& truth, const FeatureExtractor& fe);

// L_F + L_S + L_D over the real, imaginary and absolute views of a complex
// image pair; fills the per-kind fields and l_im_total of `report`.
Var image_loss(const Var& pred, const Var& truth, const FeatureExtractor& fe,
               LossReport* report);

// SDR(y_hat, y) = 10 log10(||y||^2 / ||y_hat - y||^2), dB.
// Metric form: +inf when y_hat == y exactly; throws on all-zero y.
double sdr_metric(const std::vector<double>& y_hat, const std::vector<double>& y);
Var sdr_db(const Var& y_hat, const Var& y);  // loss context: throws on exact equality

// L_SDR = 20 - min(SDR, 60); the 60 dB clamp keeps (near-)perfect
// reconstructions finite. May go negative when SDR > 20.
Var sdr_loss(const Var& y_hat, const Var& y);

// L_R = L_A + L_SDR; fills l_a, l_sdr, l_r of `report`.
Var reconstruction_loss(const Var& y_hat, const Var& y, LossReport* report);

// L = alpha * image_part + (1 - alpha) * recon_part, alpha in [0, 1]
Var total_objective(const Var& image_part, const Var& recon_part, double alpha);

constexpr double kSdrUpperBound = 20.0;
constexpr double kSdrClampDb = 60.0;

}  // namespace csd
