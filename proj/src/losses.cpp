#include <cmath>
#include <limits>
#include <sstream>

#include "csdenoise/losses.hpp"

namespace csd {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kRangeFloor = 1e-3;

std::vector<double> gaussian_kernel(int len, double sigma) {
  std::vector<double> k(len);
  const double c = (len - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < len; ++i) {
    k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace

std::string LossReport::to_line(int64_t step, double wall_ms) const {
  std::ostringstream os;
  os.precision(10);
  os << "step=" << step;
  os << " lf_real=" << real.l_f << " ls_real=" << real.l_s << " ld_real=" << real.l_d;
  os << " lf_imag=" << imag.l_f << " ls_imag=" << imag.l_s << " ld_imag=" << imag.l_d;
  os << " lf_abs=" << abs.l_f << " ls_abs=" << abs.l_s << " ld_abs=" << abs.l_d;
  os << " l_im_total=" << l_im_total << " l_a=" << l_a << " l_sdr=" << l_sdr << " l_r=" << l_r;
  os << " total=" << total << " wall_ms=" << wall_ms;
  return os.str();
}

void LossReport::check_identities(double alpha, bool image_on, bool audio_on) const {
  const double kinds = real.total() + imag.total() + abs.total();
  if (std::abs(kinds - l_im_total) > 1e-6)
    throw ValueError("loss report: l_im_total " + std::to_string(l_im_total) +
                     " != sum of kinds " + std::to_string(kinds));
  const double expect =
      alpha * (image_on ? l_im_total : 0.0) + (1.0 - alpha) * (audio_on ? l_r : 0.0);
  if (std::abs(expect - total) > 1e-6)
    throw ValueError("loss report: total " + std::to_string(total) + " != objective " +
                     std::to_string(expect));
  const double lr_sum = l_a + l_sdr;
  if (audio_on && std::abs(lr_sum - l_r) > 1e-6)
    throw ValueError("loss report: l_r != l_a + l_sdr");
}

// ---------------------------------------------------------------------------

FeatureExtractor::FeatureExtractor(int in_channels, uint64_t seed) : in_channels_(in_channels) {
  std::mt19937_64 rng(seed);
  const int chans[5] = {in_channels, 8, 16, 32, 64};
  for (int layer = 0; layer < 4; ++layer) {
    const Shape ws{chans[layer + 1], chans[layer], 3, 3};
    const double sigma = std::sqrt(2.0 / (9.0 * chans[layer]));
    kernels_.push_back(Var::constant(CTensor::real(randn(ws, rng, sigma))));
  }
}

Var FeatureExtractor::features(const Var& image) const {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != in_channels_)
    throw ShapeError("feature extractor: expected [N," + std::to_string(in_channels_) +
                     ",H,W], got " + shape_str(s));
  Var h = image;
  for (const auto& w : kernels_) h = relu(conv2d(h, w, Var(), /*stride=*/2, /*pad=*/1));
  const Shape& hs = h.shape();
  return reshape(h, Shape{hs[0], hs[1] * hs[2] * hs[3]});
}

// ---------------------------------------------------------------------------

Var l1_loss(const Var& pred, const Var& truth) {
  if (pred.shape() != truth.shape())
    throw ShapeError("l1_loss: shapes " + shape_str(pred.shape()) + " vs " +
                     shape_str(truth.shape()));
  return mean(cabs(sub(pred, truth)));
}

namespace {

// SSIM of one [H, W] real pair. The stabilizer constants come from the pair
// dynamic range, max - min over both images (floored); R is held constant by
// the gradient, so the loss has kinks only at the extreme-value pixels, the
// same measure-zero exclusion cabs has at its origin.
Var ssim_single(const Var& x, const Var& y) {
  const Shape& s = x.shape();
  const int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h < kSsimWindow || w < kSsimWindow)
    throw ShapeError("ssim: image " + shape_str(s) + " smaller than the 11x11 window");
  const double range =
      std::max(x.value().re.max_value(), y.value().re.max_value()) -
      std::min(x.value().re.min_value(), y.value().re.min_value());
  const double r = std::max(range, kRangeFloor);
  const double c1 = (0.01 * r) * (0.01 * r);
  const double c2 = (0.03 * r) * (0.03 * r);
  static const std::vector<double> kernel = gaussian_kernel(kSsimWindow, kSsimSigma);

  Var x4 = reshape(x, Shape{1, 1, h, w});
  Var y4 = reshape(y, Shape{1, 1, h, w});
  Var mu_x = sepconv_valid(x4, kernel);
  Var mu_y = sepconv_valid(y4, kernel);
  Var sxx = sub(sepconv_valid(cmul(x4, x4), kernel), cmul(mu_x, mu_x));
  Var syy = sub(sepconv_valid(cmul(y4, y4), kernel), cmul(mu_y, mu_y));
  Var sxy = sub(sepconv_valid(cmul(x4, y4), kernel), cmul(mu_x, mu_y));

  Var num = cmul(add_scalar(scale(cmul(mu_x, mu_y), 2.0), c1), add_scalar(scale(sxy, 2.0), c2));
  Var den = cmul(add_scalar(add(cmul(mu_x, mu_x), cmul(mu_y, mu_y)), c1),
                 add_scalar(add(sxx, syy), c2));
  return mean(rdiv(num, den));
}

Var slice_image(const Var& batch, int64_t n, int64_t c) {
  const Shape& s = batch.shape();
  const int64_t hw = s[2] * s[3];
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(hw));
  const int64_t base = (n * s[1] + c) * hw;
  for (int64_t i = 0; i < hw; ++i) idx->push_back(base + i);
  return gather(batch, idx, Shape{s[2], s[3]});
}

}  // namespace

Var ssim(const Var& x, const Var& y) {
  if (x.shape() != y.shape())
    throw ShapeError("ssim: shapes " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  const Shape& s = x.shape();
  if (s.size() == 2) return ssim_single(x, y);
  if (s.size() != 4) throw ShapeError("ssim: expected [N,C,H,W] or [H,W], got " + shape_str(s));
  Var acc;
  for (int64_t n = 0; n < s[0]; ++n)
    for (int64_t c = 0; c < s[1]; ++c) {
      Var v = ssim_single(slice_image(x, n, c), slice_image(y, n, c));
      acc = acc.defined() ? add(acc, v) : v;
    }
  return scale(acc, 1.0 / static_cast<double>(s[0] * s[1]));
}

Var ssim_loss(const Var& pred, const Var& truth) {
  return add_scalar(neg(ssim(pred, truth)), 1.0);
}

Var detail_loss(const Var& pred, const Var& truth, const FeatureExtractor& fe) {
  if (pred.shape() != truth.shape())
    throw ShapeError("detail_loss: shapes " + shape_str(pred.shape()) + " vs " +
                     shape_str(truth.shape()));
  Var fp = fe.features(pred);
  Var ft;
  {
    NoGradGuard ng;  // gradient flows through pred only
    ft = fe.features(Var::constant(truth.value()));
  }
  return l1_loss(fp, ft);
}

// ---------------------------------------------------------------------------

namespace {

struct KindViews {
  Var pred, truth;
  LossReport::Kind* slot;
};

}  // namespace

Var image_loss(const Var& pred, const Var& truth, const FeatureExtractor& fe,
               LossReport* report) {
  if (pred.shape() != truth.shape())
    throw ShapeError("image_loss: shapes " + shape_str(pred.shape()) + " vs " +
                     shape_str(truth.shape()));
  LossReport scratch;
  LossReport& rep = report ? *report : scratch;
  const KindViews kinds[3] = {
      {creal(pred), creal(truth), &rep.real},
      {cimag(pred), cimag(truth), &rep.imag},
      {cabs(pred), cabs(truth), &rep.abs},
  };
  Var total;
  for (const auto& kv : kinds) {
    Var lf = l1_loss(kv.pred, kv.truth);
    Var ls = ssim_loss(kv.pred, kv.truth);
    Var ld = detail_loss(kv.pred, kv.truth, fe);
    kv.slot->l_f = lf.item();
    kv.slot->l_s = ls.item();
    kv.slot->l_d = ld.item();
    Var kind_total = add(add(lf, ls), ld);
    total = total.defined() ? add(total, kind_total) : kind_total;
  }
  rep.l_im_total = total.item();
  return total;
}

// ---------------------------------------------------------------------------

double sdr_metric(const std::vector<double>& y_hat, const std::vector<double>& y) {
  if (y_hat.size() != y.size())
    throw ShapeError("sdr: lengths " + std::to_string(y_hat.size()) + " vs " +
                     std::to_string(y.size()));
  double ref = 0.0, err = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    ref += y[i] * y[i];
    const double e = y_hat[i] - y[i];
    err += e * e;
  }
  if (ref == 0.0) throw ValueError("sdr: reference signal is all zero");
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(ref / err);
}

namespace {

void check_sdr_pre(const Var& y_hat, const Var& y) {
  if (y_hat.shape() != y.shape())
    throw ShapeError("sdr: shapes " + shape_str(y_hat.shape()) + " vs " +
                     shape_str(y.shape()));
  double ref = 0.0;
  for (double v : y.value().re.data) ref += v * v;
  if (ref == 0.0) throw ValueError("sdr: reference signal is all zero");
}

double err_energy(const Var& y_hat, const Var& y) {
  double err = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    const double e = y_hat.value().re[i] - y.value().re[i];
    err += e * e;
  }
  return err;
}

constexpr double kTenOverLn10 = 4.342944819032518;

}  // namespace

Var sdr_db(const Var& y_hat, const Var& y) {
  check_sdr_pre(y_hat, y);
  if (err_energy(y_hat, y) == 0.0)
    throw ValueError("sdr: exact reconstruction has unbounded SDR in loss context");
  Var e = sub(y_hat, y);
  Var ratio = rdiv(sum(cmul(y, y)), sum(cmul(e, e)));
  return scale(log_real(ratio), kTenOverLn10);
}

Var sdr_loss(const Var& y_hat, const Var& y) {
  check_sdr_pre(y_hat, y);
  if (err_energy(y_hat, y) == 0.0) {
    // clamp path: SDR pinned at 60 dB, constant with zero gradient
    return Var::constant(CTensor::scalar(kSdrUpperBound - kSdrClampDb));
  }
  Var clamped = clamp_max_real(sdr_db(y_hat, y), kSdrClampDb);
  return add_scalar(neg(clamped), kSdrUpperBound);
}

Var reconstruction_loss(const Var& y_hat, const Var& y, LossReport* report) {
  Var la = l1_loss(y_hat, y);
  Var ls = sdr_loss(y_hat, y);
  Var lr = add(la, ls);
  if (report) {
    report->l_a = la.item();
    report->l_sdr = ls.item();
    report->l_r = lr.item();
  }
  return lr;
}

Var total_objective(const Var& image_part, const Var& recon_part, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValueError("total_objective: alpha " + std::to_string(alpha) + " outside [0,1]");
  return add(scale(image_part, alpha), scale(recon_part, 1.0 - alpha));
}

}  // namespace csd
