#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "csdenoise/signal.hpp"

namespace csd {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kOverlapEps = 1e-12;

// one-size real FFT pair with owned scratch buffers
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    real_ = fftw_alloc_real(n);
    cplx_ = fftw_alloc_complex(n / 2 + 1);
    fwd_ = fftw_plan_dft_r2c_1d(n, real_, cplx_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(n, cplx_, real_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(cplx_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int bins() const { return n_ / 2 + 1; }

  // X[k] = sum_n x[n] e^{-i 2 pi k n / N}
  void forward(const double* x, double* re_out, double* im_out) {
    std::copy(x, x + n_, real_);
    fftw_execute(fwd_);
    for (int k = 0; k < bins(); ++k) {
      re_out[k] = cplx_[k][0];
      im_out[k] = cplx_[k][1];
    }
  }

  // x[n] = (1/N) [A0 + 2 sum_{k>=1} (A_k cos - B_k sin)], B0 ignored
  void inverse(const double* re_in, const double* im_in, double* x_out) {
    for (int k = 0; k < bins(); ++k) {
      cplx_[k][0] = re_in[k];
      cplx_[k][1] = im_in[k];
    }
    cplx_[0][1] = 0.0;
    fftw_execute(inv_);
    const double inv_n = 1.0 / n_;
    for (int n = 0; n < n_; ++n) x_out[n] = real_[n] * inv_n;
  }

 private:
  int n_;
  double* real_;
  fftw_complex* cplx_;
  fftw_plan fwd_, inv_;
};

RealFft& fft_for(int n) {
  static std::map<int, std::unique_ptr<RealFft>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, std::make_unique<RealFft>(n)).first;
  return *it->second;
}

// reflect-padded sample: index may run past either end
double sample_at(const std::vector<double>& x, int64_t i) {
  const auto n = static_cast<int64_t>(x.size());
  if (i < 0) i = -i;
  if (i >= n) {
    const int64_t over = i - (n - 1);
    i = over < n ? n - 1 - over : 0;  // zero past a full reflection
    if (over >= n) return 0.0;
  }
  return x[static_cast<size_t>(i)];
}

struct OverlapPlan {
  RTensor window;
  std::vector<double> wsum;  // squared-window overlap, length (T-1)*hop + n_fft
  int64_t total = 0;
};

OverlapPlan overlap_plan(const StftConfig& cfg, int hop, int frames) {
  OverlapPlan p;
  p.window = build_window(cfg);
  p.total = static_cast<int64_t>(frames - 1) * hop + cfg.n_fft;
  p.wsum.assign(static_cast<size_t>(p.total), 0.0);
  for (int t = 0; t < frames; ++t)
    for (int n = 0; n < cfg.n_fft; ++n)
      p.wsum[static_cast<size_t>(t) * hop + n] += p.window[n] * p.window[n];
  return p;
}

}  // namespace

void StftConfig::validate() const {
  if (image_size < 2) throw ValueError("stft: image_size must be >= 2");
  if (n_fft != 2 * image_size - 1)
    throw ValueError("stft: n_fft must be 2*image_size-1 so the one-sided spectrum has "
                     "image_size bins; got n_fft=" +
                     std::to_string(n_fft) + ", image_size=" + std::to_string(image_size));
  if (win_length <= 0 || win_length > n_fft)
    throw ValueError("stft: win_length must be in (0, n_fft]");
  if (window != "hamming") throw ValueError("stft: unsupported window '" + window + "'");
  if (!center) throw ValueError("stft: only center framing is implemented");
}

RTensor build_window(const StftConfig& cfg) {
  cfg.validate();
  RTensor w(Shape{cfg.n_fft});
  const int off = (cfg.n_fft - cfg.win_length) / 2;
  for (int n = 0; n < cfg.win_length; ++n)
    w[off + n] = 0.54 - 0.46 * std::cos(2.0 * kPi * n / cfg.win_length);
  return w;
}

CTensor stft_matrix(const std::vector<double>& samples, const StftConfig& cfg, int* hop_out,
                    int* frames_out) {
  cfg.validate();
  const auto len = static_cast<int64_t>(samples.size());
  const int s = cfg.image_size;
  if (len < s)
    throw ValueError("stft: input too short: " + std::to_string(len) + " samples, need >= " +
                     std::to_string(s));
  const int hop = static_cast<int>(len / s);
  const int frames = s;  // exact-S framing, see SpectroImage docs
  const int bins = cfg.freq_bins();
  const int pad = cfg.n_fft / 2;
  const RTensor window = build_window(cfg);

  CTensor spec = CTensor::zeros(Shape{bins, frames});
  RealFft& fft = fft_for(cfg.n_fft);
  std::vector<double> seg(static_cast<size_t>(cfg.n_fft));
  std::vector<double> re(bins), im(bins);
  for (int t = 0; t < frames; ++t) {
    const int64_t start = static_cast<int64_t>(t) * hop - pad;
    for (int n = 0; n < cfg.n_fft; ++n) seg[n] = sample_at(samples, start + n) * window[n];
    fft.forward(seg.data(), re.data(), im.data());
    for (int k = 0; k < bins; ++k) {
      spec.re[static_cast<int64_t>(k) * frames + t] = re[k];
      spec.im[static_cast<int64_t>(k) * frames + t] = im[k];
    }
  }
  if (hop_out) *hop_out = hop;
  if (frames_out) *frames_out = frames;
  return spec;
}

std::vector<double> istft_vector(const CTensor& spec, const StftConfig& cfg, int hop,
                                 int64_t audio_length) {
  cfg.validate();
  if (spec.shape().size() != 2 || spec.shape()[0] != cfg.freq_bins())
    throw ShapeError("istft: spectrogram must be [" + std::to_string(cfg.freq_bins()) +
                     ", frames], got " + shape_str(spec.shape()));
  if (hop > cfg.win_length)
    throw ValueError("istft: reconstruction undefined, hop " + std::to_string(hop) +
                     " exceeds window length " + std::to_string(cfg.win_length));
  const int frames = static_cast<int>(spec.shape()[1]);
  const int bins = cfg.freq_bins();
  const int pad = cfg.n_fft / 2;
  const OverlapPlan plan = overlap_plan(cfg, hop, frames);

  std::vector<double> acc(static_cast<size_t>(plan.total), 0.0);
  RealFft& fft = fft_for(cfg.n_fft);
  std::vector<double> re(bins), im(bins), frame(static_cast<size_t>(cfg.n_fft));
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < bins; ++k) {
      re[k] = spec.re[static_cast<int64_t>(k) * frames + t];
      im[k] = spec.im[static_cast<int64_t>(k) * frames + t];
    }
    fft.inverse(re.data(), im.data(), frame.data());
    const int64_t base = static_cast<int64_t>(t) * hop;
    for (int n = 0; n < cfg.n_fft; ++n) acc[base + n] += frame[n] * plan.window[n];
  }
  std::vector<double> out(static_cast<size_t>(audio_length), 0.0);
  for (int64_t i = 0; i < audio_length; ++i) {
    const int64_t m = i + pad;
    if (m < plan.total && plan.wsum[m] > kOverlapEps) out[i] = acc[m] / plan.wsum[m];
  }
  return out;
}

SpectroImage stft_image(const AudioClip& clip, const StftConfig& cfg) {
  int hop = 0, frames = 0;
  CTensor spec = stft_matrix(clip.samples, cfg, &hop, &frames);
  const int s = cfg.image_size;
  SpectroImage img;
  img.orig_freq_bins = cfg.freq_bins();
  img.orig_frames = frames;
  img.hop_length = hop;
  img.audio_length = clip.length();
  img.win_length = cfg.win_length;
  img.n_fft = cfg.n_fft;
  img.image_size = s;
  img.sample_rate = clip.sample_rate;
  if (frames != s) {
    NoGradGuard ng;
    Var v = axis_interp(Var::constant(std::move(spec)), 1, make_interp(frames, s));
    spec = v.value();
  }
  img.image = CTensor(RTensor(Shape{1, s, s}, std::move(spec.re.data)),
                      RTensor(Shape{1, s, s}, std::move(spec.im.data)));
  return img;
}

namespace {

StftConfig config_of(const SpectroImage& img) {
  StftConfig cfg;
  cfg.n_fft = img.n_fft;
  cfg.win_length = img.win_length;
  cfg.image_size = img.image_size;
  return cfg;
}

}  // namespace

AudioClip istft_audio(const SpectroImage& img) {
  const StftConfig cfg = config_of(img);
  cfg.validate();
  const Shape& s = img.image.shape();
  if (s.size() != 3 || s[1] != cfg.freq_bins() || s[2] != img.image_size)
    throw ShapeError("istft: image must be [C," + std::to_string(cfg.freq_bins()) + "," +
                     std::to_string(img.image_size) + "], got " + shape_str(s));
  if (img.orig_frames <= 0 || img.hop_length <= 0 || img.audio_length <= 0)
    throw ValueError("istft: incomplete SpectroImage metadata");
  NoGradGuard ng;
  Var image = Var::constant(img.image);
  Var audio = image_to_audio_op(image, img, cfg);
  AudioClip out;
  out.sample_rate = img.sample_rate;
  out.samples = audio.value().re.data;
  return out;
}

Var image_to_audio_op(const Var& image, const SpectroImage& meta, const StftConfig& cfg) {
  const Shape& s = image.shape();
  if (s.size() != 3) throw ShapeError("image_to_audio: expected [C,S,S], got " + shape_str(s));
  // channel 0 as the audio plane
  Var plane = reshape(image, Shape{s[0], s[1] * s[2]});
  if (s[0] > 1) {
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>(s[1] * s[2]));
    for (int64_t i = 0; i < s[1] * s[2]; ++i) idx->push_back(i);
    plane = gather(plane, idx, Shape{s[1] * s[2]});
  }
  plane = reshape(plane, Shape{s[1], s[2]});
  Var spec = plane;
  if (meta.orig_frames != s[2])
    spec = axis_interp(plane, 1, make_interp(s[2], meta.orig_frames));
  return istft_op(spec, cfg, meta.hop_length, meta.audio_length);
}

Var istft_op(const Var& spec, const StftConfig& cfg, int hop, int64_t audio_length) {
  cfg.validate();
  const Shape& s = spec.shape();
  if (s.size() != 2 || s[0] != cfg.freq_bins())
    throw ShapeError("istft_op: expected [" + std::to_string(cfg.freq_bins()) +
                     ", frames], got " + shape_str(s));
  std::vector<double> y = istft_vector(spec.value(), cfg, hop, audio_length);
  CTensor out = CTensor::real(RTensor(Shape{audio_length}, std::move(y)));

  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  if (grad_enabled() && spec.requires_grad()) {
    node->requires_grad = true;
    node->parents.push_back(spec.node());
    const int frames = static_cast<int>(s[1]);
    node->backward = [spec, cfg, hop, audio_length, frames](Node& nd) {
      const int bins = cfg.freq_bins();
      const int pad = cfg.n_fft / 2;
      const OverlapPlan plan = overlap_plan(cfg, hop, frames);
      std::vector<double> g_acc(static_cast<size_t>(plan.total), 0.0);
      for (int64_t i = 0; i < audio_length; ++i) {
        const int64_t m = i + pad;
        if (m < plan.total && plan.wsum[m] > kOverlapEps)
          g_acc[m] = nd.grad.re[i] / plan.wsum[m];
      }
      spec.node()->ensure_grad();
      CTensor& g = spec.node()->grad;
      RealFft& fft = fft_for(cfg.n_fft);
      std::vector<double> seg(static_cast<size_t>(cfg.n_fft));
      std::vector<double> re(bins), im(bins);
      const double two_over_n = 2.0 / cfg.n_fft;
      for (int t = 0; t < frames; ++t) {
        const int64_t base = static_cast<int64_t>(t) * hop;
        for (int n = 0; n < cfg.n_fft; ++n) seg[n] = g_acc[base + n] * plan.window[n];
        fft.forward(seg.data(), re.data(), im.data());
        g.re[static_cast<int64_t>(0) * frames + t] += re[0] / cfg.n_fft;
        for (int k = 1; k < bins; ++k) {
          g.re[static_cast<int64_t>(k) * frames + t] += two_over_n * re[k];
          g.im[static_cast<int64_t>(k) * frames + t] += two_over_n * im[k];
        }
      }
    };
  }
  return Var(node);
}

}  // namespace csd
