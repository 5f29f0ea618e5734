#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "csdenoise/signal.hpp"
#include "csdenoise/wav.hpp"
#include "gradcheck.hpp"

using namespace csd;

namespace {

StftConfig full_cfg() { return StftConfig{}; }

StftConfig toy_cfg() {
  StftConfig cfg;
  cfg.image_size = 64;
  cfg.n_fft = 127;
  cfg.win_length = 124;
  return cfg;
}

std::vector<double> random_clip(int64_t n, std::mt19937_64& rng) {
  std::vector<double> x(n);
  std::normal_distribution<double> d(0.0, 0.3);
  double peak = 0;
  for (auto& v : x) {
    v = d(rng);
    peak = std::max(peak, std::abs(v));
  }
  for (auto& v : x) v /= peak * 1.01;
  return x;
}

double rel_l2_excluding(const std::vector<double>& got, const std::vector<double>& want,
                        int64_t cut) {
  double num = 0, den = 0;
  for (int64_t i = cut; i < static_cast<int64_t>(want.size()) - cut; ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("config validation") {
  StftConfig cfg;
  CHECK(cfg.freq_bins() == 512);
  cfg.n_fft = 1024;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  cfg = StftConfig{};
  cfg.window = "hann";
  CHECK_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("zero audio maps to an identically zero image") {
  AudioClip clip;
  clip.samples.assign(8192, 0.0);
  SpectroImage img = stft_image(clip, full_cfg());
  CHECK(img.hop_length == 16);
  for (double v : img.image.re.data) CHECK(v == 0.0);
  for (double v : img.image.im.data) CHECK(v == 0.0);
}

TEST_CASE("hop length follows floor(len/512) and is deterministic") {
  std::mt19937_64 rng(3);
  AudioClip a{random_clip(5120, rng), 16000};
  AudioClip b{random_clip(5120, rng), 16000};
  SpectroImage ia = stft_image(a, full_cfg());
  SpectroImage ib = stft_image(b, full_cfg());
  CHECK(ia.hop_length == 10);
  CHECK(ib.hop_length == 10);
  CHECK(ia.orig_frames == ib.orig_frames);

  AudioClip tiny{std::vector<double>(400, 0.1), 16000};
  CHECK_THROWS_AS(stft_image(tiny, full_cfg()), ValueError);
}

TEST_CASE("bin-centred sine concentrates energy in the matching row") {
  const StftConfig cfg = full_cfg();
  const int sr = 16000;
  const int k = 37;  // target bin
  const double f = static_cast<double>(k) * sr / cfg.n_fft;
  AudioClip clip;
  clip.sample_rate = sr;
  clip.samples.resize(16000);
  for (size_t i = 0; i < clip.samples.size(); ++i)
    clip.samples[i] = 0.7 * std::sin(2.0 * 3.14159265358979 * f * i / sr);
  SpectroImage img = stft_image(clip, cfg);
  const int s = cfg.image_size;
  std::vector<double> row_energy(s, 0.0);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      const int64_t at = static_cast<int64_t>(r) * s + c;
      row_energy[r] += img.image.re[at] * img.image.re[at] + img.image.im[at] * img.image.im[at];
    }
  const int argmax =
      static_cast<int>(std::max_element(row_energy.begin(), row_energy.end()) -
                       row_energy.begin());
  CHECK(argmax == static_cast<int>(std::lround(f * cfg.n_fft / sr)));
  CHECK(row_energy[argmax] > 100.0 * row_energy[(argmax + 40) % s]);
}

TEST_CASE("round trip: resize-free path under 1e-3, full image path under 5e-2") {
  std::mt19937_64 rng(17);
  const StftConfig cfg = full_cfg();
  for (int64_t len : {4096, 5120, 16000, 48000}) {
    for (int trial = 0; trial < 5; ++trial) {
      AudioClip clip{random_clip(len, rng), 16000};
      int hop = 0, frames = 0;
      CTensor spec = stft_matrix(clip.samples, cfg, &hop, &frames);
      std::vector<double> back = istft_vector(spec, cfg, hop, len);
      CHECK(rel_l2_excluding(back, clip.samples, 1023) < 1e-3);

      SpectroImage img = stft_image(clip, cfg);
      AudioClip round = istft_audio(img);
      CHECK(round.sample_rate == clip.sample_rate);
      CHECK(rel_l2_excluding(round.samples, clip.samples, 1023) < 5e-2);
    }
  }
}

TEST_CASE("istft of a zero image is zero audio; the map is homogeneous") {
  std::mt19937_64 rng(23);
  AudioClip clip{random_clip(4096, rng), 8000};
  SpectroImage img = stft_image(clip, full_cfg());

  SpectroImage zero = img;
  zero.image = CTensor::zeros(img.image.shape());
  AudioClip silent = istft_audio(zero);
  for (double v : silent.samples) CHECK(v == 0.0);

  SpectroImage doubled = img;
  for (auto& v : doubled.image.re.data) v *= 2.0;
  for (auto& v : doubled.image.im.data) v *= 2.0;
  AudioClip once = istft_audio(img);
  AudioClip twice = istft_audio(doubled);
  for (size_t i = 0; i < once.samples.size(); ++i)
    CHECK(twice.samples[i] == doctest::Approx(2.0 * once.samples[i]).epsilon(1e-9));
}

TEST_CASE("stft is linear over equal-length clips") {
  std::mt19937_64 rng(29);
  const StftConfig cfg = toy_cfg();
  std::vector<double> a = random_clip(2048, rng);
  std::vector<double> b = random_clip(2048, rng);
  std::vector<double> s(2048);
  for (int i = 0; i < 2048; ++i) s[i] = a[i] + b[i];
  int hop = 0, frames = 0;
  CTensor sa = stft_matrix(a, cfg, &hop, &frames);
  CTensor sb = stft_matrix(b, cfg, nullptr, nullptr);
  CTensor ss = stft_matrix(s, cfg, nullptr, nullptr);
  for (int64_t i = 0; i < ss.numel(); ++i) {
    const double scale = std::max({1.0, std::abs(ss.re[i]), std::abs(ss.im[i])});
    CHECK(std::abs(ss.re[i] - sa.re[i] - sb.re[i]) / scale < 1e-5);
    CHECK(std::abs(ss.im[i] - sa.im[i] - sb.im[i]) / scale < 1e-5);
  }
}

TEST_CASE("windowed-frame energy matches the spectrum (Parseval)") {
  std::mt19937_64 rng(31);
  const StftConfig cfg = toy_cfg();
  std::vector<double> x = random_clip(2048, rng);
  int hop = 0, frames = 0;
  CTensor spec = stft_matrix(x, cfg, &hop, &frames);
  const RTensor w = build_window(cfg);
  const int pad = cfg.n_fft / 2;

  // reflect-padded, zero-extended view matching the analysis framing
  auto sample_at = [&](int64_t i) -> double {
    const auto n = static_cast<int64_t>(x.size());
    if (i < 0) i = -i;
    if (i >= n) {
      const int64_t over = i - (n - 1);
      if (over >= n) return 0.0;
      i = n - 1 - over;
    }
    return x[static_cast<size_t>(i)];
  };
  for (int t = 0; t < frames; t += 7) {
    double time_energy = 0.0;
    for (int n = 0; n < cfg.n_fft; ++n) {
      const double v = sample_at(static_cast<int64_t>(t) * hop - pad + n) * w[n];
      time_energy += v * v;
    }
    // two-sided spectral energy: bin 0 once, bins 1..K-1 twice (n_fft odd)
    double spec_energy = spec.re[0 * frames + t] * spec.re[0 * frames + t];
    for (int k = 1; k < cfg.freq_bins(); ++k) {
      const int64_t at = static_cast<int64_t>(k) * frames + t;
      spec_energy += 2.0 * (spec.re[at] * spec.re[at] + spec.im[at] * spec.im[at]);
    }
    spec_energy /= cfg.n_fft;
    CHECK(std::abs(spec_energy - time_energy) / std::max(1e-9, time_energy) < 1e-4);
  }
}

TEST_CASE("istft gradient matches finite differences") {
  std::mt19937_64 rng(37);
  StftConfig cfg;
  cfg.image_size = 8;
  cfg.n_fft = 15;
  cfg.win_length = 14;
  Var spec = Var(csd::testing::random_ctensor(Shape{8, 8}, rng), true);
  auto r = csd::testing::gradcheck(
      [&] { return mean(cabs(istft_op(spec, cfg, 8, 64))); }, {spec}, rng, 20);
  CHECK(r.max_rel_err < 1e-4);

  // reconstruction undefined when frames no longer overlap
  CHECK_THROWS_AS(istft_op(spec, cfg, 20, 64), ValueError);
}

TEST_CASE("image_to_audio_op differentiates through the inverse resize") {
  std::mt19937_64 rng(41);
  StftConfig cfg;
  cfg.image_size = 8;
  cfg.n_fft = 15;
  cfg.win_length = 14;
  SpectroImage meta;
  meta.orig_frames = 11;  // force a genuine resize
  meta.hop_length = 6;
  meta.audio_length = 64;
  meta.win_length = cfg.win_length;
  meta.n_fft = cfg.n_fft;
  meta.image_size = cfg.image_size;
  meta.sample_rate = 8000;
  Var image = Var(csd::testing::random_ctensor(Shape{1, 8, 8}, rng), true);
  auto r = csd::testing::gradcheck(
      [&] { return mean(cabs(image_to_audio_op(image, meta, cfg))); }, {image}, rng, 20);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("wav round trip stays within the 16-bit quantization bound") {
  std::mt19937_64 rng(43);
  AudioClip clip{random_clip(1000, rng), 22050};
  clip.samples[0] = 1.0;
  clip.samples[1] = -1.0;
  const std::string path = "/tmp/csd_wav_test.wav";
  write_wav(clip, path);
  AudioClip back = read_wav(path);
  CHECK(back.sample_rate == 22050);
  REQUIRE(back.samples.size() == clip.samples.size());
  double max_err = 0;
  for (size_t i = 0; i < clip.samples.size(); ++i)
    max_err = std::max(max_err, std::abs(back.samples[i] - clip.samples[i]));
  CHECK(max_err <= std::pow(2.0, -15.0));
  std::remove(path.c_str());
}

TEST_CASE("wav reader: truncation, stereo, float32, bad magic") {
  const std::string path = "/tmp/csd_wav_err.wav";
  {
    AudioClip clip{std::vector<double>(64, 0.25), 8000};
    write_wav(clip, path);
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), 40);  // cut inside the data chunk
  }
  CHECK_THROWS_AS(read_wav(path), ParseError);

  {
    std::ofstream out(path, std::ios::binary);
    out << "RIFX garbage";
  }
  CHECK_THROWS_AS(read_wav(path), ParseError);

  // hand-built stereo PCM16: channel 0 = 0.5, channel 1 = -0.5
  {
    std::ofstream f(path, std::ios::binary);
    auto u32 = [&](uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); };
    auto u16 = [&](uint16_t v) { f.write(reinterpret_cast<char*>(&v), 2); };
    f.write("RIFF", 4);
    u32(36 + 16);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    u32(16);
    u16(1);
    u16(2);
    u32(8000);
    u32(8000 * 4);
    u16(4);
    u16(16);
    f.write("data", 4);
    u32(16);
    for (int i = 0; i < 4; ++i) {
      int16_t l = 16384, r = -16384;
      f.write(reinterpret_cast<char*>(&l), 2);
      f.write(reinterpret_cast<char*>(&r), 2);
    }
  }
  AudioClip stereo = read_wav(path);
  REQUIRE(stereo.samples.size() == 4);
  for (double v : stereo.samples) CHECK(v == doctest::Approx(0.5));

  // float32 mono
  {
    std::ofstream f(path, std::ios::binary);
    auto u32 = [&](uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); };
    auto u16 = [&](uint16_t v) { f.write(reinterpret_cast<char*>(&v), 2); };
    f.write("RIFF", 4);
    u32(36 + 12);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    u32(16);
    u16(3);
    u16(1);
    u32(16000);
    u32(16000 * 4);
    u16(4);
    u16(32);
    f.write("data", 4);
    u32(12);
    for (float v : {0.25f, -0.75f, 1.0f}) f.write(reinterpret_cast<char*>(&v), 4);
  }
  AudioClip f32 = read_wav(path);
  REQUIRE(f32.samples.size() == 3);
  CHECK(f32.samples[1] == doctest::Approx(-0.75));
  std::remove(path.c_str());
}
