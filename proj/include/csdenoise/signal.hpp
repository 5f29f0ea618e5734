#pragma once

#include <string>
#include <vector>

#include "csdenoise/ctensor.hpp"

namespace csd {

// Mono PCM audio, samples in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 16000;

  int64_t length() const { return static_cast<int64_t>(samples.size()); }
};

// Analysis parameters. n_fft must equal 2*image_size - 1 so the one-sided
// spectrum has exactly image_size bins (1023 -> 512).
struct StftConfig {
  int n_fft = 1023;
  int win_length = 1000;
  int image_size = 512;
  std::string window = "hamming";
  bool center = true;

  int freq_bins() const { return n_fft / 2 + 1; }
  void validate() const;
};

// A complex spectrogram image plus the provenance needed to invert it.
//
// Framing convention: hop = floor(len/S); the signal is reflect-padded by
// n_fft/2 on the left (center framing) and the analysis takes exactly S
// frames at offsets t*hop, t = 0..S-1, zero-extending on the right where a
// frame overruns. hop = floor(len/S) makes S frames span the whole clip, so
// orig_frames == image_size and the 512x512 resize is shape-preserving here;
// the resize operator itself handles arbitrary frame counts.
struct SpectroImage {
  CTensor image;  // [C, S, S], C=1 for the audio path
  int orig_freq_bins = 0;
  int orig_frames = 0;
  int hop_length = 0;
  int64_t audio_length = 0;
  int win_length = 0;
  int n_fft = 0;
  int image_size = 0;
  int sample_rate = 0;
};

// analysis window: win_length-point periodic Hamming centered in n_fft zeros
RTensor build_window(const StftConfig& cfg);

// raw complex STFT, [bins, frames]
CTensor stft_matrix(const std::vector<double>& samples, const StftConfig& cfg, int* hop_out,
                    int* frames_out);

// overlap-add inverse of stft_matrix
std::vector<double> istft_vector(const CTensor& spec, const StftConfig& cfg, int hop,
                                 int64_t audio_length);

SpectroImage stft_image(const AudioClip& clip, const StftConfig& cfg);
AudioClip istft_audio(const SpectroImage& img);

// Differentiable overlap-add inverse of one [bins, T] spectrogram slice.
// Gradients treat (re, im) as independent real variables; the DC bin's
// imaginary part is ignored (zero gradient).
Var istft_op(const Var& spec, const StftConfig& cfg, int hop, int64_t audio_length);

// Differentiable [C,S,S] -> audio chain for one sample: inverse resize along
// time, then istft_op on channel 0.
Var image_to_audio_op(const Var& image, const SpectroImage& meta, const StftConfig& cfg);

}  // namespace csd
