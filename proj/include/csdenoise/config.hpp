#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csdenoise/signal.hpp"
#include "csdenoise/swin.hpp"

namespace csd {

struct TrainConfig {
  int batch_size = 16;
  int epochs = 100;   // iterations L, read as epochs over the dataset
  int max_steps = 0;  // optional cap on optimizer steps; 0 = derive from epochs
  double learning_rate = 0.001;
  double alpha = 0.5;
  std::string core = "swin";  // swin | unet
  bool enable_image_loss = true;
  bool enable_audio_loss = true;
  uint64_t seed = 0;
  int checkpoint_every = 0;  // steps; 0 = final checkpoint only
  double clip_norm = 5.0;
  int unet_channels = 16;

  void validate() const;
};

// Union of all knobs plus I/O paths; round-trips through flat key=value text.
struct RunConfig {
  StftConfig stft;
  SwinConfig swin;
  TrainConfig train;
  std::string noisy_dir, clean_dir;
  std::string run_dir = "run";

  void validate() const;
  std::string to_text() const;                      // canonical serialization
  std::string arch_text() const;                    // model+stft subset (compat checks)
  void set(const std::string& key, const std::string& value);  // throws on unknown key
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  uint64_t hash() const;  // FNV-1a over to_text()
};

// differing keys between two configs' arch subsets, "key: a=... b=..."
std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b);

}  // namespace csd
