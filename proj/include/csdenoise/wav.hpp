#pragma once

#include <string>

#include "csdenoise/signal.hpp"

namespace csd {

// RIFF/WAVE reader: PCM 16-bit or IEEE float 32-bit; multi-channel input
// yields channel 0. Malformed files raise ParseError with the byte offset.
AudioClip read_wav(const std::string& path);

// 16-bit PCM mono writer; samples clamped to [-1, 1].
void write_wav(const AudioClip& clip, const std::string& path);

}  // namespace csd
