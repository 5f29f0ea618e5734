#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "csdenoise/wav.hpp"

namespace csd {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

struct Reader {
  std::vector<char> bytes;
  size_t pos = 0;

  explicit Reader(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open '" + path + "'", 0);
    bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }

  void need(size_t n, const char* what) const {
    if (pos + n > bytes.size())
      throw ParseError(std::string("truncated file while reading ") + what, pos);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v;
    std::memcpy(&v, bytes.data() + pos, 2);
    pos += 2;
    return v;
  }
  std::string tag(const char* what) {
    need(4, what);
    std::string v(bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
};

}  // namespace

AudioClip read_wav(const std::string& path) {
  Reader r(path);
  if (r.tag("RIFF tag") != "RIFF") throw ParseError("not a RIFF file", 0);
  r.u32("RIFF size");
  if (r.tag("WAVE tag") != "WAVE") throw ParseError("not a WAVE file", 8);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  size_t fmt_offset = 0;
  bool have_fmt = false;
  AudioClip clip;
  bool have_data = false;

  while (r.pos + 8 <= r.bytes.size()) {
    const size_t chunk_at = r.pos;
    const std::string id = r.tag("chunk id");
    const uint32_t size = r.u32("chunk size");
    const size_t body = r.pos;
    if (id == "fmt ") {
      fmt_offset = body;
      format = r.u16("format code");
      channels = r.u16("channel count");
      sample_rate = r.u32("sample rate");
      r.u32("byte rate");
      r.u16("block align");
      bits = r.u16("bits per sample");
      if (format == kFormatExtensible && size >= 40) {
        r.u16("extension size");
        r.u16("valid bits");
        r.u32("channel mask");
        format = r.u16("sub-format");
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ParseError("data chunk before fmt chunk", chunk_at);
      if (channels == 0) throw ParseError("zero channels", fmt_offset + 2);
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool f32 = format == kFormatFloat && bits == 32;
      if (!pcm16 && !f32)
        throw ParseError("unsupported codec: format " + std::to_string(format) + ", " +
                             std::to_string(bits) + " bits (need PCM16 or float32)",
                         fmt_offset);
      const size_t bytes_per = bits / 8;
      const size_t frame_bytes = bytes_per * channels;
      r.need(size, "data chunk body");
      const size_t n_frames = size / frame_bytes;
      clip.samples.resize(n_frames);
      for (size_t i = 0; i < n_frames; ++i) {
        const char* p = r.bytes.data() + body + i * frame_bytes;  // channel 0
        if (pcm16) {
          int16_t v;
          std::memcpy(&v, p, 2);
          clip.samples[i] = v / 32768.0;
        } else {
          float v;
          std::memcpy(&v, p, 4);
          clip.samples[i] = v;
        }
      }
      have_data = true;
      break;
    }
    r.pos = body + size + (size & 1);  // chunks are word-aligned
  }
  if (!have_fmt) throw ParseError("missing fmt chunk", r.bytes.size());
  if (!have_data) throw ParseError("missing data chunk", r.bytes.size());
  if (clip.samples.empty()) throw ParseError("empty data chunk", r.bytes.size());
  if (sample_rate == 0) throw ParseError("zero sample rate", fmt_offset + 4);
  clip.sample_rate = static_cast<int>(sample_rate);
  return clip;
}

void write_wav(const AudioClip& clip, const std::string& path) {
  if (clip.samples.empty()) throw ValueError("write_wav: empty clip");
  if (clip.sample_rate <= 0) throw ValueError("write_wav: bad sample rate");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValueError("write_wav: cannot open '" + path + "'");

  const uint32_t n = static_cast<uint32_t>(clip.samples.size());
  const uint32_t data_bytes = n * 2;
  auto put_u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_u16 = [&](uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };

  f.write("RIFF", 4);
  put_u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(16);
  put_u16(kFormatPcm);
  put_u16(1);  // mono
  put_u32(static_cast<uint32_t>(clip.sample_rate));
  put_u32(static_cast<uint32_t>(clip.sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  f.write("data", 4);
  put_u32(data_bytes);
  for (double v : clip.samples) {
    const double c = std::min(1.0, std::max(-1.0, v));
    const auto q = static_cast<int32_t>(std::lround(c * 32768.0));
    const auto s = static_cast<int16_t>(std::min<int32_t>(32767, std::max<int32_t>(-32768, q)));
    f.write(reinterpret_cast<const char*>(&s), 2);
  }
  if (!f) throw ValueError("write_wav: write failed for '" + path + "'");
}

}  // namespace csd
