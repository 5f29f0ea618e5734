#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "csdenoise/png_io.hpp"

namespace csd {

namespace {

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& body) {
  put_be32(out, static_cast<uint32_t>(body.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), body.begin(), body.end());
  const uint32_t crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, crc);
}

const uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

}  // namespace

void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& pixels) {
  if (width <= 0 || height <= 0 ||
      pixels.size() != static_cast<size_t>(width) * static_cast<size_t>(height))
    throw ValueError("png: pixel buffer does not match " + std::to_string(width) + "x" +
                     std::to_string(height));
  std::vector<uint8_t> out(kSig, kSig + 8);

  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(width));
  put_be32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  put_chunk(out, "IHDR", ihdr);

  // raw scanlines with filter byte 0
  std::vector<uint8_t> raw(static_cast<size_t>(height) * (width + 1));
  for (int y = 0; y < height; ++y) {
    raw[static_cast<size_t>(y) * (width + 1)] = 0;
    std::memcpy(raw.data() + static_cast<size_t>(y) * (width + 1) + 1,
                pixels.data() + static_cast<size_t>(y) * width, static_cast<size_t>(width));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw ValueError("png: deflate failed");
  idat.resize(bound);
  put_chunk(out, "IDAT", idat);
  put_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValueError("png: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw ValueError("png: write failed for '" + path + "'");
}

std::vector<uint8_t> read_png_gray8(const std::string& path, int* width, int* height) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open '" + path + "'", 0);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
    throw ParseError("not a PNG file", 0);
  size_t pos = 8;
  int w = 0, h = 0;
  std::vector<uint8_t> idat;
  bool saw_ihdr = false;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = get_be32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw ParseError("truncated chunk", pos);
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const uint8_t* body = bytes.data() + pos + 8;
    if (type == "IHDR") {
      if (len != 13) throw ParseError("bad IHDR length", pos);
      w = static_cast<int>(get_be32(body));
      h = static_cast<int>(get_be32(body + 4));
      if (body[8] != 8 || body[9] != 0)
        throw ParseError("only 8-bit grayscale PNGs are supported", pos + 8 + 8);
      if (body[12] != 0) throw ParseError("interlaced PNGs are not supported", pos + 8 + 12);
      saw_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), body, body + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || w <= 0 || h <= 0) throw ParseError("missing IHDR", 8);
  if (idat.empty()) throw ParseError("missing IDAT", pos);

  std::vector<uint8_t> raw(static_cast<size_t>(h) * (w + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw ParseError("corrupt IDAT stream", pos);

  // undo per-row filters (types 0..4)
  std::vector<uint8_t> px(static_cast<size_t>(w) * h);
  auto paeth = [](int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
  };
  for (int y = 0; y < h; ++y) {
    const uint8_t filter = raw[static_cast<size_t>(y) * (w + 1)];
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (w + 1) + 1;
    uint8_t* dst = px.data() + static_cast<size_t>(y) * w;
    const uint8_t* up = y > 0 ? px.data() + static_cast<size_t>(y - 1) * w : nullptr;
    for (int x = 0; x < w; ++x) {
      const int left = x > 0 ? dst[x - 1] : 0;
      const int above = up ? up[x] : 0;
      const int corner = (up && x > 0) ? up[x - 1] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += above; break;
        case 3: v += (left + above) / 2; break;
        case 4: v += paeth(left, above, corner); break;
        default: throw ParseError("unknown filter type " + std::to_string(filter), 0);
      }
      dst[x] = static_cast<uint8_t>(v & 0xFF);
    }
  }
  if (width) *width = w;
  if (height) *height = h;
  return px;
}

PngMapping plane_mapping(const RTensor& plane, bool is_abs) {
  std::vector<double> sorted = plane.data;
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<int64_t>(sorted.size());
  auto pct = [&](double q) {
    const auto i = static_cast<int64_t>(std::llround(q * static_cast<double>(n - 1)));
    return sorted[static_cast<size_t>(std::min(n - 1, std::max<int64_t>(0, i)))];
  };
  PngMapping m;
  if (is_abs) {
    m.lo = 0.0;
    m.hi = pct(0.99);
  } else {
    m.lo = pct(0.01);
    m.hi = pct(0.99);
  }
  if (m.hi <= m.lo) m.hi = m.lo + 1e-12;
  return m;
}

std::vector<uint8_t> quantize_plane(const RTensor& plane, const PngMapping& map) {
  std::vector<uint8_t> px(plane.data.size());
  const double scale = 255.0 / (map.hi - map.lo);
  for (size_t i = 0; i < plane.data.size(); ++i) {
    const double v = (plane.data[i] - map.lo) * scale;
    px[i] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, std::round(v))));
  }
  return px;
}

void export_plane_png(const std::string& path, const RTensor& plane, bool is_abs) {
  if (plane.shape.size() != 2)
    throw ShapeError("png export: plane must be 2-D, got " + shape_str(plane.shape));
  const PngMapping map = plane_mapping(plane, is_abs);
  const auto px = quantize_plane(plane, map);
  write_png_gray8(path, static_cast<int>(plane.shape[1]), static_cast<int>(plane.shape[0]), px);
  std::ofstream meta(path + ".meta");
  meta.precision(17);
  meta << "lo=" << map.lo << "\nhi=" << map.hi << "\nkind=" << (is_abs ? "abs" : "signed")
       << "\n";
}

}  // namespace csd
