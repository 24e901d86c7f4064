#include "hvae/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "hvae/binary.hpp"
#include "hvae/error.hpp"

namespace hvae::io {

std::uint8_t quantize(float x) {
  if (std::isnan(x)) return 0;
  const double v = std::round(255.0 * (static_cast<double>(x) + 1.0) / 2.0);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

float dequantize(std::uint8_t v) { return static_cast<float>(2.0 * v / 255.0 - 1.0); }

std::string encode_ppm(const Rgb8& img) {
  if (img.width < 1 || img.height < 1) throw ShapeError("ppm: empty image");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw ShapeError("ppm: pixel buffer does not match the size");
  }
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

Rgb8 decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    const std::size_t start = pos;
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])) && pos - start < 9) {
      v = v * 10 + (bytes[pos++] - '0');
    }
    if (pos == start) throw FormatError("ppm: expected a number", start);
    return static_cast<int>(v);
  };
  if (bytes.substr(0, 2) != "P6") throw FormatError("ppm: bad magic", 0);
  pos = 2;
  Rgb8 img;
  img.width = number();
  img.height = number();
  const int maxval = number();
  if (img.width < 1 || img.height < 1) throw FormatError("ppm: empty image", pos);
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("ppm: missing separator before pixels", pos);
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
  if (bytes.size() - pos < n) throw FormatError("ppm: truncated pixel data", bytes.size());
  if (bytes.size() - pos > n) throw FormatError("ppm: trailing bytes", pos + n);
  img.pixels.assign(bytes.begin() + static_cast<long>(pos), bytes.end());
  return img;
}

void write_ppm(const std::string& path, const Rgb8& img) { write_file(path, encode_ppm(img)); }

Rgb8 read_ppm(const std::string& path) { return decode_ppm(read_file(path)); }

Rgb8 make_grid(const nn::Tensor<float>& seq) {
  if (seq.rank() != 5) throw ShapeError("grid: expected [N, T, C, H, W], got " + nn::shape_str(seq.shape()));
  const int n = seq.dim(0), len = seq.dim(1), c = seq.dim(2), h = seq.dim(3), w = seq.dim(4);
  if (c != 1 && c != 3) throw ShapeError("grid: frames need 1 or 3 channels");
  if (n < 1 || len < 1 || h < 1 || w < 1) throw ShapeError("grid: empty input");
  Rgb8 img{len * w, n * h, {}};
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < len; ++t) {
      const float* f = seq.data() + (static_cast<std::size_t>(i) * len + t) * c * plane;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t out = (static_cast<std::size_t>(i * h + y) * img.width + (t * w + x)) * 3;
          for (int ch = 0; ch < 3; ++ch) {
            img.pixels[out + ch] = quantize(f[(c == 1 ? 0 : ch) * plane + static_cast<std::size_t>(y) * w + x]);
          }
        }
    }
  return img;
}

void export_grid(const nn::Tensor<float>& sequences, const std::string& path) { write_ppm(path, make_grid(sequences)); }

}  // namespace hvae::io
