#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pun/error.hpp"

namespace pun {

// Row-major image with samples in [0, 1]; 1 (grayscale) or 3 (RGB) channels.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    check_shape();
    require(fill >= 0.0 && fill <= 1.0, "Image: fill value outside [0, 1]");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }
  Image(int width, int height, int channels, std::vector<double> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    check_shape();
    require(data_.size() == static_cast<std::size_t>(width) * height * channels, "Image: data length mismatch");
    for (double v : data_) require(v >= 0.0 && v <= 1.0, "Image: sample outside [0, 1]");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }

  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }
  void set(int x, int y, int c, double v) { data_[index(x, y, c)] = std::clamp(v, 0.0, 1.0); }
  void set_pixel(int x, int y, double r, double g, double b) {
    if (channels_ == 1) {
      set(x, y, 0, (r + g + b) / 3.0);
    } else {
      set(x, y, 0, r);
      set(x, y, 1, g);
      set(x, y, 2, b);
    }
  }

  // Rec. 601 luma for RGB, identity for grayscale.
  double luminance(int x, int y) const {
    if (channels_ == 1) return at(x, y);
    return 0.299 * at(x, y, 0) + 0.587 * at(x, y, 1) + 0.114 * at(x, y, 2);
  }

  bool same_shape(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  void check_shape() const {
    require(width_ > 0 && height_ > 0, "Image: dimensions must be positive");
    require(channels_ == 1 || channels_ == 3, "Image: channels must be 1 or 3");
  }
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Binary PGM (P5) for grayscale, PPM (P6) for RGB, 8 bits per sample.
inline std::string encode_pnm(const Image& img) {
  std::ostringstream os;
  os << (img.channels() == 1 ? "P5" : "P6") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  std::string out = os.str();
  out.reserve(out.size() + img.size());
  for (double v : img.data()) out.push_back(static_cast<char>(quantize8(v)));
  return out;
}

inline void write_pnm(const Image& img, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  const std::string bytes = encode_pnm(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::kIo, "write failed: " + path.string());
}

inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open image: " + path.string());
  auto next_token = [&]() {
    std::string tok;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  const std::string magic = next_token();
  if (magic != "P5" && magic != "P6") fail(ErrorKind::kFormat, path.string() + ": unsupported magic '" + magic + "'");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    fail(ErrorKind::kFormat, path.string() + ": malformed header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) fail(ErrorKind::kFormat, path.string() + ": unsupported dimensions or maxval");
  const int channels = magic == "P5" ? 1 : 3;
  std::vector<char> raw(static_cast<std::size_t>(w) * h * channels);
  f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size())) fail(ErrorKind::kFormat, path.string() + ": truncated pixel data");
  std::vector<double> data(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) data[i] = static_cast<unsigned char>(raw[i]) / 255.0;
  return Image(w, h, channels, std::move(data));
}

// Drops each sample to the nearest 8-bit level; what a round trip through
// write_pnm/read_pnm would produce.
inline Image quantized(const Image& img) {
  std::vector<double> data(img.data().begin(), img.data().end());
  for (double& v : data) v = quantize8(v) / 255.0;
  return Image(img.width(), img.height(), img.channels(), std::move(data));
}

}  // namespace pun
