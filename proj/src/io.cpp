#include "daunet/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "daunet/error.hpp"

namespace daunet {

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != width * height) {
    throw ShapeError("write_pgm: " + std::to_string(pixels.size()) + " pixels for a " +
                     std::to_string(width) + "x" + std::to_string(height) + " image");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw IoError("write failed: " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::string magic;
  GrayImage img;
  int maxval = 0;
  is >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !is) throw FormatError(path + ": not a P5/255 PGM");
  is.get();
  img.pixels.resize(img.width * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw FormatError(path + ": truncated PGM");
  return img;
}

std::vector<std::uint8_t> to_gray(const double* values, std::size_t count) {
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << contents;
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace daunet
