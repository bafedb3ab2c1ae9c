#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace daunet {

// Binary P5 greyscale image, maxval 255.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);
GrayImage read_pgm(const std::string& path);

// Maps [0, 1] to 0-255 with clamping.
std::vector<std::uint8_t> to_gray(const double* values, std::size_t count);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace daunet
