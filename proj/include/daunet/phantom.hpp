#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "daunet/tensor.hpp"

// Synthetic ultrasound-like phantoms with analytic masks. Class 1 is a large
// ellipse; in two-class mode class 2 is a small blob touching its rim.
namespace daunet {

struct PhantomConfig {
  int image_size = 64;
  int num_fg_classes = 1;
  double noise_std = 0.05;
  bool speckle = false;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const PhantomConfig&) const = default;
};

struct Sample {
  Tensor image;  // (1, H, W) in [0, 1]
  Tensor mask;   // (C, H, W) in {0, 1}, classes disjoint
};

// Pixel (y, x) belongs to the ellipse when its center lies inside. Radii are
// along the axes rotated by `angle` radians.
struct Ellipse {
  double cy = 0.0;
  double cx = 0.0;
  double ry = 1.0;
  double rx = 1.0;
  double angle = 0.0;

  bool contains(double y, double x) const;
};

struct PhantomLayout {
  std::vector<Ellipse> objects;  // objects[c] is class c + 1
  double background = 0.2;
  std::vector<double> intensity;  // per object
};

PhantomLayout phantom_layout(const PhantomConfig& cfg, std::size_t index);
// Rasterizes a layout; noise is drawn from the (seed, index) noise substream.
// Later objects win where objects overlap.
Sample render_phantom(const PhantomConfig& cfg, const PhantomLayout& layout, std::size_t index);
Sample gen_phantom(const PhantomConfig& cfg, std::size_t index);

struct AugmentParams {
  double zoom = 1.0;       // [0.8, 1.2]
  double angle_deg = 0.0;  // [-15, 15]
  bool flip = false;       // horizontal

  bool identity() const { return zoom == 1.0 && angle_deg == 0.0 && !flip; }
};

AugmentParams draw_augment(std::uint64_t seed);
// Zoom and rotation about the image center, then the flip. Bilinear with edge
// clamping for the image, nearest neighbour for the mask. Throws Error when a
// class present in the input vanishes.
Sample apply_augment(const Sample& s, const AugmentParams& p);
Sample augment(const Sample& s, std::uint64_t seed);

enum class Quadrant { kTopLeft, kTopRight, kBottomLeft, kBottomRight };

inline constexpr Quadrant kAllQuadrants[] = {Quadrant::kTopLeft, Quadrant::kTopRight,
                                             Quadrant::kBottomLeft, Quadrant::kBottomRight};

std::string to_string(Quadrant q);  // "TL", "TR", "BL", "BR"
Quadrant parse_quadrant(const std::string& s);

// Copy of image (rank >= 2, H and W last) with quadrant q of every plane set
// to 0.
Tensor quadrant_mask(const Tensor& image, Quadrant q);

struct IndexRange {
  std::size_t start = 0;
  std::size_t count = 0;
};

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Phantom indices for the three splits. Throws ConfigError when ranges
// overlap or one is empty.
Splits make_splits(IndexRange train, IndexRange val, IndexRange test);
// Consecutive ranges [0, n_train), [n_train, n_train + n_val), ...
Splits make_splits(std::size_t n_train, std::size_t n_val, std::size_t n_test);

// Permutation of 0..n-1 for a training epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

struct Batch {
  Tensor images;  // (N, 1, H, W)
  Tensor masks;   // (N, C, H, W)
};

Batch make_batch(std::span<const Sample> samples);
Batch make_batch(const std::vector<Sample>& pool, std::span<const std::size_t> positions);

std::vector<Sample> gen_phantoms(const PhantomConfig& cfg, std::span<const std::size_t> indices);

// Writes <prefix>_image.pgm and <prefix>_mask<c>.pgm (0 / 255) per class.
std::vector<std::string> export_sample(const Sample& s, const std::string& prefix);

}  // namespace daunet
