#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "daunet/tensor.hpp"

namespace daunet {

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), values(h * w, 0) {}

  bool at(std::size_t y, std::size_t x) const { return values[y * width + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) { values[y * width + x] = v ? 1 : 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const BinaryMask&) const = default;
};

struct Pixel {
  int y = 0;
  int x = 0;
  auto operator<=>(const Pixel&) const = default;
};

// Row-major ordered boundary pixels.
using BoundarySet = std::vector<Pixel>;

// How the 95th percentile combines the two directed distance sets.
enum class Hd95Mode {
  kDirectedMax,  // max of the two directed 95th percentiles
  kPooled,       // 95th percentile of both sets pooled
};

// Plane (sample, cls) of a logit tensor thresholded at logit > 0, i.e.
// probability strictly above 0.5.
BinaryMask binarize(const Tensor& logits, std::size_t sample, std::size_t cls);
// Plane (sample, cls) of a {0, 1} target tensor.
BinaryMask mask_from_target(const Tensor& target, std::size_t sample, std::size_t cls);

// 2|P & G| / (|P| + |G|); 1.0 when both masks are empty.
double dsc(const BinaryMask& p, const BinaryMask& g);

// Mask pixels with at least one 4-neighbour outside the mask; the image
// border counts as outside. Throws MetricError on an empty mask.
BoundarySet extract_boundary(const BinaryMask& m);

// Linear interpolation between closest ranks: value at rank q * (n - 1).
double percentile(std::vector<double> values, double q);

// For each pixel of `from`, the Euclidean distance to the nearest pixel of
// `to` (exact, all pairs).
std::vector<double> directed_distances(const BoundarySet& from, const BoundarySet& to);

// Both throw MetricError when either mask is empty.
double hd95(const BinaryMask& p, const BinaryMask& g, Hd95Mode mode = Hd95Mode::kDirectedMax);
double asd(const BinaryMask& p, const BinaryMask& g);

struct MetricsRow {
  std::size_t sample_id = 0;
  std::size_t cls = 0;
  double dsc = 0.0;
  double hd95 = 0.0;  // NaN when skipped
  double asd = 0.0;   // NaN when skipped
  bool skipped = false;
};

// DSC for any pair; distances skipped (NaN) when either mask is empty.
MetricsRow score_pair(const BinaryMask& p, const BinaryMask& g, std::size_t sample_id,
                      std::size_t cls, Hd95Mode mode = Hd95Mode::kDirectedMax);

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::vector<double> class_dsc;
  std::vector<double> class_hd95;
  std::vector<double> class_asd;
  double mean_dsc = 0.0;
  double mean_hd95 = 0.0;
  double mean_asd = 0.0;
  std::size_t skipped = 0;

  // Recomputes the per-class and macro means from rows. Distance means
  // cover non-skipped rows only.
  void finalize(std::size_t num_classes);

  // Header `sample_id,class,dsc,hd95,asd,skipped`.
  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

}  // namespace daunet
