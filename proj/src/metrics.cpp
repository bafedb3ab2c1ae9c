#include "daunet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "daunet/error.hpp"
#include "daunet/io.hpp"

namespace daunet {
namespace {

void require_same_dims(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("mask dims " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

const double* plane_ptr(const Tensor& t, std::size_t sample, std::size_t cls) {
  if (t.rank() != 4 || sample >= t.dim(0) || cls >= t.dim(1)) {
    throw ShapeError("plane (" + std::to_string(sample) + ", " + std::to_string(cls) +
                     ") outside tensor " + shape_str(t.shape()));
  }
  return t.data().data() + (sample * t.dim(1) + cls) * t.dim(2) * t.dim(3);
}

}  // namespace

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (auto v : values) n += v != 0;
  return n;
}

BinaryMask binarize(const Tensor& logits, std::size_t sample, std::size_t cls) {
  const double* src = plane_ptr(logits, sample, cls);
  BinaryMask m(logits.dim(2), logits.dim(3));
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = src[i] > 0.0 ? 1 : 0;
  return m;
}

BinaryMask mask_from_target(const Tensor& target, std::size_t sample, std::size_t cls) {
  const double* src = plane_ptr(target, sample, cls);
  BinaryMask m(target.dim(2), target.dim(3));
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = src[i] > 0.5 ? 1 : 0;
  return m;
}

double dsc(const BinaryMask& p, const BinaryMask& g) {
  require_same_dims(p, g);
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const bool a = p.values[i] != 0;
    const bool b = g.values[i] != 0;
    inter += a && b;
    np += a;
    ng += b;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

BoundarySet extract_boundary(const BinaryMask& m) {
  BoundarySet out;
  const long h = static_cast<long>(m.height);
  const long w = static_cast<long>(m.width);
  auto inside = [&](long y, long x) {
    return y >= 0 && y < h && x >= 0 && x < w && m.values[y * w + x] != 0;
  };
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      if (!inside(y, x)) continue;
      if (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1)) {
        out.push_back({static_cast<int>(y), static_cast<int>(x)});
      }
    }
  }
  if (out.empty()) throw MetricError("no boundary: mask is empty");
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw MetricError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<double> directed_distances(const BoundarySet& from, const BoundarySet& to) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const Pixel& a : from) {
    long best = std::numeric_limits<long>::max();
    for (const Pixel& b : to) {
      const long dy = a.y - b.y;
      const long dx = a.x - b.x;
      best = std::min(best, dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(static_cast<double>(best)));
  }
  return out;
}

double hd95(const BinaryMask& p, const BinaryMask& g, Hd95Mode mode) {
  require_same_dims(p, g);
  const BoundarySet bp = extract_boundary(p);
  const BoundarySet bg = extract_boundary(g);
  std::vector<double> pg = directed_distances(bp, bg);
  std::vector<double> gp = directed_distances(bg, bp);
  if (mode == Hd95Mode::kPooled) {
    pg.insert(pg.end(), gp.begin(), gp.end());
    return percentile(std::move(pg), 0.95);
  }
  return std::max(percentile(std::move(pg), 0.95), percentile(std::move(gp), 0.95));
}

double asd(const BinaryMask& p, const BinaryMask& g) {
  require_same_dims(p, g);
  const BoundarySet bp = extract_boundary(p);
  const BoundarySet bg = extract_boundary(g);
  double total = 0.0;
  for (double d : directed_distances(bp, bg)) total += d;
  for (double d : directed_distances(bg, bp)) total += d;
  return total / static_cast<double>(bp.size() + bg.size());
}

MetricsRow score_pair(const BinaryMask& p, const BinaryMask& g, std::size_t sample_id,
                      std::size_t cls, Hd95Mode mode) {
  MetricsRow row;
  row.sample_id = sample_id;
  row.cls = cls;
  row.dsc = dsc(p, g);
  if (p.empty() || g.empty()) {
    row.skipped = true;
    row.hd95 = std::numeric_limits<double>::quiet_NaN();
    row.asd = std::numeric_limits<double>::quiet_NaN();
    return row;
  }
  row.hd95 = hd95(p, g, mode);
  row.asd = asd(p, g);
  return row;
}

void MetricsReport::finalize(std::size_t num_classes) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  class_dsc.assign(num_classes, 0.0);
  class_hd95.assign(num_classes, 0.0);
  class_asd.assign(num_classes, 0.0);
  std::vector<std::size_t> n_all(num_classes, 0), n_dist(num_classes, 0);
  skipped = 0;
  for (const auto& r : rows) {
    if (r.cls >= num_classes) throw ShapeError("metrics row class out of range");
    class_dsc[r.cls] += r.dsc;
    ++n_all[r.cls];
    if (r.skipped) {
      ++skipped;
      continue;
    }
    class_hd95[r.cls] += r.hd95;
    class_asd[r.cls] += r.asd;
    ++n_dist[r.cls];
  }
  double sd = 0.0, sh = 0.0, sa = 0.0;
  std::size_t cd = 0, ch = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    class_dsc[c] = n_all[c] ? class_dsc[c] / static_cast<double>(n_all[c]) : nan;
    class_hd95[c] = n_dist[c] ? class_hd95[c] / static_cast<double>(n_dist[c]) : nan;
    class_asd[c] = n_dist[c] ? class_asd[c] / static_cast<double>(n_dist[c]) : nan;
    if (n_all[c]) {
      sd += class_dsc[c];
      ++cd;
    }
    if (n_dist[c]) {
      sh += class_hd95[c];
      sa += class_asd[c];
      ++ch;
    }
  }
  mean_dsc = cd ? sd / static_cast<double>(cd) : nan;
  mean_hd95 = ch ? sh / static_cast<double>(ch) : nan;
  mean_asd = ch ? sa / static_cast<double>(ch) : nan;
}

std::string MetricsReport::to_csv() const {
  std::string out = "sample_id,class,dsc,hd95,asd,skipped\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g,%.10g,%.10g,%d\n", r.sample_id, r.cls, r.dsc,
                  r.hd95, r.asd, r.skipped ? 1 : 0);
    out += buf;
  }
  return out;
}

void MetricsReport::write_csv(const std::string& path) const { write_file(path, to_csv()); }

}  // namespace daunet
