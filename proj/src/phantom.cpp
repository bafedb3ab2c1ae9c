#include "daunet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "daunet/error.hpp"
#include "daunet/io.hpp"
#include "daunet/rng.hpp"

namespace daunet {
namespace {

constexpr double kSpeckleStd = 0.25;
constexpr double kMaxZoom = 1.2;

// Largest distance of the ellipse rim from (c, c), sampled densely.
double max_extent(const Ellipse& e, double c) {
  double best = 0.0;
  const double ca = std::cos(e.angle), sa = std::sin(e.angle);
  for (int i = 0; i < 360; ++i) {
    const double t = 2.0 * std::numbers::pi * i / 360.0;
    const double u = e.ry * std::cos(t), v = e.rx * std::sin(t);
    const double y = e.cy + ca * u - sa * v;
    const double x = e.cx + sa * u + ca * v;
    best = std::max(best, std::hypot(y - c, x - c));
  }
  return best;
}

// Uniform index in [0, bound) without modulo bias.
std::size_t uniform_index(std::mt19937_64& eng, std::size_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = eng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

void check_sample(const Sample& s) {
  if (!s.image.defined() || !s.mask.defined() || s.image.rank() != 3 || s.mask.rank() != 3 ||
      s.image.dim(0) != 1 || s.image.dim(1) != s.mask.dim(1) || s.image.dim(2) != s.mask.dim(2)) {
    throw ShapeError("sample must hold a (1, H, W) image and a (C, H, W) mask");
  }
}

std::vector<std::size_t> class_counts(const Tensor& mask) {
  const std::size_t hw = mask.dim(1) * mask.dim(2);
  std::vector<std::size_t> counts(mask.dim(0), 0);
  auto m = mask.data();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < hw; ++i) counts[c] += m[c * hw + i] > 0.5;
  }
  return counts;
}

}  // namespace

void PhantomConfig::validate() const {
  if (image_size < 8 || image_size % 4 != 0) {
    throw ConfigError("data.image_size must be >= 8 and divisible by 4, got " +
                      std::to_string(image_size));
  }
  if (num_fg_classes != 1 && num_fg_classes != 2) {
    throw ConfigError("data.num_fg_classes must be 1 or 2");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("data.noise_std must be >= 0");
}

bool Ellipse::contains(double y, double x) const {
  const double dy = y - cy, dx = x - cx;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double u = ca * dy + sa * dx;
  const double v = -sa * dy + ca * dx;
  return (u * u) / (ry * ry) + (v * v) / (rx * rx) <= 1.0;
}

PhantomLayout phantom_layout(const PhantomConfig& cfg, std::size_t index) {
  cfg.validate();
  const double s = cfg.image_size;
  const double c = (s - 1.0) / 2.0;
  // Content stays inside this radius so a 1.2x zoom keeps it in frame.
  const double limit = s / 2.0 / kMaxZoom - 1.5;
  Rng rng(cfg.seed, "phantom", index);

  PhantomLayout layout;
  layout.background = rng.uniform(0.15, 0.25);
  for (int attempt = 0;; ++attempt) {
    const double shrink = attempt < 64 ? 1.0 : 0.8;
    Ellipse head;
    head.cy = c + rng.uniform(-0.06, 0.06) * s;
    head.cx = c + rng.uniform(-0.06, 0.06) * s;
    head.ry = rng.uniform(0.17, 0.27) * s * shrink;
    head.rx = rng.uniform(0.17, 0.27) * s * shrink;
    head.angle = rng.uniform(0.0, std::numbers::pi);
    std::vector<Ellipse> objects{head};
    if (cfg.num_fg_classes == 2) {
      const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double ca = std::cos(head.angle), sa = std::sin(head.angle);
      const double u = head.ry * std::cos(t), v = head.rx * std::sin(t);
      const double ry = ca * u - sa * v, rx = sa * u + ca * v;
      const double len = std::hypot(ry, rx);
      Ellipse blob;
      blob.ry = rng.uniform(0.065, 0.09) * s;
      blob.rx = rng.uniform(0.065, 0.09) * s;
      blob.angle = rng.uniform(0.0, std::numbers::pi);
      const double push = 1.0 + 0.5 * std::max(blob.ry, blob.rx) / len;
      blob.cy = head.cy + ry * push;
      blob.cx = head.cx + rx * push;
      objects.push_back(blob);
    }
    bool fits = true;
    for (const auto& e : objects) fits = fits && max_extent(e, c) <= limit;
    if (fits || attempt >= 128) {
      layout.objects = std::move(objects);
      break;
    }
  }
  layout.intensity.push_back(rng.uniform(0.5, 0.6));
  if (cfg.num_fg_classes == 2) layout.intensity.push_back(rng.uniform(0.75, 0.85));
  return layout;
}

Sample render_phantom(const PhantomConfig& cfg, const PhantomLayout& layout, std::size_t index) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(cfg.image_size);
  const std::size_t classes = layout.objects.size();
  if (layout.intensity.size() != classes) throw ConfigError("layout intensity count mismatch");
  std::vector<double> image(n * n);
  std::vector<double> mask(classes * n * n, 0.0);
  Rng noise(cfg.seed, "noise", index);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double v = layout.background;
      int label = -1;
      for (std::size_t k = 0; k < classes; ++k) {
        if (layout.objects[k].contains(static_cast<double>(y), static_cast<double>(x))) {
          label = static_cast<int>(k);
        }
      }
      if (label >= 0) {
        v = layout.intensity[label];
        mask[(label * n + y) * n + x] = 1.0;
      }
      if (cfg.speckle) v *= 1.0 + kSpeckleStd * noise.normal(0.0, 1.0);
      if (cfg.noise_std > 0.0) v += noise.normal(0.0, cfg.noise_std);
      image[y * n + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return {Tensor::from_data({1, n, n}, std::move(image)),
          Tensor::from_data({classes, n, n}, std::move(mask))};
}

Sample gen_phantom(const PhantomConfig& cfg, std::size_t index) {
  return render_phantom(cfg, phantom_layout(cfg, index), index);
}

AugmentParams draw_augment(std::uint64_t seed) {
  Rng rng(seed);
  AugmentParams p;
  p.zoom = rng.uniform(0.8, 1.2);
  p.angle_deg = rng.uniform(-15.0, 15.0);
  p.flip = rng.bernoulli(0.5);
  return p;
}

Sample apply_augment(const Sample& s, const AugmentParams& p) {
  check_sample(s);
  if (p.identity()) return {s.image.clone(), s.mask.clone()};
  const std::size_t h = s.image.dim(1), w = s.image.dim(2), classes = s.mask.dim(0);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  auto img = s.image.data();
  auto msk = s.mask.data();
  std::vector<double> out_img(h * w);
  std::vector<double> out_msk(classes * h * w, 0.0);

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double py = static_cast<double>(y) - cy;
      double px = static_cast<double>(x) - cx;
      if (p.flip) px = -px;
      const double sy = cy + (ct * py + st * px) / p.zoom;
      const double sx = cx + (-st * py + ct * px) / p.zoom;

      const double yc = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const double xc = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const std::size_t y0 = static_cast<std::size_t>(std::floor(yc));
      const std::size_t x0 = static_cast<std::size_t>(std::floor(xc));
      const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double fy = yc - static_cast<double>(y0), fx = xc - static_cast<double>(x0);
      out_img[y * w + x] = (1 - fy) * ((1 - fx) * img[y0 * w + x0] + fx * img[y0 * w + x1]) +
                           fy * ((1 - fx) * img[y1 * w + x0] + fx * img[y1 * w + x1]);

      const long ny = std::lround(sy), nx = std::lround(sx);
      if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
      for (std::size_t c = 0; c < classes; ++c) {
        out_msk[(c * h + y) * w + x] = msk[(c * h + ny) * w + nx];
      }
    }
  }
  Sample out{Tensor::from_data({1, h, w}, std::move(out_img)),
             Tensor::from_data({classes, h, w}, std::move(out_msk))};
  const auto before = class_counts(s.mask);
  const auto after = class_counts(out.mask);
  for (std::size_t c = 0; c < classes; ++c) {
    if (before[c] > 0 && after[c] == 0) {
      throw Error("augmentation erased class " + std::to_string(c + 1));
    }
  }
  return out;
}

Sample augment(const Sample& s, std::uint64_t seed) { return apply_augment(s, draw_augment(seed)); }

std::string to_string(Quadrant q) {
  switch (q) {
    case Quadrant::kTopLeft: return "TL";
    case Quadrant::kTopRight: return "TR";
    case Quadrant::kBottomLeft: return "BL";
    case Quadrant::kBottomRight: return "BR";
  }
  return "?";
}

Quadrant parse_quadrant(const std::string& s) {
  for (Quadrant q : kAllQuadrants) {
    if (to_string(q) == s) return q;
  }
  throw ConfigError("quadrant must be TL, TR, BL or BR, got '" + s + "'");
}

Tensor quadrant_mask(const Tensor& image, Quadrant q) {
  if (image.rank() < 2) throw ShapeError("quadrant_mask: rank >= 2 required");
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("quadrant_mask: H and W must be even, got " + shape_str(image.shape()));
  }
  const bool bottom = q == Quadrant::kBottomLeft || q == Quadrant::kBottomRight;
  const bool right = q == Quadrant::kTopRight || q == Quadrant::kBottomRight;
  const std::size_t ys = bottom ? h / 2 : 0, xs = right ? w / 2 : 0;
  Tensor out = image.detach().clone();
  auto d = out.mutable_data();
  const std::size_t planes = d.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = ys; y < ys + h / 2; ++y) {
      std::fill_n(d.begin() + static_cast<std::ptrdiff_t>((p * h + y) * w + xs), w / 2, 0.0);
    }
  }
  return out;
}

Splits make_splits(IndexRange train, IndexRange val, IndexRange test) {
  const IndexRange ranges[] = {train, val, test};
  const char* names[] = {"train", "val", "test"};
  for (int i = 0; i < 3; ++i) {
    if (ranges[i].count == 0) throw ConfigError(std::string(names[i]) + " split is empty");
    for (int j = 0; j < i; ++j) {
      const bool disjoint = ranges[i].start + ranges[i].count <= ranges[j].start ||
                            ranges[j].start + ranges[j].count <= ranges[i].start;
      if (!disjoint) {
        throw ConfigError(std::string(names[j]) + " and " + names[i] + " splits overlap");
      }
    }
  }
  auto expand = [](IndexRange r) {
    std::vector<std::size_t> v(r.count);
    for (std::size_t i = 0; i < r.count; ++i) v[i] = r.start + i;
    return v;
  };
  return {expand(train), expand(val), expand(test)};
}

Splits make_splits(std::size_t n_train, std::size_t n_val, std::size_t n_test) {
  return make_splits({0, n_train}, {n_train, n_val}, {n_train + n_val, n_test});
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed, "shuffle", epoch);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(rng.engine(), i)]);
  }
  return order;
}

Batch make_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw ShapeError("make_batch: no samples");
  for (const auto& s : samples) check_sample(s);
  const Shape is = samples[0].image.shape(), ms = samples[0].mask.shape();
  std::vector<double> images, masks;
  images.reserve(samples.size() * numel(is));
  masks.reserve(samples.size() * numel(ms));
  for (const auto& s : samples) {
    if (s.image.shape() != is || s.mask.shape() != ms) {
      throw ShapeError("make_batch: samples differ in shape");
    }
    images.insert(images.end(), s.image.data().begin(), s.image.data().end());
    masks.insert(masks.end(), s.mask.data().begin(), s.mask.data().end());
  }
  const std::size_t n = samples.size();
  return {Tensor::from_data({n, is[0], is[1], is[2]}, std::move(images)),
          Tensor::from_data({n, ms[0], ms[1], ms[2]}, std::move(masks))};
}

Batch make_batch(const std::vector<Sample>& pool, std::span<const std::size_t> positions) {
  std::vector<Sample> picked;
  picked.reserve(positions.size());
  for (std::size_t p : positions) {
    if (p >= pool.size()) throw ShapeError("make_batch: position out of range");
    picked.push_back(pool[p]);
  }
  return make_batch(std::span<const Sample>(picked));
}

std::vector<Sample> gen_phantoms(const PhantomConfig& cfg, std::span<const std::size_t> indices) {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(gen_phantom(cfg, i));
  return out;
}

std::vector<std::string> export_sample(const Sample& s, const std::string& prefix) {
  check_sample(s);
  const std::size_t h = s.image.dim(1), w = s.image.dim(2);
  std::vector<std::string> files;
  files.push_back(prefix + "_image.pgm");
  write_pgm(files.back(), w, h, to_gray(s.image.data().data(), h * w));
  auto m = s.mask.data();
  for (std::size_t c = 0; c < s.mask.dim(0); ++c) {
    std::vector<std::uint8_t> px(h * w);
    for (std::size_t i = 0; i < h * w; ++i) px[i] = m[c * h * w + i] > 0.5 ? 255 : 0;
    files.push_back(prefix + "_mask" + std::to_string(c + 1) + ".pgm");
    write_pgm(files.back(), w, h, px);
  }
  return files;
}

}  // namespace daunet
