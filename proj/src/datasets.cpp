#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "dr/data.hpp"
#include "dr/rng.hpp"

namespace dr {

Dataset make_blobs(int num_classes, std::size_t per_class, std::size_t dim,
                   double spread, std::uint64_t seed) {
  if (num_classes < 1 || per_class < 1 || dim < 2 || !(spread > 0))
    throw ContractError("make_blobs: need classes/per_class >= 1, dim >= 2, "
                        "spread > 0");
  const std::size_t n = static_cast<std::size_t>(num_classes) * per_class;
  Dataset ds;
  ds.name = "blobs";
  ds.num_classes = num_classes;
  ds.images = Tensor<float>({n, dim});
  ds.labels.resize(n);
  Rng rng(seed);
  std::size_t row = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double ang = 2.0 * M_PI * c / num_classes;
    const double cx = std::cos(ang), cy = std::sin(ang);
    for (std::size_t k = 0; k < per_class; ++k, ++row) {
      float* p = ds.images.data() + row * dim;
      p[0] = static_cast<float>(cx + spread * rng.normal());
      p[1] = static_cast<float>(cy + spread * rng.normal());
      for (std::size_t j = 2; j < dim; ++j)
        p[j] = static_cast<float>(spread * rng.normal());
      ds.labels[row] = c;
    }
  }
  ds.validate();
  return ds;
}

namespace {

// Seven-segment endpoints in unit coordinates (x right, y down).
struct Seg {
  double x0, y0, x1, y1;
};
constexpr Seg kA{0.22, 0.16, 0.78, 0.16};
constexpr Seg kB{0.78, 0.16, 0.78, 0.50};
constexpr Seg kC{0.78, 0.50, 0.78, 0.84};
constexpr Seg kD{0.22, 0.84, 0.78, 0.84};
constexpr Seg kE{0.22, 0.50, 0.22, 0.84};
constexpr Seg kF{0.22, 0.16, 0.22, 0.50};
constexpr Seg kG{0.22, 0.50, 0.78, 0.50};

const std::array<std::vector<Seg>, 10> kDigitSegs = {{
    {kA, kB, kC, kD, kE, kF},      // 0
    {kB, kC},                      // 1
    {kA, kB, kG, kE, kD},          // 2
    {kA, kB, kG, kC, kD},          // 3
    {kF, kG, kB, kC},              // 4
    {kA, kF, kG, kC, kD},          // 5
    {kA, kF, kG, kE, kC, kD},      // 6
    {kA, kB, kC},                  // 7
    {kA, kB, kC, kD, kE, kF, kG},  // 8
    {kA, kB, kC, kD, kF, kG},      // 9
}};

double seg_dist(double px, double py, const Seg& s) {
  const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  const double wx = px - s.x0, wy = py - s.y0;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? (wx * vx + wy * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (s.x0 + t * vx), dy = py - (s.y0 + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset make_synth_digits(std::size_t per_class, std::size_t hw,
                          std::uint64_t seed, const std::string& name) {
  if (per_class < 1 || hw < 8)
    throw ContractError("make_synth_digits: per_class >= 1, hw >= 8");
  const std::size_t n = 10 * per_class;
  Dataset ds;
  ds.name = name;
  ds.num_classes = 10;
  ds.images = Tensor<float>({n, hw, hw});
  ds.labels.resize(n);
  Rng rng(seed);
  std::size_t row = 0;
  for (int digit = 0; digit < 10; ++digit) {
    const auto& segs = kDigitSegs[static_cast<std::size_t>(digit)];
    for (std::size_t k = 0; k < per_class; ++k, ++row) {
      const double shift_x = rng.uniform(-0.09, 0.09);
      const double shift_y = rng.uniform(-0.09, 0.09);
      const double rot = rng.uniform(-0.18, 0.18);
      const double scale = rng.uniform(0.82, 1.12);
      const double thick = rng.uniform(0.045, 0.080);
      const double intensity = rng.uniform(0.70, 1.00);
      const double slant = rng.uniform(-0.22, 0.22);
      const double cr = std::cos(rot), sr = std::sin(rot);
      float* img = ds.images.data() + row * hw * hw;
      for (std::size_t yi = 0; yi < hw; ++yi)
        for (std::size_t xi = 0; xi < hw; ++xi) {
          // map pixel center back through the sample's affine jitter
          double px = (xi + 0.5) / hw - 0.5 - shift_x;
          double py = (yi + 0.5) / hw - 0.5 - shift_y;
          double rx = (cr * px + sr * py) / scale;
          double ry = (-sr * px + cr * py) / scale;
          rx -= slant * ry;
          rx += 0.5;
          ry += 0.5;
          double best = 1e9;
          for (const Seg& s : segs) best = std::min(best, seg_dist(rx, ry, s));
          double v = intensity * std::clamp(1.6 - best / thick, 0.0, 1.0);
          v += 0.06 * rng.normal();
          img[yi * hw + xi] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      ds.labels[row] = digit;
    }
  }
  ds.validate();
  return ds;
}

Dataset downscale(const Dataset& ds, std::size_t factor) {
  if (factor < 1) throw ContractError("downscale: factor >= 1");
  if (ds.images.rank() != 3)
    throw ShapeError("downscale needs [n,H,W] images, got " +
                     shape_str(ds.images.shape()));
  const std::size_t n = ds.images.dim(0), h = ds.images.dim(1),
                    w = ds.images.dim(2);
  if (h % factor || w % factor)
    throw ShapeError("downscale: " + shape_str(ds.images.shape()) +
                     " not divisible by " + std::to_string(factor));
  const std::size_t ho = h / factor, wo = w / factor;
  Dataset out;
  out.name = ds.name;
  out.num_classes = ds.num_classes;
  out.labels = ds.labels;
  out.images = Tensor<float>({n, ho, wo});
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t x = 0; x < wo; ++x) {
        double acc = 0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx)
            acc += ds.images[(i * h + y * factor + dy) * w + x * factor + dx];
        out.images[(i * ho + y) * wo + x] = static_cast<float>(acc * inv);
      }
  return out;
}

Dataset take(const Dataset& ds, const std::vector<std::size_t>& indices) {
  const std::size_t d = ds.example_numel();
  Dataset out;
  out.name = ds.name;
  out.num_classes = ds.num_classes;
  Shape shape = ds.images.shape();
  if (shape.empty()) shape.push_back(0);
  shape[0] = indices.size();
  out.images = Tensor<float>(shape);
  out.labels.resize(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= ds.size()) throw ContractError("take: index out of range");
    std::copy_n(ds.images.data() + indices[r] * d, d, out.images.data() + r * d);
    out.labels[r] = ds.labels[indices[r]];
  }
  return out;
}

Dataset subsample_per_class(const Dataset& ds, std::size_t per_class,
                            std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[ds.labels[i]].push_back(i);
  std::vector<std::size_t> keep;
  for (auto& [cls, idx] : by_class) {
    Rng rng(derive_seed(seed, 0x5u, static_cast<std::uint64_t>(cls)));
    rng.shuffle(idx);
    const std::size_t k = std::min(per_class, idx.size());
    keep.insert(keep.end(), idx.begin(), idx.begin() + k);
  }
  std::sort(keep.begin(), keep.end());
  return take(ds, keep);
}

std::pair<Dataset, Dataset> split_fraction(const Dataset& ds, double fraction,
                                           std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw ContractError("split_fraction: fraction in [0,1)");
  Rng rng(derive_seed(seed, 0x51u));
  std::vector<std::size_t> perm = rng.permutation(ds.size());
  const std::size_t held = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> rest(perm.begin() + held, perm.end());
  std::vector<std::size_t> out(perm.begin(), perm.begin() + held);
  std::sort(rest.begin(), rest.end());
  std::sort(out.begin(), out.end());
  return {take(ds, rest), take(ds, out)};
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.example_numel() != b.example_numel() ||
      a.num_classes != b.num_classes)
    throw ShapeError("concat: incompatible datasets " +
                     shape_str(a.images.shape()) + " / " +
                     shape_str(b.images.shape()));
  Dataset out;
  out.name = a.name;
  out.num_classes = a.num_classes;
  Shape shape = a.images.shape();
  shape[0] = a.size() + b.size();
  out.images = Tensor<float>(shape);
  std::copy_n(a.images.data(), a.images.size(), out.images.data());
  std::copy_n(b.images.data(), b.images.size(),
              out.images.data() + a.images.size());
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

}  // namespace dr
